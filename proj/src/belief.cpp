#include "fidelity/belief.hpp"

#include <algorithm>
#include <cmath>

namespace fidelity {

BeliefGrid::BeliefGrid(double step) {
    if (!(step > 0 && step <= 1)) throw InvalidArgument("belief grid step must lie in (0, 1]");
    const double n = 1.0 / step;
    intervals_ = std::lround(n);
    if (std::abs(n - static_cast<double>(intervals_)) > 1e-9 * n)
        throw InvalidArgument("belief grid step must divide 1 evenly");
}

std::size_t BeliefGrid::snap_index(double b_high) const {
    const double x = std::clamp(b_high, 0.0, 1.0) * static_cast<double>(intervals_);
    return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

bool BeliefGrid::on_grid(double b_high) const {
    return b_high >= 0 && b_high <= 1 && std::abs(snap(b_high) - b_high) < 1e-12;
}

BeliefUpdate belief_update(const WorkloadModel& model, const DiscreteObservationTable& table, const Eigen::VectorXd& belief,
                           ActionId a, const DiscreteObservation& o, const BeliefGrid& grid) {
    if (model.num_states() != 2) throw InvalidArgument("grid beliefs require a two-state workload model");
    BeliefUpdate out;
    if (a == ActionId::D) {
        out.exact = belief;
    } else {
        out.exact = bayes_update(model.transition[index_of(a)], table.likelihood(a, o), belief);
    }
    out.snapped_index = grid.snap_index(out.exact(1));
    out.snapped = grid.value(out.snapped_index);
    return out;
}

Eigen::VectorXd belief_transition(const WorkloadModel& model, const DiscreteObservationTable& table,
                                  const BeliefGrid& grid, std::size_t index, ActionId a) {
    if (model.num_states() != 2) throw InvalidArgument("grid beliefs require a two-state workload model");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
    if (a == ActionId::D) {
        out(static_cast<Eigen::Index>(index)) = 1.0;
        return out;
    }
    const Eigen::Vector2d predicted = model.transition[index_of(a)].transpose() * belief_vector(grid.value(index));
    for (const auto& e : table.entries(a)) {
        const Eigen::Vector2d joint = e.likelihood.cwiseProduct(predicted);
        const double evidence = joint.sum();
        if (!(evidence > 0)) continue;
        out(static_cast<Eigen::Index>(grid.snap_index(joint(1) / evidence))) += evidence;
    }
    return out;
}

TrackedBelief track_belief(const WorkloadModel& model, const DiscreteObservationTable& table, const BeliefGrid& grid,
                           double b_high, ActionId a, const std::optional<ObservationTriple>& raw) {
    TrackedBelief out;
    const Eigen::VectorXd b = belief_vector(b_high);
    if (a == ActionId::D || !raw) {
        out.b_high = grid.snap(b_high);
        return out;
    }
    out.observed = table.bin(a, *raw);
    try {
        out.b_high = belief_update(model, table, b, a, out.observed, grid).snapped;
    } catch (const ImpossibleEvidence&) {
        const Eigen::VectorXd predicted = model.transition[index_of(a)].transpose() * b;
        out.b_high = grid.snap(predicted(1));
        out.evidence_discarded = true;
    }
    return out;
}

} // namespace fidelity

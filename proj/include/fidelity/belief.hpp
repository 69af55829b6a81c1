#pragma once

#include "fidelity/discretize.hpp"

#include <optional>

namespace fidelity {

/// Uniform grid {0, step, ..., 1} over the high-workload belief b_H.
class BeliefGrid {
  public:
    explicit BeliefGrid(double step = 0.1);

    double step() const { return 1.0 / static_cast<double>(intervals_); }
    std::size_t size() const { return static_cast<std::size_t>(intervals_) + 1; }
    double value(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(intervals_); }
    /// Nearest grid index; an exact midpoint rounds up toward higher b_H.
    std::size_t snap_index(double b_high) const;
    double snap(double b_high) const { return value(snap_index(b_high)); }
    bool on_grid(double b_high) const;

    friend bool operator==(const BeliefGrid& a, const BeliefGrid& b) { return a.intervals_ == b.intervals_; }

  private:
    long intervals_;
};

/// Two-state belief vector (1 - b_H, b_H).
inline Eigen::Vector2d belief_vector(double b_high) { return {1.0 - b_high, b_high}; }

/// Bayes filter step: posterior proportional to likelihood .* (T^T b). Returns the
/// normalizing constant p(o | b, a) through `evidence` when requested.
template <typename TransitionDerived, typename LikelihoodDerived, typename BeliefDerived>
Eigen::Matrix<typename BeliefDerived::Scalar, Eigen::Dynamic, 1>
bayes_update(const Eigen::MatrixBase<TransitionDerived>& transition, const Eigen::MatrixBase<LikelihoodDerived>& likelihood,
             const Eigen::MatrixBase<BeliefDerived>& belief, typename BeliefDerived::Scalar* evidence = nullptr) {
    using Scalar = typename BeliefDerived::Scalar;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> joint =
        likelihood.cwiseProduct(transition.transpose() * belief);
    const Scalar norm = joint.sum();
    if (evidence) *evidence = norm;
    if (!(norm > Scalar(0))) throw ImpossibleEvidence("observation has zero probability under the current belief");
    return joint / norm;
}

struct BeliefUpdate {
    Eigen::VectorXd exact;
    std::size_t snapped_index = 0;
    double snapped = 0;
};

/// Belief update on a discrete observation, then projection of b_H onto the grid.
/// Delegation leaves the belief unchanged.
BeliefUpdate belief_update(const WorkloadModel& model, const DiscreteObservationTable& table, const Eigen::VectorXd& belief,
                           ActionId a, const DiscreteObservation& o, const BeliefGrid& grid);

/// Distribution over grid indices of the next snapped belief from grid point `index`.
Eigen::VectorXd belief_transition(const WorkloadModel& model, const DiscreteObservationTable& table,
                                  const BeliefGrid& grid, std::size_t index, ActionId a);

struct TrackedBelief {
    double b_high = 0;
    DiscreteObservation observed{};
    /// The binned observation was impossible under the model; only the transition was applied.
    bool evidence_discarded = false;
};

/// Online tracker shared by the simulator and the session service: bins a raw observation,
/// updates from the grid belief, and snaps. Falls back to the pure transition prediction
/// when the binned evidence has zero probability.
TrackedBelief track_belief(const WorkloadModel& model, const DiscreteObservationTable& table, const BeliefGrid& grid,
                           double b_high, ActionId a, const std::optional<ObservationTriple>& raw);

} // namespace fidelity

#include "fidelity/filter.hpp"
#include "fidelity/workload_model.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace fidelity {

ChannelRange channel_range(std::size_t ch) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (ch == 0) return {0.0, 1.0};
    return {0.0, inf};
}

namespace {

void check_stochastic_vector(const Eigen::VectorXd& v, double tol, const std::string& what) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!(v(i) >= 0.0 && v(i) <= 1.0)) throw InvalidArgument(what + " has an entry outside [0,1]");
    if (std::abs(v.sum() - 1.0) > tol) throw InvalidArgument(what + " does not sum to 1");
}

} // namespace

void validate(const WorkloadModel& model, double tol) {
    const Eigen::Index k = model.num_states();
    if (k < 1) throw InvalidArgument("model needs at least one state");
    check_stochastic_vector(model.initial, tol, "initial distribution");
    for (ActionId a : kServicingActions) {
        const auto& t = model.transition[index_of(a)];
        if (t.rows() != k || t.cols() != k) throw InvalidArgument("transition matrix has wrong shape");
        for (Eigen::Index w = 0; w < k; ++w)
            check_stochastic_vector(t.row(w).transpose(), tol,
                                    "transition row " + std::to_string(w) + " under " + std::string(to_string(a)));
        const auto& em = model.emissions[index_of(a)];
        if (static_cast<Eigen::Index>(em.size()) != k) throw InvalidArgument("emission table has wrong size");
        for (const auto& set : em)
            for (const auto& ch : set) {
                if (ch.kind == ChannelKind::Gaussian && !(ch.std > 0.0 && std::isfinite(ch.mean)))
                    throw InvalidArgument("gaussian channel needs finite mean and positive std");
                if (ch.kind == ChannelKind::PointMass && !std::isfinite(ch.point))
                    throw InvalidArgument("point-mass channel needs a finite point");
            }
    }
}

WorkloadModel permute_states(const WorkloadModel& model, const std::vector<Eigen::Index>& perm) {
    const Eigen::Index k = model.num_states();
    if (static_cast<Eigen::Index>(perm.size()) != k) throw InvalidArgument("permutation has wrong size");
    WorkloadModel out = model;
    for (Eigen::Index i = 0; i < k; ++i) {
        out.initial(i) = model.initial(perm[i]);
        for (std::size_t a = 0; a < 2; ++a) {
            out.emissions[a][i] = model.emissions[a][perm[i]];
            for (Eigen::Index j = 0; j < k; ++j) out.transition[a](i, j) = model.transition[a](perm[i], perm[j]);
        }
    }
    return out;
}

void validate(const TaskTrace& trace) {
    if (trace.steps.empty()) throw InvalidArgument("trace '" + trace.session_id + "' is empty");
    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        const auto& s = trace.steps[t];
        if (s.action != ActionId::D && !s.observation)
            throw InvalidArgument("servicing step " + std::to_string(t) + " lacks an observation");
    }
}

} // namespace fidelity

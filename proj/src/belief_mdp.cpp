#include "fidelity/belief_mdp.hpp"

#include <cmath>

namespace fidelity {

namespace {

double poisson_pmf(int k, double mean) {
    if (mean <= 0) return k == 0 ? 1.0 : 0.0;
    return std::exp(-mean + k * std::log(mean) - std::lgamma(k + 1.0));
}

/// Distribution of min(base + A, L) for A ~ Poisson(mean).
Eigen::VectorXd shifted_poisson(int base, int max_length, double mean) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(max_length + 1);
    double below = 0;
    for (int j = base; j < max_length; ++j) {
        out(j) = poisson_pmf(j - base, mean);
        below += out(j);
    }
    out(max_length) = std::max(0.0, 1.0 - below);
    return out;
}

} // namespace

void validate(const QueueParams& p) {
    if (!(p.arrival_rate > 0)) throw InvalidArgument("arrival rate must be positive");
    if (p.max_length < 1) throw InvalidArgument("maximum queue length must be at least 1");
    if (!(p.t_normal > 0 && p.t_normal < p.t_high)) throw InvalidArgument("need 0 < t_N < t_H");
    if (p.t_delegate != 0) throw InvalidArgument("delegation takes no time");
}

void validate(const RewardWeights& w) {
    if (!(w.alpha1 > 0 && w.alpha2 > 0 && w.alpha3 > 0)) throw InvalidArgument("reward weights must be positive");
    if (!(w.delegation_accuracy >= 0 && w.delegation_accuracy <= 1))
        throw InvalidArgument("delegation accuracy must lie in [0, 1]");
}

Eigen::VectorXd queue_transition(const QueueParams& params, int q, ActionId a) {
    if (q < 1) throw InvalidArgument("no task in the queue to service or delegate");
    if (q > params.max_length) throw InvalidArgument("queue length exceeds the maximum");
    return shifted_poisson(q - 1, params.max_length, params.arrival_rate * params.duration(a));
}

Eigen::VectorXd wait_transition(const QueueParams& params) {
    return shifted_poisson(0, params.max_length, params.arrival_rate * params.wait_duration());
}

double realized_reward(const RewardWeights& w, int q, ActionId a, const std::optional<ObservationTriple>& o) {
    if (a == ActionId::D) return w.alpha1 * w.delegation_accuracy - w.alpha3 * (q - 1);
    if (!o) throw InvalidArgument("servicing reward needs an observation");
    return w.alpha1 * o->o1 - w.alpha2 * o->o2 - w.alpha3 * q;
}

double expected_reward(const RewardWeights& w, const DiscreteObservationTable& table, int q,
                       const Eigen::VectorXd& belief, ActionId a) {
    if (a == ActionId::D) return w.alpha1 * w.delegation_accuracy - w.alpha3 * (q - 1);
    const Eigen::VectorXd per_state =
        w.alpha1 * table.channel(a, 0).means() - w.alpha2 * table.channel(a, 1).means();
    return belief.dot(per_state) - w.alpha3 * q;
}

FiniteMdp FiniteMdp::permuted(const std::vector<Eigen::Index>& perm) const {
    const Eigen::Index n = num_states();
    std::vector<Eigen::Index> inverse(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;
    FiniteMdp out;
    out.reward.resize(n, num_actions());
    out.feasible.resize(n, num_actions());
    for (Eigen::Index i = 0; i < n; ++i) {
        out.reward.row(i) = reward.row(perm[static_cast<std::size_t>(i)]);
        out.feasible.row(i) = feasible.row(perm[static_cast<std::size_t>(i)]);
    }
    for (const auto& t : transition) {
        std::vector<Eigen::Triplet<double>> trips;
        for (Eigen::Index i = 0; i < n; ++i)
            for (SparseRowMatrix::InnerIterator it(t, perm[static_cast<std::size_t>(i)]); it; ++it)
                trips.emplace_back(i, inverse[static_cast<std::size_t>(it.col())], it.value());
        SparseRowMatrix m(n, n);
        m.setFromTriplets(trips.begin(), trips.end());
        out.transition.push_back(std::move(m));
    }
    return out;
}

BeliefMdp build_belief_mdp(const WorkloadModel& model, const DiscreteObservationTable& table, const QueueParams& params,
                           const RewardWeights& weights, const BeliefGrid& grid, ActionSet action_set) {
    if (model.num_states() != 2) throw InvalidArgument("the belief MDP requires a two-state workload model");
    validate(params);
    validate(weights);
    BeliefMdp out{grid, params.max_length, action_set, {}};
    const auto g = grid.size();
    const Eigen::Index n = static_cast<Eigen::Index>(params.max_length + 1) * static_cast<Eigen::Index>(g);
    auto& mdp = out.mdp;
    mdp.reward = Eigen::MatrixXd::Zero(n, kNumMdpActions);
    mdp.feasible = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, kNumMdpActions, false);
    std::array<std::vector<Eigen::Triplet<double>>, kNumMdpActions> trips;

    std::array<std::vector<Eigen::VectorXd>, 3> belief_kernels;
    for (ActionId a : actions_of(action_set))
        for (std::size_t b = 0; b < g; ++b)
            belief_kernels[index_of(a)].push_back(belief_transition(model, table, grid, b, a));

    const Eigen::VectorXd idle = wait_transition(params);
    for (int q = 0; q <= params.max_length; ++q) {
        for (std::size_t b = 0; b < g; ++b) {
            const Eigen::Index s = out.state_index(q, b);
            if (q == 0) {
                const int col = static_cast<int>(MdpAction::Wait);
                mdp.feasible(s, col) = true;
                for (int q2 = 0; q2 <= params.max_length; ++q2)
                    if (idle(q2) > 0) trips[col].emplace_back(s, out.state_index(q2, b), idle(q2));
                continue;
            }
            for (ActionId a : actions_of(action_set)) {
                const int col = static_cast<int>(index_of(a));
                mdp.feasible(s, col) = true;
                mdp.reward(s, col) = expected_reward(weights, table, q, grid.value(b), a);
                const Eigen::VectorXd qk = queue_transition(params, q, a);
                const Eigen::VectorXd& bk = belief_kernels[index_of(a)][b];
                for (int q2 = 0; q2 <= params.max_length; ++q2) {
                    if (!(qk(q2) > 0)) continue;
                    for (std::size_t b2 = 0; b2 < g; ++b2) {
                        const double p = qk(q2) * bk(static_cast<Eigen::Index>(b2));
                        if (p > 0) trips[col].emplace_back(s, out.state_index(q2, b2), p);
                    }
                }
            }
        }
    }
    for (int col = 0; col < kNumMdpActions; ++col) {
        SparseRowMatrix m(n, n);
        m.setFromTriplets(trips[col].begin(), trips[col].end());
        mdp.transition.push_back(std::move(m));
    }
    return out;
}

} // namespace fidelity

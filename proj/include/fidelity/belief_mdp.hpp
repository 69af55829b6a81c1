#pragma once

#include "fidelity/belief.hpp"

#include <Eigen/SparseCore>

#include <vector>

namespace fidelity {

struct QueueParams {
    /// Tasks per second.
    double arrival_rate = 1.0 / 12.0;
    int max_length = 10;
    double t_high = 10.0;
    double t_normal = 10.0 / 3.0;
    double t_delegate = 0.0;

    double duration(ActionId a) const {
        return a == ActionId::N ? t_normal : (a == ActionId::H ? t_high : t_delegate);
    }
    /// Length of an idle epoch at an empty queue.
    double wait_duration() const { return t_normal; }
};

/// Throws InvalidArgument on lambda <= 0, L < 1, t_N >= t_H, or t_D != 0.
void validate(const QueueParams& params);

struct RewardWeights {
    double alpha1 = 100.0;
    double alpha2 = 30.0;
    double alpha3 = 2.0;
    double delegation_accuracy = 0.30;
};

void validate(const RewardWeights& weights);

/// p(q' | q, a) over 0..L with arrivals beyond L lumped onto L.
Eigen::VectorXd queue_transition(const QueueParams& params, int q, ActionId a);
/// Arrivals-only kernel of an idle epoch at q = 0.
Eigen::VectorXd wait_transition(const QueueParams& params);

/// Immediate reward of the realized outcome of one task.
double realized_reward(const RewardWeights& weights, int q, ActionId a, const std::optional<ObservationTriple>& o);

/// Expected reward at (q, belief) under the discretized observation model.
double expected_reward(const RewardWeights& weights, const DiscreteObservationTable& table, int q,
                       const Eigen::VectorXd& belief, ActionId a);
inline double expected_reward(const RewardWeights& weights, const DiscreteObservationTable& table, int q,
                              double b_high, ActionId a) {
    return expected_reward(weights, table, q, Eigen::VectorXd(belief_vector(b_high)), a);
}

/// Column index of the MDP action; Wait is the idle pseudo-action at an empty queue.
enum class MdpAction { N = 0, H = 1, D = 2, Wait = 3 };
inline constexpr int kNumMdpActions = 4;

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Finite MDP with infeasible (state, action) pairs masked out.
struct FiniteMdp {
    std::vector<SparseRowMatrix> transition; // one S x S kernel per action
    Eigen::MatrixXd reward;                  // S x A
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> feasible;

    Eigen::Index num_states() const { return reward.rows(); }
    Eigen::Index num_actions() const { return reward.cols(); }

    /// Relabels states: new state i is old state perm[i].
    FiniteMdp permuted(const std::vector<Eigen::Index>& perm) const;
};

enum class ActionSet { Servicing = 2, WithDelegation = 3 };

inline std::vector<ActionId> actions_of(ActionSet set) {
    if (set == ActionSet::Servicing) return {ActionId::N, ActionId::H};
    return {ActionId::N, ActionId::H, ActionId::D};
}

/// Belief MDP over (q, b_H) with state index q * grid.size() + b_index.
struct BeliefMdp {
    BeliefGrid grid;
    int max_queue = 0;
    ActionSet action_set = ActionSet::Servicing;
    FiniteMdp mdp;

    Eigen::Index state_index(int q, std::size_t b_index) const {
        return static_cast<Eigen::Index>(q) * static_cast<Eigen::Index>(grid.size()) + static_cast<Eigen::Index>(b_index);
    }
    int queue_of(Eigen::Index s) const { return static_cast<int>(s / static_cast<Eigen::Index>(grid.size())); }
    std::size_t belief_of(Eigen::Index s) const { return static_cast<std::size_t>(s % static_cast<Eigen::Index>(grid.size())); }
};

/// Requires a two-state workload model.
BeliefMdp build_belief_mdp(const WorkloadModel& model, const DiscreteObservationTable& table, const QueueParams& params,
                           const RewardWeights& weights, const BeliefGrid& grid, ActionSet action_set);

} // namespace fidelity

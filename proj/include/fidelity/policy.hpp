#pragma once

#include "fidelity/belief_mdp.hpp"

#include <string>
#include <vector>

namespace fidelity {

struct ValueIterationResult {
    Eigen::VectorXd value;
    /// Greedy action column per state.
    std::vector<int> policy;
    int iterations = 0;
    /// Sup-norm change of each sweep; shrinks by at least gamma per sweep.
    std::vector<double> residuals;
    bool converged = false;
};

/// Synchronous Bellman backups until the sup-norm change drops below tol. Each backup sums
/// its successor terms in sorted order, so the result does not depend on state numbering.
/// The greedy policy breaks exact ties toward the lowest action column (N < H < D).
ValueIterationResult value_iteration(const FiniteMdp& mdp, double gamma, double tol = 1e-6, int max_iters = 100000);

/// Solved fidelity-selection policy over (q, b_H). Entries at q = 0 hold no action (idle).
struct PolicyTable {
    BeliefGrid grid;
    int max_queue = 0;
    ActionSet action_set = ActionSet::Servicing;
    double gamma = 0.95;
    /// action[q][b_index]; meaningless at q = 0.
    std::vector<std::vector<ActionId>> action;
    std::vector<std::vector<double>> value;

    ActionId at(int q, double b_high) const;
    bool feasible() const;
};

PolicyTable make_policy_table(const BeliefMdp& mdp, const ValueIterationResult& solution, double gamma);

/// Solve end to end: discretize, build, and run value iteration.
struct SolveOptions {
    QueueParams queue{};
    RewardWeights reward{};
    double grid_step = 0.1;
    ActionSet action_set = ActionSet::Servicing;
    double gamma = 0.95;
    double tol = 1e-6;
    ChannelSteps steps{};
};

struct SolveResult {
    PolicyTable policy;
    ValueIterationResult solution;
};

SolveResult solve_policy(const WorkloadModel& model, const SolveOptions& options = {});

/// Per-queue-length summary of the action regions along b_H.
struct QueueRowStructure {
    int q = 0;
    /// Smallest b_H at which each action occurs, or a negative value when absent.
    std::array<double, 3> region_start{-1.0, -1.0, -1.0};
    std::array<int, 3> count{0, 0, 0};
    /// The H region is an up-set in b_H: N never appears above an H cell. D above H is allowed.
    bool high_upset = true;
    /// The non-N region is an up-set in b_H.
    bool servicing_threshold = true;
};

struct PolicyStructure {
    std::vector<QueueRowStructure> rows; // q = 1..L
    bool high_upset_all = true;
    /// Number of H cells per q is nonincreasing in q.
    bool high_shrinks_with_queue = true;
    bool has_delegation = false;
    /// Minimum b_H and q over the D region; negative when D is absent.
    double delegation_min_belief = -1.0;
    int delegation_min_queue = -1;
    /// D occupies only cells with b_H >= 0.9 and q >= L / 2.
    bool delegation_in_corner = true;
};

PolicyStructure policy_structure_report(const PolicyTable& policy);
std::string format_structure(const PolicyTable& policy, const PolicyStructure& s);

} // namespace fidelity

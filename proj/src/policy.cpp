#include "fidelity/policy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fidelity {

namespace {

/// gamma-discounted successor value of (s, a), summed smallest term first.
double backup(const SparseRowMatrix& t, Eigen::Index s, const Eigen::VectorXd& value, std::vector<double>& terms) {
    terms.clear();
    for (SparseRowMatrix::InnerIterator it(t, s); it; ++it) terms.push_back(it.value() * value(it.col()));
    std::sort(terms.begin(), terms.end());
    double sum = 0;
    for (double x : terms) sum += x;
    return sum;
}

} // namespace

ValueIterationResult value_iteration(const FiniteMdp& mdp, double gamma, double tol, int max_iters) {
    if (!(gamma >= 0 && gamma < 1)) throw InvalidArgument("discount factor must lie in [0, 1)");
    if (!(tol > 0)) throw InvalidArgument("tolerance must be positive");
    const Eigen::Index n = mdp.num_states();
    const Eigen::Index m = mdp.num_actions();
    ValueIterationResult out;
    Eigen::VectorXd value = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd next(n);
    std::vector<double> terms;

    auto q_value = [&](Eigen::Index s, Eigen::Index a, const Eigen::VectorXd& v) {
        return mdp.reward(s, a) + gamma * backup(mdp.transition[static_cast<std::size_t>(a)], s, v, terms);
    };

    for (int iter = 0; iter < max_iters; ++iter) {
        for (Eigen::Index s = 0; s < n; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (Eigen::Index a = 0; a < m; ++a)
                if (mdp.feasible(s, a)) best = std::max(best, q_value(s, a, value));
            next(s) = best;
        }
        const double residual = (next - value).cwiseAbs().maxCoeff();
        value.swap(next);
        out.residuals.push_back(residual);
        out.iterations = iter + 1;
        if (residual < tol) {
            out.converged = true;
            break;
        }
    }

    out.policy.assign(static_cast<std::size_t>(n), -1);
    for (Eigen::Index s = 0; s < n; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index a = 0; a < m; ++a) {
            if (!mdp.feasible(s, a)) continue;
            const double q = q_value(s, a, value);
            if (q > best) {
                best = q;
                out.policy[static_cast<std::size_t>(s)] = static_cast<int>(a);
            }
        }
    }
    out.value = std::move(value);
    return out;
}

ActionId PolicyTable::at(int q, double b_high) const {
    if (q < 1 || q > max_queue) throw InvalidArgument("queue length outside the policy table");
    return action[static_cast<std::size_t>(q)][grid.snap_index(b_high)];
}

bool PolicyTable::feasible() const {
    const auto allowed = actions_of(action_set);
    for (int q = 1; q <= max_queue; ++q)
        for (ActionId a : action[static_cast<std::size_t>(q)])
            if (std::find(allowed.begin(), allowed.end(), a) == allowed.end()) return false;
    return true;
}

PolicyTable make_policy_table(const BeliefMdp& mdp, const ValueIterationResult& solution, double gamma) {
    PolicyTable table{mdp.grid, mdp.max_queue, mdp.action_set, gamma, {}, {}};
    const std::size_t g = mdp.grid.size();
    table.action.assign(static_cast<std::size_t>(mdp.max_queue + 1), std::vector<ActionId>(g, ActionId::N));
    table.value.assign(static_cast<std::size_t>(mdp.max_queue + 1), std::vector<double>(g, 0.0));
    for (int q = 0; q <= mdp.max_queue; ++q)
        for (std::size_t b = 0; b < g; ++b) {
            const Eigen::Index s = mdp.state_index(q, b);
            table.value[static_cast<std::size_t>(q)][b] = solution.value(s);
            const int col = solution.policy[static_cast<std::size_t>(s)];
            if (q > 0) table.action[static_cast<std::size_t>(q)][b] = static_cast<ActionId>(col);
        }
    return table;
}

SolveResult solve_policy(const WorkloadModel& model, const SolveOptions& options) {
    validate(model);
    const BeliefGrid grid(options.grid_step);
    const auto table = discretize_observations(model, options.steps);
    const auto mdp = build_belief_mdp(model, table, options.queue, options.reward, grid, options.action_set);
    SolveResult out;
    out.solution = value_iteration(mdp.mdp, options.gamma, options.tol);
    out.policy = make_policy_table(mdp, out.solution, options.gamma);
    return out;
}

PolicyStructure policy_structure_report(const PolicyTable& policy) {
    PolicyStructure s;
    const std::size_t g = policy.grid.size();
    int previous_high = std::numeric_limits<int>::max();
    for (int q = 1; q <= policy.max_queue; ++q) {
        QueueRowStructure row;
        row.q = q;
        bool seen_high = false, seen_not_normal = false;
        for (std::size_t b = 0; b < g; ++b) {
            const ActionId a = policy.action[static_cast<std::size_t>(q)][b];
            const std::size_t ai = index_of(a);
            if (row.count[ai]++ == 0) row.region_start[ai] = policy.grid.value(b);
            if (a == ActionId::H) seen_high = true;
            else if (seen_high && a == ActionId::N) row.high_upset = false;
            if (a != ActionId::N) seen_not_normal = true;
            else if (seen_not_normal) row.servicing_threshold = false;
            if (a == ActionId::D) {
                const double bh = policy.grid.value(b);
                if (!s.has_delegation || bh < s.delegation_min_belief) s.delegation_min_belief = bh;
                if (!s.has_delegation || q < s.delegation_min_queue) s.delegation_min_queue = q;
                s.has_delegation = true;
                if (bh < 0.9 - 1e-12 || 2 * q < policy.max_queue) s.delegation_in_corner = false;
            }
        }
        s.high_upset_all = s.high_upset_all && row.high_upset;
        const int high = row.count[index_of(ActionId::H)];
        if (high > previous_high) s.high_shrinks_with_queue = false;
        previous_high = high;
        s.rows.push_back(row);
    }
    return s;
}

std::string format_structure(const PolicyTable& policy, const PolicyStructure& s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "policy structure: L=" << policy.max_queue << " grid_step=" << policy.grid.step()
       << " actions=" << static_cast<int>(policy.action_set) << " gamma=" << policy.gamma << "\n";
    for (const auto& row : s.rows) {
        os << "q=" << std::setw(2) << row.q << "  ";
        for (std::size_t b = 0; b < policy.grid.size(); ++b)
            os << to_string(policy.action[static_cast<std::size_t>(row.q)][b]);
        for (ActionId a : kAllActions) {
            const auto i = index_of(a);
            os << "  " << to_string(a) << "@";
            if (row.count[i] > 0) os << row.region_start[i];
            else os << "-";
        }
        os << "  H-upset=" << (row.high_upset ? "yes" : "no") << "\n";
    }
    os << "H region up-set in b_H for every q: " << (s.high_upset_all ? "yes" : "no") << "\n";
    os << "H region shrinks as q grows: " << (s.high_shrinks_with_queue ? "yes" : "no") << "\n";
    if (s.has_delegation)
        os << "D region: b_H >= " << s.delegation_min_belief << ", q >= " << s.delegation_min_queue
           << ", confined to high-belief/high-queue corner: " << (s.delegation_in_corner ? "yes" : "no") << "\n";
    else
        os << "D region: empty\n";
    return os.str();
}

} // namespace fidelity

#include "oracles.hpp"

#include "fidelity/io.hpp"
#include "fidelity/policy.hpp"
#include "fidelity/presets.hpp"

#include <doctest.h>

using namespace fidelity;

namespace {

FiniteMdp random_mdp(int n, int actions, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    FiniteMdp m;
    m.reward = Eigen::MatrixXd::Zero(n, actions);
    m.feasible = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, actions, true);
    for (int a = 0; a < actions; ++a) {
        Eigen::MatrixXd P = oracle::random_stochastic(n, rng);
        for (int s = 0; s < n; ++s) m.reward(s, a) = 10 * u(rng);
        // The last action is unavailable in every third state.
        if (a == actions - 1)
            for (int s = 0; s < n; s += 3) {
                m.feasible(s, a) = false;
                m.reward(s, a) = 0;
                P.row(s).setZero();
            }
        m.transition.push_back(P.sparseView());
    }
    return m;
}

SolveOptions scenario() {
    SolveOptions o;
    o.queue = presets::dual_task_queue();
    return o;
}

} // namespace

TEST_CASE("value iteration agrees with exhaustive policy evaluation") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 3 + rep % 4;
        const auto mdp = random_mdp(n, 2 + rep % 2, rng);
        const double gamma = 0.5 + 0.45 * (rep % 3) / 2.0;
        const auto vi = value_iteration(mdp, gamma, 1e-10);
        CHECK(vi.converged);
        const auto want = oracle::exhaustive_optimal_values(mdp, gamma);
        CHECK((vi.value - want).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("value iteration on a tiny belief MDP matches exhaustive search") {
    const auto m = presets::dual_task_model();
    const auto t = discretize_observations(m);
    QueueParams p = presets::dual_task_queue();
    p.max_length = 2;
    const auto bm = build_belief_mdp(m, t, p, {}, BeliefGrid(0.5), ActionSet::Servicing);
    const auto vi = value_iteration(bm.mdp, 0.9, 1e-10);
    std::vector<int> best;
    const auto want = oracle::exhaustive_optimal_values(bm.mdp, 0.9, &best);
    CHECK((vi.value - want).cwiseAbs().maxCoeff() < 1e-6);
    for (Eigen::Index s = 0; s < bm.mdp.num_states(); ++s)
        if (bm.queue_of(s) > 0) CHECK(vi.policy[static_cast<std::size_t>(s)] == best[static_cast<std::size_t>(s)]);
}

TEST_CASE("successive residuals contract by gamma") {
    const auto m = presets::dual_task_model();
    const auto r = solve_policy(m, scenario());
    const auto& res = r.solution.residuals;
    REQUIRE(res.size() > 10);
    for (std::size_t i = 1; i < res.size(); ++i) CHECK(res[i] <= 0.95 * res[i - 1] * (1 + 1e-9) + 1e-12);
    CHECK(r.solution.converged);
    CHECK(res.back() < 1e-6);
}

TEST_CASE("gamma zero picks the myopic argmax") {
    std::mt19937_64 rng(6);
    const auto mdp = random_mdp(6, 3, rng);
    const auto vi = value_iteration(mdp, 0.0);
    for (Eigen::Index s = 0; s < 6; ++s) {
        int best = -1;
        for (int a = 0; a < 3; ++a)
            if (mdp.feasible(s, a) && (best < 0 || mdp.reward(s, a) > mdp.reward(s, best))) best = a;
        CHECK(vi.policy[static_cast<std::size_t>(s)] == best);
        CHECK(vi.value(s) == doctest::Approx(mdp.reward(s, best)));
    }
}

TEST_CASE("ties go to the lowest action column") {
    FiniteMdp m;
    m.reward = Eigen::MatrixXd::Constant(2, 2, 1.0);
    m.feasible = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(2, 2, true);
    const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(2, 2);
    m.transition = {P.sparseView(), P.sparseView()};
    const auto vi = value_iteration(m, 0.9);
    CHECK(vi.policy[0] == 0);
    CHECK(vi.policy[1] == 0);
}

TEST_CASE("solutions do not depend on state numbering") {
    const auto m = presets::dual_task_model();
    const auto t = discretize_observations(m);
    const auto bm = build_belief_mdp(m, t, presets::dual_task_queue(), {}, BeliefGrid(0.1), ActionSet::WithDelegation);
    const auto n = bm.mdp.num_states();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = n - 1 - i;
    const auto a = value_iteration(bm.mdp, 0.95);
    const auto b = value_iteration(bm.mdp.permuted(perm), 0.95);
    for (Eigen::Index i = 0; i < n; ++i) {
        CHECK(b.value(i) == a.value(perm[static_cast<std::size_t>(i)]));
        CHECK(b.policy[static_cast<std::size_t>(i)] == a.policy[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
}

TEST_CASE("policy table lookup snaps the belief") {
    const auto r = solve_policy(presets::dual_task_model(), scenario());
    const auto& p = r.policy;
    CHECK(p.feasible());
    CHECK(p.at(5, 0.74) == p.action[5][7]);
    CHECK(p.at(5, 0.75) == p.action[5][8]);
    CHECK_THROWS_AS(p.at(0, 0.5), InvalidArgument);
    CHECK_THROWS_AS(p.at(11, 0.5), InvalidArgument);
    // High-fidelity is chosen at a short queue with certain high workload.
    CHECK(p.at(1, 1.0) == ActionId::H);
}

TEST_CASE("policy export is deterministic and roundtrips") {
    const auto a = solve_policy(presets::dual_task_model(), scenario());
    const auto b = solve_policy(presets::dual_task_model(), scenario());
    const auto ja = policy_to_json(a.policy);
    CHECK(ja == policy_to_json(b.policy));
    const auto back = policy_from_json(nlohmann::json::parse(ja));
    CHECK(back.grid == a.policy.grid);
    CHECK(back.max_queue == 10);
    CHECK(back.gamma == 0.95);
    CHECK(back.action == a.policy.action);
    CHECK(policy_to_json(back) == ja);
    auto doc = nlohmann::json::parse(ja);
    doc["action_set"] = 4;
    CHECK_THROWS_AS(policy_from_json(doc), DataError);
}

TEST_CASE("structure report on a handmade table") {
    PolicyTable p;
    p.grid = BeliefGrid(0.5);
    p.max_queue = 4;
    p.action_set = ActionSet::WithDelegation;
    using A = ActionId;
    p.action = {{A::N, A::N, A::N}, {A::N, A::H, A::H}, {A::N, A::H, A::H}, {A::N, A::N, A::H}, {A::N, A::H, A::D}};
    p.value.assign(5, std::vector<double>(3, 0.0));
    const auto s = policy_structure_report(p);
    CHECK(s.high_upset_all);
    CHECK(s.has_delegation);
    CHECK(s.delegation_min_belief == 1.0);
    CHECK(s.delegation_min_queue == 4);
    CHECK(s.delegation_in_corner);
    CHECK(s.high_shrinks_with_queue);
    CHECK(s.rows[2].region_start[1] == 1.0);
    p.action[1] = {A::H, A::N, A::H};
    CHECK(!policy_structure_report(p).high_upset_all);
    p.action[2][1] = A::D;
    CHECK(!policy_structure_report(p).delegation_in_corner);
}

TEST_CASE("dual-task scenario policy shape") {
    const auto two = solve_policy(presets::dual_task_model(), scenario()).policy;
    const auto s = policy_structure_report(two);
    CHECK(s.high_upset_all);
    CHECK(!s.has_delegation);
    int low = 0, high = 0;
    for (const auto& row : s.rows) (row.q <= 5 ? low : high) += row.count[1];
    CHECK(low > high);
    CHECK(s.rows[0].count[1] == static_cast<int>(two.grid.size()));

    auto o = scenario();
    o.action_set = ActionSet::WithDelegation;
    const auto three = policy_structure_report(solve_policy(presets::dual_task_model(), o).policy);
    CHECK(three.delegation_in_corner);
}

TEST_CASE("positive affine reward transforms keep the argmax") {
    const auto m = presets::dual_task_model();
    const auto t = discretize_observations(m);
    auto bm = build_belief_mdp(m, t, presets::dual_task_queue(), {}, BeliefGrid(0.1), ActionSet::WithDelegation);
    const auto a = value_iteration(bm.mdp, 0.95, 1e-10);
    for (Eigen::Index s = 0; s < bm.mdp.num_states(); ++s)
        for (Eigen::Index c = 0; c < bm.mdp.reward.cols(); ++c)
            if (bm.mdp.feasible(s, c)) bm.mdp.reward(s, c) = 3.0 * bm.mdp.reward(s, c) + 5.0;
    const auto b = value_iteration(bm.mdp, 0.95, 1e-10);
    CHECK(a.policy == b.policy);
    CHECK((b.value.array() - 3.0 * a.value.array() - 5.0 / 0.05).abs().maxCoeff() < 1e-6);
}

TEST_CASE("values move less as the belief grid is refined") {
    const auto m = presets::dual_task_model();
    auto values = [&](double step) {
        auto o = scenario();
        o.grid_step = step;
        o.tol = 1e-9;
        return solve_policy(m, o).policy;
    };
    const auto coarse = values(0.2), mid = values(0.1), fine = values(0.05);
    double d1 = 0, d2 = 0;
    for (int q = 1; q <= 10; ++q)
        for (std::size_t i = 0; i < coarse.grid.size(); ++i) {
            const auto qi = static_cast<std::size_t>(q);
            d1 = std::max(d1, std::abs(coarse.value[qi][i] - mid.value[qi][2 * i]));
            d2 = std::max(d2, std::abs(mid.value[qi][2 * i] - fine.value[qi][4 * i]));
        }
    MESSAGE("grid refinement: |V(0.2) - V(0.1)| = ", d1, ", |V(0.1) - V(0.05)| = ", d2);
    CHECK(d2 <= d1);
}

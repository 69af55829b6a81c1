#include "oracles.hpp"

#include "fidelity/presets.hpp"
#include "fidelity/sampling.hpp"

#include <doctest.h>

using namespace fidelity;

namespace {

TaskTrace random_trace(const WorkloadModel& m, int length, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> act(0, 5);
    std::vector<ActionId> actions;
    for (int t = 0; t < length; ++t) {
        const int x = act(rng);
        actions.push_back(x == 0 ? ActionId::D : (x % 2 ? ActionId::N : ActionId::H));
    }
    return sample_trajectory(m, actions, rng()).trace;
}

} // namespace

TEST_CASE("forward filter matches path enumeration on short traces") {
    std::mt19937_64 rng(2024);
    const auto tol = matching_tolerance();
    double worst = 0;
    for (int model = 0; model < 100; ++model) {
        const int k = 1 + model % 3;
        const auto m = oracle::random_model(k, rng);
        for (int len = 1; len <= 6; ++len) {
            const auto tr = random_trace(m, len, rng);
            const double want = std::log(oracle::brute_force_likelihood(m, tr, tol));
            const double got = forward_filter(m, tr).log_likelihood;
            worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
        }
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("filtered belief equals the enumerated posterior of the last state") {
    std::mt19937_64 rng(77);
    const auto m = oracle::random_model(2, rng);
    const auto tr = random_trace(m, 5, rng);
    const auto res = forward_filter(m, tr);
    const auto tol = matching_tolerance();
    const double p0 = oracle::brute_force_likelihood(m, tr, tol, 0), p1 = oracle::brute_force_likelihood(m, tr, tol, 1);
    CHECK(res.filtered.back()(1) == doctest::Approx(p1 / (p0 + p1)).epsilon(1e-10));
    CHECK(res.filtered.size() == tr.steps.size());
    for (const auto& b : res.filtered) CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("initial vector is the prior before the first transition") {
    auto m = WorkloadModel::with_states(2);
    m.initial << 1.0, 0.0;
    m.transition[0] << 0.0, 1.0, 0.0, 1.0;
    using C = EmissionChannel;
    for (auto& e : m.emissions)
        for (auto& s : e) s = {C::gaussian(0.5, 0.1), C::gaussian(1, 1), C::gaussian(500, 100)};
    TaskTrace tr{"x", {{ActionId::N, ObservationTriple{0.5, 1, 500}}}};
    // Everything moves to state 1 on the first step, so the filtered belief is (0, 1).
    CHECK(forward_filter(m, tr).filtered[0](1) == doctest::Approx(1.0));
}

TEST_CASE("delegation steps carry the belief through unchanged") {
    const auto m = presets::dual_task_model();
    TaskTrace tr{"d", {{ActionId::N, ObservationTriple{0.8, 0, 600}}, {ActionId::D, std::nullopt}}};
    const auto r = forward_filter(m, tr);
    CHECK(r.filtered[1].isApprox(r.filtered[0], 1e-15));
    TaskTrace one{"n", {{ActionId::N, ObservationTriple{0.8, 0, 600}}}};
    CHECK(forward_filter(m, one).log_likelihood == doctest::Approx(r.log_likelihood).epsilon(1e-14));
}

TEST_CASE("zero likelihood under every state is degenerate evidence") {
    auto m = presets::dual_task_model();
    m.emissions[0][1][1] = EmissionChannel::point_mass(0.0);
    TaskTrace tr{"z", {{ActionId::N, ObservationTriple{0.8, 2.0, 600}}}};
    CHECK_THROWS_AS(forward_filter(m, tr), DegenerateEvidence);
}

TEST_CASE("servicing steps need observations") {
    TaskTrace tr{"bad", {{ActionId::H, std::nullopt}}};
    CHECK_THROWS_AS(validate(tr), InvalidArgument);
    CHECK_THROWS_AS(validate(TaskTrace{"empty", {}}), InvalidArgument);
}

TEST_CASE("long traces stay finite") {
    const auto m = presets::dual_task_model();
    const auto tr = sample_trajectory(m, blocked_schedule(2000, 4, ActionId::H), 3).trace;
    const auto r = forward_filter(m, tr);
    CHECK(std::isfinite(r.log_likelihood));
    CHECK(r.log_likelihood < 0);
}

#include "oracles.hpp"

#include "fidelity/policy.hpp"
#include "fidelity/presets.hpp"
#include "fidelity/sim/output.hpp"
#include "fidelity/sim/simulator.hpp"
#include "fidelity/sim/stats.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fidelity;
using namespace fidelity::sim;

namespace {

class Always final : public Policy {
  public:
    explicit Always(ActionId a) : a_(a) {}
    std::string name() const override { return std::string("always_") + std::string(to_string(a_)); }
    ActionDistribution distribution(const PolicyContext&) const override {
        ActionDistribution d{0, 0, 0};
        d[index_of(a_)] = 1;
        return d;
    }

  private:
    ActionId a_;
};

SimConfig scenario_config(int episodes = 50) {
    SimConfig c;
    c.ground_truth = presets::dual_task_model();
    c.queue = presets::dual_task_queue();
    c.episodes = episodes;
    c.seed = 17;
    return c;
}

} // namespace

TEST_CASE("episode invariants hold for every policy") {
    const Simulator sim(scenario_config(30));
    const auto solved = solve_policy(sim.config().ground_truth, {sim.config().queue}).policy;
    const TablePolicy opt(solved);
    const BaselinePolicy sticky(BaselineKind::StickyHuman), random(BaselineKind::UniformRandom);
    for (const Policy* p : std::initializer_list<const Policy*>{&opt, &sticky, &random}) {
        for (const auto& log : sim.run_episodes(*p)) {
            double sum = 0;
            CHECK(log.records.size() == 48);
            for (const auto& r : log.records) {
                CHECK(r.q >= 1);
                CHECK(r.q <= 10);
                CHECK(r.q_after >= 0);
                CHECK(r.q_after <= 10);
                CHECK(r.q_after == std::min(r.q - 1 + r.arrivals, 10));
                CHECK(r.saturated == (r.q - 1 + r.arrivals > 10));
                CHECK(sim.grid().on_grid(r.b_high));
                CHECK(sim.grid().on_grid(r.b_high_after));
                CHECK(r.observation->admissible());
                CHECK(r.reward == realized_reward({}, r.q, r.action, r.observation));
                CHECK((r.workload == 0 || r.workload == 1));
                sum += r.reward;
            }
            CHECK(std::abs(log.score - sum) < 1e-9);
            for (std::size_t i = 1; i < log.records.size(); ++i) {
                const auto& prev = log.records[i - 1];
                const auto& cur = log.records[i];
                CHECK(cur.b_high == prev.b_high_after);
                if (prev.q_after > 0) CHECK(cur.q == prev.q_after);
                else CHECK(cur.waits_before > 0);
            }
        }
    }
}

TEST_CASE("always delegate follows pure propagation and the delegation reward") {
    auto c = scenario_config(5);
    const Simulator sim(c);
    const Always d(ActionId::D);
    for (const auto& log : sim.run_episodes(d))
        for (const auto& r : log.records) {
            CHECK(r.q_after == std::min(r.q - 1 + r.arrivals, 10));
            CHECK(r.reward == doctest::Approx(30 - 2 * (r.q - 1)));
            CHECK(r.b_high_after == r.b_high);
            CHECK(!r.observation);
            CHECK(r.arrivals == 0);
        }
}

TEST_CASE("no arrivals: the queue drains and the episode ends early") {
    auto c = scenario_config(1);
    c.queue.arrival_rate = 0;
    c.initial_queue = 3;
    const Simulator sim(c);
    const auto log = sim.run_episode(Always(ActionId::D), 5);
    REQUIRE(log.records.size() == 3);
    CHECK(log.ended_early);
    CHECK(log.score == doctest::Approx(26 + 28 + 30));
    c.initial_queue = 1;
    c.tasks_per_episode = 1;
    const auto one = Simulator(c).run_episode(Always(ActionId::N), 5);
    CHECK(one.records.size() == 1);
    CHECK(one.records[0].q_after == 0);
    CHECK(!one.ended_early);
}

TEST_CASE("episodes are deterministic in the seed") {
    const Simulator sim(scenario_config(1));
    const BaselinePolicy p(BaselineKind::UniformRandom);
    std::ostringstream a, b, c;
    write_episode_jsonl(a, sim.run_episode(p, 99), 0);
    write_episode_jsonl(b, sim.run_episode(p, 99), 0);
    write_episode_jsonl(c, sim.run_episode(p, 100), 0);
    CHECK(a.str() == b.str());
    CHECK(a.str() != c.str());
}

TEST_CASE("policies share task draws under a seed") {
    const Simulator sim(scenario_config(1));
    const auto n = sim.run_episode(Always(ActionId::N), 3);
    const auto h = sim.run_episode(Always(ActionId::H), 3);
    CHECK(n.records[0].task.targets == h.records[0].task.targets);
    CHECK(n.records[0].task.cue_onset == h.records[0].task.cue_onset);
}

TEST_CASE("batch statistics") {
    auto c = scenario_config(1);
    const auto one = Simulator(c).run_batch(Always(ActionId::H));
    CHECK(one.sd == 0.0);
    CHECK(one.mean == one.scores[0]);
    c.episodes = 20;
    const auto a = Simulator(c).run_batch(Always(ActionId::H));
    const auto b = Simulator(c).run_batch(Always(ActionId::H));
    CHECK(a.scores == b.scores);
    double s = 0;
    for (double x : a.scores) s += x;
    CHECK(a.mean == doctest::Approx(s / 20).epsilon(1e-14));
}

TEST_CASE("config validation") {
    auto c = scenario_config();
    SUBCASE("tasks") { c.tasks_per_episode = 0; }
    SUBCASE("initial queue") { c.initial_queue = 11; }
    SUBCASE("missed cue") { c.missed_cue_prob = 1.5; }
    SUBCASE("noise") { c.reaction_noise_sd = -1; }
    SUBCASE("engine states") {
        std::mt19937_64 rng(1);
        c.engine_model = oracle::random_model(3, rng);
    }
    CHECK_THROWS_AS(Simulator{c}, InvalidArgument);
}

TEST_CASE("missed cues censor the observed reaction time") {
    auto c = scenario_config(20);
    c.missed_cue_prob = 1.0;
    const Simulator sim(c);
    for (const auto& r : sim.run_episode(Always(ActionId::N), 8).records) {
        CHECK(r.missed_cue);
        CHECK(r.observed->o3 == doctest::Approx(censored_reaction_ms(r.task, c.queue.t_normal)));
        CHECK(r.observed->o1 == r.observation->o1);
    }
}

TEST_CASE("baseline policies") {
    const BaselinePolicy n(BaselineKind::AlwaysN), h(BaselineKind::AlwaysH), u(BaselineKind::UniformRandom);
    CHECK(n.distribution({3, 0.9, {}})[0] == 1.0);
    CHECK(h.distribution({1, 0.0, {}})[1] == 1.0);
    Rng rng(12);
    int hs = 0;
    for (int i = 0; i < 10000; ++i) hs += sample_action(u.distribution({1, 0.5, {}}), rng) == ActionId::H;
    CHECK(hs / 10000.0 == doctest::Approx(0.5).epsilon(0.04));
    const BaselinePolicy stuck(BaselineKind::StickyHuman, {1.0, 0.8, 0.5});
    CHECK(stuck.distribution({2, 0.9, ActionId::H})[1] == 1.0);
    CHECK(stuck.distribution({2, 0.1, ActionId::N})[0] == 1.0);
    const BaselinePolicy free(BaselineKind::StickyHuman, {0.0, 0.8, 0.5});
    CHECK(free.distribution({2, 0.2, ActionId::N})[1] == doctest::Approx(0.8));
    CHECK(free.distribution({2, 0.7, ActionId::H})[0] == doctest::Approx(0.8));
    CHECK(parse_baseline("sticky_human") == BaselineKind::StickyHuman);
    CHECK(!parse_baseline("always_D"));
    // One uniform per draw, whatever the distribution.
    Rng a(1), b(1);
    sample_action({1, 0, 0}, a);
    sample_action({0.2, 0.3, 0.5}, b);
    CHECK(a == b);
}

TEST_CASE("transition perturbation applies the multiplicative rule") {
    const auto m = presets::dual_task_model();
    Rng same(0);
    CHECK(perturb_transitions(m, 0.0, same).transition[0] == m.transition[0]);
    Rng rng(42), hand(42);
    const auto p = perturb_transitions(m, 0.4, rng);
    std::uniform_real_distribution<double> f(0.6, 1.4);
    for (std::size_t a = 0; a < 2; ++a) {
        Eigen::Matrix2d t = m.transition[a];
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j)
                if (i != j) t(i, j) = std::clamp(t(i, j) * f(hand), 0.0, 1.0);
            t.row(i) /= t.row(i).sum();
        }
        CHECK((p.transition[a] - t).cwiseAbs().maxCoeff() < 1e-15);
        for (int i = 0; i < 2; ++i) CHECK(p.transition[a].row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_NOTHROW(validate(p));
    CHECK_THROWS_AS(perturb_transitions(m, -0.1, rng), InvalidArgument);
}

TEST_CASE("reaction noise moments and clamping") {
    Rng rng(5);
    std::vector<double> diffs;
    for (int i = 0; i < 100000; ++i) {
        const double clean = 5000;
        diffs.push_back(add_reaction_noise(clean, 250, rng) - clean);
    }
    const auto s = group_stats(diffs);
    CHECK(s.sd == doctest::Approx(250).epsilon(0.05));
    CHECK(std::abs(s.mean) < 5);
    std::vector<ObservationTriple> stream(2000, ObservationTriple{0.5, 0, 10});
    add_reaction_noise(stream, 250, rng);
    for (const auto& o : stream) CHECK(o.o3 >= 0.0);
    std::vector<ObservationTriple> still(3, ObservationTriple{0.5, 0, 321});
    add_reaction_noise(still, 0, rng);
    CHECK(still[2].o3 == 321);
}

TEST_CASE("sensitivity sweep baseline rows are exactly zero and rows do not depend on order") {
    auto c = scenario_config(40);
    const BaselinePolicy p(BaselineKind::AlwaysH);
    std::vector<PerturbationPoint> grid{{PerturbationKind::Transition, 0.0},
                                       {PerturbationKind::Transition, 0.2},
                                       {PerturbationKind::ReactionNoise, 0.0},
                                       {PerturbationKind::ReactionNoise, 150.0}};
    const auto rows = sensitivity_sweep(c, p, grid);
    CHECK(rows[0].abs_pct_reward_change == 0.0);
    CHECK(rows[2].abs_pct_reward_change == 0.0);
    std::vector<PerturbationPoint> reversed(grid.rbegin(), grid.rend());
    const auto back = sensitivity_sweep(c, p, reversed);
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(back[rows.size() - 1 - i].mean_score == rows[i].mean_score);
}

TEST_CASE("Welch comparison against the textbook formulas") {
    const std::vector<double> a{1, 2, 3}, b{4, 6, 8};
    const auto c = compare_groups(a, b);
    CHECK(c.a.mean == 2);
    CHECK(c.b.sd == doctest::Approx(2));
    const double se = std::sqrt(1.0 / 3 + 4.0 / 3);
    CHECK(c.t_statistic == doctest::Approx(-4 / se).epsilon(1e-12));
    const double df = (5.0 / 3) * (5.0 / 3) / ((1.0 / 9) / 2 + (16.0 / 9) / 2);
    CHECK(c.df == doctest::Approx(df).epsilon(1e-12));
    CHECK(c.cohen_d == doctest::Approx(-4 / std::sqrt(2.5)).epsilon(1e-12));
    CHECK(c.p_value == doctest::Approx(oracle::two_sided_t_p(c.t_statistic, c.df)).epsilon(1e-6));
}

TEST_CASE("p-values agree with numerical integration of the t density") {
    Rng rng(3);
    std::normal_distribution<double> g(0, 1);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> a(15), b(25);
        for (auto& x : a) x = g(rng);
        for (auto& x : b) x = 0.3 * rep * 0.2 + 1.5 * g(rng);
        const auto c = compare_groups(a, b);
        CHECK(c.p_value == doctest::Approx(oracle::two_sided_t_p(c.t_statistic, c.df)).epsilon(1e-6));
        CHECK((c.cohen_d > 0) == (c.a.mean > c.b.mean));
    }
}

TEST_CASE("comparison edge cases") {
    const std::vector<double> a{1, 2, 3, 4};
    const auto same = compare_groups(a, a);
    CHECK(same.cohen_d == 0.0);
    CHECK(same.p_value == 1.0);
    const std::vector<double> one{1}, flat{2, 2, 2};
    CHECK_THROWS_AS(compare_groups(one, a), InvalidArgument);
    CHECK_THROWS_AS(compare_groups(flat, flat), InvalidArgument);
}

TEST_CASE("moment-matched groups reproduce the target effect size") {
    Rng rng(8);
    const auto x = moment_matched_sample(20, 1316.7, 447, rng);
    const auto s = group_stats(x);
    CHECK(s.mean == doctest::Approx(1316.7).epsilon(1e-12));
    CHECK(s.sd == doctest::Approx(447).epsilon(1e-12));
    const auto y = moment_matched_sample(20, 1666.2, 417.1, rng);
    const auto c = compare_groups(y, x);
    const double pooled = std::sqrt((19 * 447.0 * 447 + 19 * 417.1 * 417.1) / 38);
    CHECK(c.cohen_d == doctest::Approx((1666.2 - 1316.7) / pooled).epsilon(1e-10));
}

TEST_CASE("episode log and score file roundtrips") {
    const Simulator sim(scenario_config(1));
    const auto log = sim.run_episode(BaselinePolicy(BaselineKind::UniformRandom), 4);
    std::stringstream ss;
    write_episode_jsonl(ss, log, 2);
    write_episode_jsonl(ss, log, 3);
    const auto parsed = read_episode_jsonl(ss);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].records.size() == log.records.size());
    CHECK(parsed[0].summary["score"].get<double>() == doctest::Approx(log.score).epsilon(1e-12));
    CHECK(parsed[1].summary["episode"] == 3);
    CHECK(parsed[0].records[5]["q"] == log.records[5].q);
    CHECK(parsed[0].records[5]["action"] == std::string(to_string(log.records[5].action)));

    const auto dir = std::filesystem::temp_directory_path() / "fidelity_test_sim";
    std::filesystem::create_directories(dir);
    const std::vector<double> scores{1.5, 2.25, -3};
    {
        std::ofstream out(dir / "s.csv");
        write_scores_csv(out, scores);
    }
    CHECK(read_scores(dir / "s.csv") == scores);
    {
        std::ofstream out(dir / "plain.txt");
        out << "1.5\n2.25\n-3\n";
    }
    CHECK(read_scores(dir / "plain.txt") == scores);
    CHECK(comparison_csv_header().rfind("group_a,group_b", 0) == 0);
}

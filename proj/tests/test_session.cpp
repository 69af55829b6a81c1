#include "fidelity/presets.hpp"
#include "fidelity/io.hpp"
#include "fidelity/service/session.hpp"
#include "fidelity/sim/simulator.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

using namespace fidelity;
using namespace fidelity::service;

namespace {

std::shared_ptr<const Artifacts> artifacts(ActionSet set = ActionSet::Servicing) {
    static std::map<ActionSet, std::shared_ptr<const Artifacts>> cache;
    auto& a = cache[set];
    if (!a) {
        SolveOptions o;
        o.queue = presets::dual_task_queue();
        o.action_set = set;
        a = Artifacts::load(presets::dual_task_model(), solve_policy(presets::dual_task_model(), o).policy);
    }
    return a;
}

SessionConfig config(std::uint64_t seed = 7) {
    SessionConfig c;
    c.seed = seed;
    c.queue = presets::dual_task_queue();
    return c;
}

// Runs next() until a task is issued.
NextResult next_task(Session& s) {
    for (int i = 0; i < 10000; ++i) {
        auto r = s.next();
        if (r.task) return r;
    }
    throw std::runtime_error("no task arrived");
}

} // namespace

TEST_CASE("a new session starts from the snapped prior") {
    Session s("a", config(), artifacts());
    const auto snap = s.snapshot();
    CHECK(snap.q == 1);
    CHECK(snap.b_high == doctest::Approx(0.3));
    CHECK(snap.recommendation == artifacts()->policy.at(1, 0.3));
    CHECK(!snap.complete);
    CHECK(snap.history.empty());
}

TEST_CASE("sessions with the same seed and inputs are identical") {
    Session a("a", config(3), artifacts()), b("b", config(3), artifacts());
    for (int i = 0; i < 10; ++i) {
        const auto ta = next_task(a), tb = next_task(b);
        CHECK(ta.task->cue_onset == tb.task->cue_onset);
        CHECK(ta.task->recommendation == tb.task->recommendation);
        const SubmitRequest req{ta.task->task_id, ta.task->recommendation, ObservationTriple{0.8, 0.0, 600}};
        a.submit(req);
        b.submit(req);
    }
    const auto sa = a.snapshot(), sb = b.snapshot();
    CHECK(sa.q == sb.q);
    CHECK(sa.b_high == sb.b_high);
    CHECK(sa.score == sb.score);
    CHECK(sa.clock_ms == sb.clock_ms);
}

TEST_CASE("session requests must match the loaded policy") {
    auto c = config();
    c.grid_step = 0.05;
    try {
        Session s("x", c, artifacts());
        FAIL("expected a grid mismatch");
    } catch (const ServiceError& e) {
        CHECK(e.status() == 422);
    }
    c = config();
    c.action_set = ActionSet::WithDelegation;
    CHECK_THROWS_AS(Session("x", c, artifacts()), ServiceError);
    c = config();
    c.initial_queue = 11;
    CHECK_THROWS_AS(Session("x", c, artifacts()), ServiceError);
    c = config();
    c.grid_step = 0.1;
    c.action_set = ActionSet::Servicing;
    CHECK_NOTHROW(Session("x", c, artifacts()));
}

TEST_CASE("delegation in an advisory session") {
    auto c = config();
    c.mode = Mode::Advisory;
    c.initial_queue = 4;
    Session s("d", c, artifacts(ActionSet::WithDelegation));
    const auto t = next_task(s);
    const double before = s.snapshot().b_high;
    const auto r = s.submit({t.task->task_id, ActionId::D, std::nullopt});
    CHECK(r.reward == doctest::Approx(24));
    CHECK(r.snapshot.b_high == before);
    CHECK(r.snapshot.q == 3);
    CHECK(r.snapshot.history.back().overridden == (t.task->recommendation != ActionId::D));
}

TEST_CASE("request errors carry their status") {
    Session s("e", config(), artifacts());
    auto status = [](auto&& f) {
        try {
            f();
        } catch (const ServiceError& e) {
            return e.status();
        }
        return 0;
    };
    CHECK(status([&] { s.submit({0, ActionId::N, ObservationTriple{0.8, 0, 500}}); }) == 404);
    const auto t = next_task(s);
    CHECK(status([&] { s.next(); }) == 409);
    const ActionId other = t.task->recommendation == ActionId::N ? ActionId::H : ActionId::N;
    CHECK(status([&] { s.submit({t.task->task_id, other, ObservationTriple{0.8, 0, 500}}); }) == 422);
    CHECK(status([&] { s.submit({t.task->task_id, ActionId::D, std::nullopt}); }) == 422);
    CHECK(status([&] { s.submit({t.task->task_id, t.task->recommendation, std::nullopt}); }) == 422);
    CHECK(status([&] { s.submit({t.task->task_id, t.task->recommendation, ObservationTriple{1.5, 0, 500}}); }) == 422);
    s.submit({t.task->task_id, t.task->recommendation, ObservationTriple{0.8, 0, 500}});
    CHECK(status([&] { s.submit({t.task->task_id, t.task->recommendation, ObservationTriple{0.8, 0, 500}}); }) == 409);
    SessionManager m(artifacts());
    CHECK(status([&] { m.find("feedbeef"); }) == 404);
}

TEST_CASE("a live session replays the simulator episode with the same seed") {
    sim::SimConfig cfg;
    cfg.ground_truth = presets::dual_task_model();
    cfg.queue = presets::dual_task_queue();
    const sim::Simulator simulator(cfg);
    const sim::TablePolicy policy(artifacts()->policy);
    for (int e = 0; e < 5; ++e) {
        const auto seed = sim::episode_seed(cfg.seed, e);
        const auto episode = simulator.run_episode(policy, seed);
        Session s("r", config(seed), artifacts());
        for (const auto& rec : episode.records) {
            int waits = 0;
            NextResult n = s.next();
            while (!n.task) {
                ++waits;
                n = s.next();
            }
            CHECK(waits == rec.waits_before);
            CHECK(n.snapshot.q == rec.q);
            CHECK(n.snapshot.b_high == rec.b_high);
            CHECK(n.task->recommendation == rec.action);
            CHECK(n.task->cue_onset == rec.task.cue_onset);
            const auto r = s.submit({n.task->task_id, rec.action, rec.observed});
            CHECK(r.reward == rec.reward);
            CHECK(r.snapshot.q == rec.q_after);
            CHECK(r.snapshot.b_high == rec.b_high_after);
        }
        CHECK(s.snapshot().score == doctest::Approx(episode.score).epsilon(1e-12));
        CHECK(s.complete());
    }
}

TEST_CASE("no arrivals: the session ends when the queue empties") {
    auto c = config();
    c.queue.arrival_rate = 0;
    c.initial_queue = 1;
    Session s("z", c, artifacts());
    const auto t = next_task(s);
    s.submit({t.task->task_id, t.task->recommendation, ObservationTriple{0.9, 0, 500}});
    const auto n = s.next();
    CHECK(n.wait);
    CHECK(n.snapshot.complete);
    CHECK_THROWS_AS(s.next(), ServiceError);
}

TEST_CASE("events stream in order and wake waiters") {
    Session s("v", config(), artifacts());
    CHECK(s.events_since(0, std::chrono::milliseconds(0)).size() == 1);
    std::vector<Event> got;
    std::thread waiter([&] { got = s.events_since(1, std::chrono::seconds(5)); });
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    next_task(s);
    waiter.join();
    REQUIRE(!got.empty());
    CHECK(got[0].seq == 1);
    const auto all = s.events_since(0, std::chrono::milliseconds(0));
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].seq == i);
    CHECK(all.back().type == "task");
}

TEST_CASE("concurrent readers see consistent snapshots") {
    auto c = config();
    c.tasks = 30;
    Session s("c", c, artifacts());
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::vector<std::thread> readers;
    for (int i = 0; i < 4; ++i)
        readers.emplace_back([&] {
            while (!done) {
                const auto snap = s.snapshot();
                if (static_cast<int>(snap.history.size()) != snap.tasks_completed) ++bad;
                double sum = 0;
                for (const auto& h : snap.history) sum += h.record.reward;
                if (std::abs(sum - snap.score) > 1e-9) ++bad;
            }
        });
    while (!s.complete()) {
        const auto t = next_task(s);
        s.submit({t.task->task_id, t.task->recommendation, ObservationTriple{0.85, 0.2, 640}});
    }
    done = true;
    for (auto& r : readers) r.join();
    CHECK(bad == 0);
}

TEST_CASE("session logs are written once in the episode format") {
    const auto dir = std::filesystem::temp_directory_path() / "fidelity_test_session";
    std::filesystem::remove_all(dir);
    SessionManager m(artifacts(), dir);
    auto c = config();
    c.tasks = 3;
    const auto s = m.create(c);
    CHECK(m.find(s->id()) == s);
    CHECK(m.flush_logs(false) == 0);
    while (!s->complete()) {
        const auto t = next_task(*s);
        s->submit({t.task->task_id, t.task->recommendation, ObservationTriple{0.8, 0, 500}});
    }
    CHECK(m.flush_logs(false) == 1);
    CHECK(m.flush_logs(true) == 0);
    std::ifstream in(dir / ("session-" + s->id() + ".jsonl"));
    std::string line;
    int lines = 0;
    nlohmann::json last;
    while (std::getline(in, line)) {
        last = nlohmann::json::parse(line);
        ++lines;
    }
    CHECK(lines == 4);
    CHECK(last["session_id"] == s->id());
    CHECK(last["complete"] == true);
    CHECK(last["score"].get<double>() == doctest::Approx(s->snapshot().score));
}

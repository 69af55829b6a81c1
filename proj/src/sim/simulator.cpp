#include "fidelity/sim/simulator.hpp"

#include "fidelity/sampling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace fidelity::sim {

TaskDraw draw_task(Rng& tasks) {
    TaskDraw t;
    t.targets = std::uniform_int_distribution<int>(2, 6)(tasks);
    t.cue_onset = std::uniform_real_distribution<double>(0.25, 0.75)(tasks);
    return t;
}

double censored_reaction_ms(const TaskDraw& task, double duration_s) {
    return (1.0 - task.cue_onset) * duration_s * 1000.0;
}

int queue_after(int q, int arrivals, int max_length) { return std::min(q - 1 + arrivals, max_length); }

void validate(const SimConfig& c) {
    validate(c.ground_truth);
    validate(c.engine());
    if (c.engine().num_states() != 2) throw InvalidArgument("the engine model must have two workload states");
    if (!(c.queue.arrival_rate >= 0)) throw InvalidArgument("arrival rate must be nonnegative");
    if (c.queue.max_length < 1) throw InvalidArgument("maximum queue length must be at least 1");
    if (!(c.queue.t_normal > 0 && c.queue.t_normal < c.queue.t_high)) throw InvalidArgument("need 0 < t_N < t_H");
    if (c.queue.t_delegate != 0) throw InvalidArgument("delegation takes no time");
    validate(c.reward);
    if (c.tasks_per_episode < 1) throw InvalidArgument("tasks_per_episode must be at least 1");
    if (c.episodes < 1) throw InvalidArgument("episodes must be at least 1");
    if (c.initial_queue < 0 || c.initial_queue > c.queue.max_length)
        throw InvalidArgument("initial queue length must lie in [0, L]");
    if (!(c.missed_cue_prob >= 0 && c.missed_cue_prob <= 1)) throw InvalidArgument("missed-cue probability must lie in [0, 1]");
    if (!(c.reaction_noise_sd >= 0)) throw InvalidArgument("reaction noise must be nonnegative");
}

std::uint64_t episode_seed(std::uint64_t master_seed, int episode) {
    return derive_seed(master_seed, streams::kEpisodeBase + static_cast<std::uint64_t>(episode));
}

Simulator::Simulator(SimConfig config)
    : config_((validate(config), std::move(config))), grid_(config_.grid_step),
      table_(discretize_observations(config_.engine(), config_.steps)) {}

EpisodeLog Simulator::run_episode(const Policy& policy, std::uint64_t seed) const {
    const auto& cfg = config_;
    const auto& truth = cfg.ground_truth;
    Rng tasks(derive_seed(seed, streams::kTasks));
    Rng arrivals(derive_seed(seed, streams::kArrivals));
    Rng op(derive_seed(seed, streams::kOperator));
    Rng choice(derive_seed(seed, streams::kPolicy));
    Rng noise(derive_seed(seed, streams::kNoise));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    EpisodeLog log;
    log.seed = seed;
    log.policy = policy.name();
    int q = cfg.initial_queue;
    double b = grid_.snap(cfg.engine().initial(1));
    Eigen::Index w = sample_categorical(op, truth.initial);
    std::optional<ActionId> previous;

    for (int t = 0; t < cfg.tasks_per_episode; ++t) {
        int waits = 0;
        while (q == 0) {
            if (!(cfg.queue.arrival_rate > 0)) break;
            const int a = sample_poisson(arrivals, cfg.queue.arrival_rate * cfg.queue.wait_duration());
            q = std::min(a, cfg.queue.max_length);
            ++waits;
        }
        log.waits += waits;
        if (q == 0) {
            log.ended_early = true;
            break;
        }

        TaskRecord rec;
        rec.index = t;
        rec.q = q;
        rec.b_high = b;
        rec.waits_before = waits;
        rec.task = draw_task(tasks);
        const ActionId a = sample_action(policy.distribution({q, b, previous}), choice);
        rec.action = a;
        const double duration = cfg.queue.duration(a);

        if (is_servicing(a)) {
            w = sample_categorical(op, truth.transition[index_of(a)].row(w).transpose());
            const ObservationTriple clean = sample_observation(truth, w, a, op);
            rec.missed_cue = unif(op) < cfg.missed_cue_prob;
            ObservationTriple seen = clean;
            if (rec.missed_cue) seen.o3 = censored_reaction_ms(rec.task, duration);
            seen.o3 = add_reaction_noise(seen.o3, cfg.reaction_noise_sd, noise);
            rec.observation = clean;
            rec.observed = seen;
        }
        rec.workload = w;
        rec.reward = realized_reward(cfg.reward, q, a, rec.observation);

        rec.arrivals = sample_poisson(arrivals, cfg.queue.arrival_rate * duration);
        rec.saturated = q - 1 + rec.arrivals > cfg.queue.max_length;
        rec.q_after = queue_after(q, rec.arrivals, cfg.queue.max_length);
        const auto tracked = track_belief(cfg.engine(), table_, grid_, b, a, rec.observed);
        rec.b_high_after = tracked.b_high;
        rec.evidence_discarded = tracked.evidence_discarded;

        log.score += rec.reward;
        q = rec.q_after;
        b = rec.b_high_after;
        previous = a;
        log.records.push_back(rec);
    }
    return log;
}

std::vector<EpisodeLog> Simulator::run_episodes(const Policy& policy) const {
    std::vector<EpisodeLog> out;
    out.reserve(static_cast<std::size_t>(config_.episodes));
    for (int e = 0; e < config_.episodes; ++e) out.push_back(run_episode(policy, episode_seed(config_.seed, e)));
    return out;
}

BatchResult summarize(std::vector<double> scores) {
    BatchResult r;
    r.scores = std::move(scores);
    if (r.scores.empty()) return r;
    const double n = static_cast<double>(r.scores.size());
    r.mean = std::accumulate(r.scores.begin(), r.scores.end(), 0.0) / n;
    if (r.scores.size() > 1) {
        double ss = 0;
        for (double s : r.scores) ss += (s - r.mean) * (s - r.mean);
        r.sd = std::sqrt(ss / (n - 1));
    }
    return r;
}

BatchResult Simulator::run_batch(const Policy& policy) const {
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(config_.episodes));
    for (int e = 0; e < config_.episodes; ++e) scores.push_back(run_episode(policy, episode_seed(config_.seed, e)).score);
    return summarize(std::move(scores));
}

WorkloadModel perturb_transitions(const WorkloadModel& model, double pct, Rng& rng) {
    if (!(pct >= 0)) throw InvalidArgument("perturbation fraction must be nonnegative");
    if (pct == 0) return model;
    WorkloadModel out = model;
    std::uniform_real_distribution<double> factor(1.0 - pct, 1.0 + pct);
    const Eigen::Index k = model.num_states();
    for (ActionId a : kServicingActions) {
        auto& t = out.transition[index_of(a)];
        for (Eigen::Index i = 0; i < k; ++i) {
            for (Eigen::Index j = 0; j < k; ++j)
                if (i != j) t(i, j) = std::clamp(t(i, j) * factor(rng), 0.0, 1.0);
            t.row(i) /= t.row(i).sum();
        }
    }
    return out;
}

double add_reaction_noise(double o3, double sigma, Rng& rng) {
    const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
    return std::max(0.0, o3 + sigma * z);
}

void add_reaction_noise(std::span<ObservationTriple> stream, double sigma, Rng& rng) {
    for (auto& o : stream) o.o3 = add_reaction_noise(o.o3, sigma, rng);
}

std::string to_string(PerturbationKind kind) {
    switch (kind) {
    case PerturbationKind::None: return "none";
    case PerturbationKind::Transition: return "transition";
    case PerturbationKind::ReactionNoise: return "reaction_noise";
    }
    return "unknown";
}

std::vector<SensitivityRow> sensitivity_sweep(const SimConfig& config, const Policy& policy,
                                              std::span<const PerturbationPoint> grid) {
    const double baseline = Simulator(config).run_batch(policy).mean;
    if (baseline == 0) throw InvalidArgument("baseline mean score is zero; percentage change is undefined");
    std::vector<SensitivityRow> rows;
    for (const auto& point : grid) {
        SimConfig c = config;
        if (point.kind == PerturbationKind::Transition) {
            Rng rng(derive_seed(derive_seed(config.seed, 7000), std::bit_cast<std::uint64_t>(point.magnitude)));
            c.ground_truth = perturb_transitions(config.ground_truth, point.magnitude, rng);
            c.engine_model = config.engine();
        } else if (point.kind == PerturbationKind::ReactionNoise) {
            c.reaction_noise_sd = point.magnitude;
        }
        SensitivityRow row;
        row.point = point;
        row.mean_score = Simulator(c).run_batch(policy).mean;
        row.abs_pct_reward_change = std::abs(row.mean_score - baseline) / std::abs(baseline) * 100.0;
        rows.push_back(row);
    }
    return rows;
}

} // namespace fidelity::sim

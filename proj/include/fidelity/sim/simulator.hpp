#pragma once

#include "fidelity/belief.hpp"
#include "fidelity/belief_mdp.hpp"
#include "fidelity/sim/policies.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fidelity::sim {

/// Hidden content of one task, drawn from the task stream when the task starts.
struct TaskDraw {
    int targets = 0;
    /// Fraction of the task at which the secondary cue fires, in [0.25, 0.75].
    double cue_onset = 0.5;
};

TaskDraw draw_task(Rng& tasks);
/// Remaining cue window in ms, the reaction time recorded when the cue is missed.
double censored_reaction_ms(const TaskDraw& task, double duration_s);
/// q' = min(q - 1 + arrivals, L).
int queue_after(int q, int arrivals, int max_length);

struct SimConfig {
    WorkloadModel ground_truth;
    /// Model the engine uses for belief tracking; ground_truth when unset.
    std::optional<WorkloadModel> engine_model;
    QueueParams queue{};
    RewardWeights reward{};
    double grid_step = 0.1;
    ChannelSteps steps{};
    int tasks_per_episode = 48;
    int episodes = 1000;
    int initial_queue = 1;
    double missed_cue_prob = 0.02;
    /// Gaussian noise (ms) added to the reaction time the engine observes.
    double reaction_noise_sd = 0.0;
    std::uint64_t seed = 1;

    const WorkloadModel& engine() const { return engine_model ? *engine_model : ground_truth; }
};

/// Throws InvalidArgument when a field is out of range.
void validate(const SimConfig& config);

struct TaskRecord {
    int index = 0;
    int q = 0;
    /// Hidden workload; -1 when unknown (live sessions).
    Eigen::Index workload = 0;
    double b_high = 0;
    ActionId action = ActionId::N;
    TaskDraw task{};
    /// Operator output and what the engine observed after censoring and noise.
    std::optional<ObservationTriple> observation;
    std::optional<ObservationTriple> observed;
    bool missed_cue = false;
    double reward = 0;
    int arrivals = 0;
    int q_after = 0;
    double b_high_after = 0;
    bool saturated = false;
    bool evidence_discarded = false;
    /// Idle epochs spent at an empty queue before this task.
    int waits_before = 0;
};

struct EpisodeLog {
    std::uint64_t seed = 0;
    std::string policy;
    std::vector<TaskRecord> records;
    double score = 0;
    int waits = 0;
    /// The queue emptied with no arrivals possible before all tasks were serviced.
    bool ended_early = false;
};

struct BatchResult {
    std::vector<double> scores;
    double mean = 0;
    double sd = 0;
};

/// Episode seed e of a batch; the same value seeds a replayable live session.
std::uint64_t episode_seed(std::uint64_t master_seed, int episode);

/// Synthetic-operator simulator with precomputed engine tables.
class Simulator {
  public:
    explicit Simulator(SimConfig config);

    const SimConfig& config() const { return config_; }
    const BeliefGrid& grid() const { return grid_; }
    const DiscreteObservationTable& table() const { return table_; }

    EpisodeLog run_episode(const Policy& policy, std::uint64_t seed) const;
    std::vector<EpisodeLog> run_episodes(const Policy& policy) const;
    BatchResult run_batch(const Policy& policy) const;

  private:
    SimConfig config_;
    BeliefGrid grid_;
    DiscreteObservationTable table_;
};

BatchResult summarize(std::vector<double> scores);

/// Multiplies each off-diagonal transition entry by U[1 - pct, 1 + pct], clamps to [0, 1],
/// and renormalizes rows. Draw order: action N then H, rows then columns. pct = 0 returns
/// the model unchanged.
WorkloadModel perturb_transitions(const WorkloadModel& model, double pct, Rng& rng);

/// o3 -> max(0, o3 + sigma z). One normal draw per call, even when sigma = 0.
double add_reaction_noise(double o3, double sigma, Rng& rng);
void add_reaction_noise(std::span<ObservationTriple> stream, double sigma, Rng& rng);

enum class PerturbationKind { None, Transition, ReactionNoise };
std::string to_string(PerturbationKind kind);

struct PerturbationPoint {
    PerturbationKind kind = PerturbationKind::None;
    /// Fraction for transitions, ms for reaction noise.
    double magnitude = 0;
};

struct SensitivityRow {
    PerturbationPoint point;
    double mean_score = 0;
    double abs_pct_reward_change = 0;
};

/// Mean batch score under each perturbation relative to the unperturbed baseline. Every
/// point reuses the configured episode seeds; transition perturbations draw from a seed
/// derived from the point itself, so rows do not depend on grid order.
std::vector<SensitivityRow> sensitivity_sweep(const SimConfig& config, const Policy& policy,
                                              std::span<const PerturbationPoint> grid);

} // namespace fidelity::sim

#pragma once

#include "fidelity/filter.hpp"
#include "fidelity/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fidelity {

struct SampledTrajectory {
    TaskTrace trace;
    /// Workload in effect during each step.
    std::vector<Eigen::Index> hidden_states;
};

Eigen::Index sample_categorical(Rng& rng, const Eigen::VectorXd& probs);

/// Draws an observation from the (w, a) emission channels, clamped to the channel ranges.
ObservationTriple sample_observation(const WorkloadModel& model, Eigen::Index w, ActionId a, Rng& rng);

SampledTrajectory sample_trajectory(const WorkloadModel& model, std::span<const ActionId> actions,
                                    std::uint64_t seed);

/// Blocked N/H schedule alternating every `block` steps, starting with `first`.
std::vector<ActionId> blocked_schedule(std::size_t steps, std::size_t block, ActionId first);

/// Synthetic dataset: `traces` sessions of `steps` tasks, half starting with N blocks.
std::vector<TaskTrace> synthetic_dataset(const WorkloadModel& model, std::size_t traces, std::size_t steps,
                                         std::uint64_t seed, std::size_t block = 4);

} // namespace fidelity

#pragma once

#include "fidelity/workload_model.hpp"

#include <array>
#include <vector>

namespace fidelity {

/// Bin index triple on the channel lattices; bin k is centered at k * step.
struct DiscreteObservation {
    std::array<long, kNumChannels> bin{};

    friend bool operator==(const DiscreteObservation&, const DiscreteObservation&) = default;
};

/// Binned distribution of one channel for every state, on a lattice shared by all states.
struct ChannelTable {
    double step = 0;
    long first_bin = 0;
    /// probs(i, w) = probability of bin first_bin + i under state w. Columns sum to 1.
    Eigen::MatrixXd probs;
    /// The step exceeded the channel's valid range, so a Gaussian collapsed to one bin.
    bool collapsed = false;

    long last_bin() const { return first_bin + static_cast<long>(probs.rows()) - 1; }
    double value(long bin) const { return static_cast<double>(bin) * step; }
    /// Column of per-state probabilities for a bin; zeros outside the lattice.
    Eigen::VectorXd at(long bin) const;
    /// Mean of the binned channel per state.
    Eigen::VectorXd means() const;
};

struct DiscreteEntry {
    DiscreteObservation obs;
    /// p(o | w, a) for every state w.
    Eigen::VectorXd likelihood;
};

/// Discretized observation model for every (w, a) with a in {N, H}.
class DiscreteObservationTable {
  public:
    DiscreteObservationTable() = default;
    DiscreteObservationTable(std::array<std::array<ChannelTable, kNumChannels>, 2> channels, ChannelSteps steps,
                             Eigen::Index num_states);

    Eigen::Index num_states() const { return num_states_; }
    const ChannelSteps& steps() const { return steps_; }
    const ChannelTable& channel(ActionId a, std::size_t ch) const;
    bool collapsed() const;

    /// Per-state likelihood of a discrete observation: product of channel bin probabilities.
    Eigen::VectorXd likelihood(ActionId a, const DiscreteObservation& o) const;

    /// Every triple with positive probability under at least one state.
    const std::vector<DiscreteEntry>& entries(ActionId a) const;

    /// Nonzero (triple, probability) list for a single (w, a).
    std::vector<std::pair<DiscreteObservation, double>> joint(Eigen::Index w, ActionId a) const;

    /// Maps a raw observation to its lattice bin, clamped to the table's bin range.
    DiscreteObservation bin(ActionId a, const ObservationTriple& o) const;
    ObservationTriple values(const DiscreteObservation& o) const;

  private:
    std::array<std::array<ChannelTable, kNumChannels>, 2> channels_;
    std::array<std::vector<DiscreteEntry>, 2> entries_;
    ChannelSteps steps_{};
    Eigen::Index num_states_ = 0;
};

/// Half-up rounding of x / step onto the bin lattice.
long lattice_bin(double x, double step);

/// Probability of each lattice bin for one channel, truncated to mean +- 4 sd within the
/// valid range and renormalized. Returns (first_bin, probabilities).
std::pair<long, Eigen::VectorXd> discretize_channel(const EmissionChannel& channel, double step, ChannelRange range,
                                                    bool* collapsed = nullptr);

DiscreteObservationTable discretize_observations(const WorkloadModel& model, const ChannelSteps& steps = {});

} // namespace fidelity

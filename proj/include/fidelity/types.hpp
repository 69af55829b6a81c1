#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fidelity {

/// Fidelity level chosen for the head-of-queue task.
enum class ActionId { N = 0, H = 1, D = 2 };

inline constexpr std::array<ActionId, 3> kAllActions{ActionId::N, ActionId::H, ActionId::D};
inline constexpr std::array<ActionId, 2> kServicingActions{ActionId::N, ActionId::H};

inline constexpr bool is_servicing(ActionId a) { return a != ActionId::D; }
inline constexpr std::size_t index_of(ActionId a) { return static_cast<std::size_t>(a); }

inline std::string_view to_string(ActionId a) {
    switch (a) {
    case ActionId::N: return "N";
    case ActionId::H: return "H";
    case ActionId::D: return "D";
    }
    return "?";
}

inline std::optional<ActionId> parse_action(std::string_view s) {
    if (s == "N") return ActionId::N;
    if (s == "H") return ActionId::H;
    if (s == "D") return ActionId::D;
    return std::nullopt;
}

/// Observation channels, in triple order.
enum class Channel { Detected = 0, FalseAlarms = 1, ReactionTime = 2 };
inline constexpr std::size_t kNumChannels = 3;

/// Per-task evidence: fraction detected, false-alarm count, reaction time (ms).
struct ObservationTriple {
    double o1 = 0.0;
    double o2 = 0.0;
    double o3 = 0.0;

    double operator[](std::size_t ch) const { return ch == 0 ? o1 : (ch == 1 ? o2 : o3); }
    double& operator[](std::size_t ch) { return ch == 0 ? o1 : (ch == 1 ? o2 : o3); }

    bool admissible() const { return o1 >= 0.0 && o1 <= 1.0 && o2 >= 0.0 && o3 >= 0.0; }
    friend bool operator==(const ObservationTriple&, const ObservationTriple&) = default;
};

/// Valid range of each channel; upper bound of +inf means unbounded.
struct ChannelRange {
    double lo;
    double hi;
};
ChannelRange channel_range(std::size_t ch);

/// Discretization steps (o1, o2, o3) used by the solver and by live binning.
struct ChannelSteps {
    double detected = 0.05;
    double false_alarms = 0.5;
    double reaction_ms = 25.0;

    double operator[](std::size_t ch) const {
        return ch == 0 ? detected : (ch == 1 ? false_alarms : reaction_ms);
    }
};

/// Base for all recoverable library errors.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Input data does not satisfy an operation's precondition.
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// Every hidden state assigns zero likelihood to an observation.
class DegenerateEvidence : public Error {
  public:
    using Error::Error;
};

/// Belief update attempted on an observation with zero predictive probability.
class ImpossibleEvidence : public Error {
  public:
    using Error::Error;
};

/// Malformed file content; carries the 1-based line when known.
class DataError : public Error {
  public:
    DataError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

} // namespace fidelity

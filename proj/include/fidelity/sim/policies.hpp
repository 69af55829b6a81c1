#pragma once

#include "fidelity/policy.hpp"
#include "fidelity/rng.hpp"

#include <array>
#include <memory>
#include <optional>
#include <string>

namespace fidelity::sim {

/// What a policy sees before each task.
struct PolicyContext {
    int q = 1;
    double b_high = 0;
    std::optional<ActionId> previous;
};

/// Probabilities over (N, H, D), indexed by index_of(ActionId).
using ActionDistribution = std::array<double, 3>;

class Policy {
  public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual ActionDistribution distribution(const PolicyContext& ctx) const = 0;
};

/// Draws exactly one uniform from `rng` regardless of the distribution.
ActionId sample_action(const ActionDistribution& dist, Rng& rng);

/// Deterministic policy read from a solved table.
class TablePolicy final : public Policy {
  public:
    explicit TablePolicy(PolicyTable table, std::string name = "optimal");
    std::string name() const override { return name_; }
    ActionDistribution distribution(const PolicyContext& ctx) const override;
    const PolicyTable& table() const { return table_; }

  private:
    PolicyTable table_;
    std::string name_;
};

enum class BaselineKind { AlwaysN, AlwaysH, UniformRandom, StickyHuman };

std::string to_string(BaselineKind kind);
std::optional<BaselineKind> parse_baseline(std::string_view name);

/// Parameters of the sticky_human baseline. With probability `inertia` the previous
/// action is repeated; otherwise H is preferred with probability `preference` while
/// b_H < switch_belief and N is preferred with that probability above it.
struct StickyHumanParams {
    double inertia = 0.8;
    double preference = 0.8;
    double switch_belief = 0.5;
};

class BaselinePolicy final : public Policy {
  public:
    explicit BaselinePolicy(BaselineKind kind, StickyHumanParams sticky = {});
    std::string name() const override { return to_string(kind_); }
    ActionDistribution distribution(const PolicyContext& ctx) const override;

  private:
    BaselineKind kind_;
    StickyHumanParams sticky_;
};

std::unique_ptr<Policy> baseline_policy(BaselineKind kind, StickyHumanParams sticky = {});

} // namespace fidelity::sim

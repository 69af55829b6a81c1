#include "fidelity/sim/policies.hpp"

namespace fidelity::sim {

ActionId sample_action(const ActionDistribution& dist, Rng& rng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0;
    ActionId last = ActionId::N;
    for (ActionId a : kAllActions) {
        const double p = dist[index_of(a)];
        if (p <= 0) continue;
        last = a;
        acc += p;
        if (u < acc) return a;
    }
    return last;
}

TablePolicy::TablePolicy(PolicyTable table, std::string name) : table_(std::move(table)), name_(std::move(name)) {
    if (!table_.feasible()) throw InvalidArgument("policy table uses actions outside its action set");
}

ActionDistribution TablePolicy::distribution(const PolicyContext& ctx) const {
    ActionDistribution d{};
    d[index_of(table_.at(ctx.q, ctx.b_high))] = 1.0;
    return d;
}

std::string to_string(BaselineKind kind) {
    switch (kind) {
    case BaselineKind::AlwaysN: return "always_N";
    case BaselineKind::AlwaysH: return "always_H";
    case BaselineKind::UniformRandom: return "uniform_random";
    case BaselineKind::StickyHuman: return "sticky_human";
    }
    return "unknown";
}

std::optional<BaselineKind> parse_baseline(std::string_view name) {
    for (auto k : {BaselineKind::AlwaysN, BaselineKind::AlwaysH, BaselineKind::UniformRandom, BaselineKind::StickyHuman})
        if (name == to_string(k)) return k;
    return std::nullopt;
}

BaselinePolicy::BaselinePolicy(BaselineKind kind, StickyHumanParams sticky) : kind_(kind), sticky_(sticky) {
    if (!(sticky.inertia >= 0 && sticky.inertia <= 1) || !(sticky.preference >= 0 && sticky.preference <= 1))
        throw InvalidArgument("sticky_human probabilities must lie in [0, 1]");
}

ActionDistribution BaselinePolicy::distribution(const PolicyContext& ctx) const {
    ActionDistribution d{};
    const auto n = index_of(ActionId::N), h = index_of(ActionId::H);
    switch (kind_) {
    case BaselineKind::AlwaysN: d[n] = 1; break;
    case BaselineKind::AlwaysH: d[h] = 1; break;
    case BaselineKind::UniformRandom: d[n] = d[h] = 0.5; break;
    case BaselineKind::StickyHuman: {
        // Humans tend to favor H under low workload and N under high workload.
        const bool low = ctx.b_high < sticky_.switch_belief;
        const double p_high = low ? sticky_.preference : 1 - sticky_.preference;
        const bool sticky = ctx.previous && is_servicing(*ctx.previous);
        const double keep = sticky ? sticky_.inertia : 0.0;
        d[h] = (1 - keep) * p_high;
        d[n] = (1 - keep) * (1 - p_high);
        if (sticky) d[index_of(*ctx.previous)] += keep;
        break;
    }
    }
    return d;
}

std::unique_ptr<Policy> baseline_policy(BaselineKind kind, StickyHumanParams sticky) {
    return std::make_unique<BaselinePolicy>(kind, sticky);
}

} // namespace fidelity::sim

#include "fidelity/sampling.hpp"

#include <algorithm>

namespace fidelity {

Eigen::Index sample_categorical(Rng& rng, const Eigen::VectorXd& probs) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        if (u < acc) return i;
    }
    // rounding left u above the cumulative sum; take the last state with positive mass
    for (Eigen::Index i = probs.size() - 1; i > 0; --i)
        if (probs(i) > 0.0) return i;
    return 0;
}

ObservationTriple sample_observation(const WorkloadModel& model, Eigen::Index w, ActionId a, Rng& rng) {
    const auto& set = model.channels(w, a);
    ObservationTriple o;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        // one normal draw per channel regardless of kind keeps the stream aligned across models
        const double z = gauss(rng);
        const auto& ch = set[c];
        double x = ch.kind == ChannelKind::PointMass ? ch.point : ch.mean + ch.std * z;
        const auto range = channel_range(c);
        o[c] = std::clamp(x, range.lo, range.hi);
    }
    return o;
}

SampledTrajectory sample_trajectory(const WorkloadModel& model, std::span<const ActionId> actions,
                                    std::uint64_t seed) {
    Rng rng(seed);
    SampledTrajectory out;
    out.trace.steps.reserve(actions.size());
    out.hidden_states.reserve(actions.size());
    Eigen::Index w = sample_categorical(rng, model.initial);
    for (ActionId a : actions) {
        TraceStep step{a, std::nullopt};
        if (a != ActionId::D) {
            w = sample_categorical(rng, model.transition[index_of(a)].row(w).transpose());
            step.observation = sample_observation(model, w, a, rng);
        }
        out.hidden_states.push_back(w);
        out.trace.steps.push_back(step);
    }
    return out;
}

std::vector<ActionId> blocked_schedule(std::size_t steps, std::size_t block, ActionId first) {
    const ActionId second = first == ActionId::N ? ActionId::H : ActionId::N;
    std::vector<ActionId> out(steps);
    for (std::size_t t = 0; t < steps; ++t) out[t] = ((t / block) % 2 == 0) ? first : second;
    return out;
}

std::vector<TaskTrace> synthetic_dataset(const WorkloadModel& model, std::size_t traces, std::size_t steps,
                                         std::uint64_t seed, std::size_t block) {
    std::vector<TaskTrace> out;
    out.reserve(traces);
    for (std::size_t i = 0; i < traces; ++i) {
        const auto schedule = blocked_schedule(steps, block, i % 2 == 0 ? ActionId::N : ActionId::H);
        auto sampled = sample_trajectory(model, schedule, derive_seed(seed, i));
        sampled.trace.session_id = "s" + std::to_string(i);
        out.push_back(std::move(sampled.trace));
    }
    return out;
}

} // namespace fidelity

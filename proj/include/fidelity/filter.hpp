#pragma once

#include "fidelity/workload_model.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fidelity {

struct TraceStep {
    ActionId action = ActionId::N;
    std::optional<ObservationTriple> observation; // empty for delegation
};

/// One session of (input action, output observation) pairs.
struct TaskTrace {
    std::string session_id;
    std::vector<TraceStep> steps;
};

/// Throws InvalidArgument if the trace is empty or a servicing step lacks an observation.
void validate(const TaskTrace& trace);

template <typename Scalar>
struct BasicFilterResult {
    Scalar log_likelihood = 0;
    std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> filtered;
};
using FilterResult = BasicFilterResult<double>;

/// Log emission vector over states for one step; all zeros for delegation.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1>
log_emissions(const BasicWorkloadModel<Scalar>& model, const TraceStep& step,
              const std::array<double, kNumChannels>& tolerance = matching_tolerance()) {
    const Eigen::Index k = model.num_states();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> le = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(k);
    if (step.action == ActionId::D) return le;
    for (Eigen::Index w = 0; w < k; ++w)
        le(w) = log_emission_likelihood(model, w, step.action, *step.observation, tolerance);
    return le;
}

/// Forward recursion over a recorded trace. The initial vector is the prior before the
/// first step's transition; each step transitions under its action, then conditions on
/// its observation. Delegation propagates through the identity with no evidence.
template <typename Scalar>
BasicFilterResult<Scalar> forward_filter(const BasicWorkloadModel<Scalar>& model, const TaskTrace& trace,
                                         const std::array<double, kNumChannels>& tolerance = matching_tolerance()) {
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    validate(trace);
    BasicFilterResult<Scalar> out;
    out.filtered.reserve(trace.steps.size());
    Vector belief = model.initial;
    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        const auto& step = trace.steps[t];
        Vector predicted = model.transition_for(step.action).transpose() * belief;
        if (step.action != ActionId::D) {
            const Vector le = log_emissions(model, step, tolerance);
            const Scalar shift = le.maxCoeff();
            if (!std::isfinite(static_cast<double>(shift)))
                throw DegenerateEvidence("observation at step " + std::to_string(t) +
                                         " has zero likelihood under every state");
            const Vector joint = predicted.cwiseProduct((le.array() - shift).exp().matrix());
            const Scalar evidence = joint.sum();
            if (!(evidence > Scalar(0)))
                throw DegenerateEvidence("zero predictive probability at step " + std::to_string(t));
            using std::log;
            out.log_likelihood += log(evidence) + shift;
            predicted = joint / evidence;
        }
        belief = predicted;
        out.filtered.push_back(belief);
    }
    return out;
}

} // namespace fidelity

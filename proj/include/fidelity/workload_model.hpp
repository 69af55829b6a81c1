#pragma once

#include "fidelity/types.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace fidelity {

enum class ChannelKind { Gaussian, PointMass };

/// Emission density of one observation channel for a (state, action) pair.
template <typename Scalar>
struct BasicEmissionChannel {
    ChannelKind kind = ChannelKind::Gaussian;
    Scalar mean = 0;
    Scalar std = 1;
    Scalar point = 0;

    static BasicEmissionChannel gaussian(Scalar mean, Scalar std) {
        return {ChannelKind::Gaussian, mean, std, mean};
    }
    static BasicEmissionChannel point_mass(Scalar at) { return {ChannelKind::PointMass, at, 0, at}; }

    /// Expected value of the channel.
    Scalar expectation() const { return kind == ChannelKind::PointMass ? point : mean; }

    /// Density at x. A point mass contributes 1 inside the matching tolerance and 0 outside.
    Scalar density(Scalar x, Scalar tolerance) const {
        using std::abs;
        using std::exp;
        using std::sqrt;
        if (kind == ChannelKind::PointMass) return abs(x - point) < tolerance ? Scalar(1) : Scalar(0);
        const Scalar z = (x - mean) / std;
        return exp(Scalar(-0.5) * z * z) / (std * sqrt(Scalar(2) * std::numbers::pi_v<Scalar>));
    }

    Scalar log_density(Scalar x, Scalar tolerance) const {
        using std::abs;
        using std::log;
        if (kind == ChannelKind::PointMass)
            return abs(x - point) < tolerance ? Scalar(0) : -std::numeric_limits<Scalar>::infinity();
        const Scalar z = (x - mean) / std;
        return Scalar(-0.5) * z * z - log(std) - Scalar(0.5) * log(Scalar(2) * std::numbers::pi_v<Scalar>);
    }

    friend bool operator==(const BasicEmissionChannel&, const BasicEmissionChannel&) = default;
};

template <typename Scalar>
using ChannelSet = std::array<BasicEmissionChannel<Scalar>, kNumChannels>;

/// Input-output HMM over operator workload. State 0 is normal workload.
///
/// Transition rows are indexed (w, w'): transition[a](w, w') = p(w' | w, a). Delegation
/// never changes the workload, so only the servicing actions carry a matrix.
template <typename Scalar>
struct BasicWorkloadModel {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    std::array<Matrix, 2> transition;
    /// emissions[a][w] for a in {N, H}.
    std::array<std::vector<ChannelSet<Scalar>>, 2> emissions;
    Vector initial;

    Eigen::Index num_states() const { return initial.size(); }

    Matrix transition_for(ActionId a) const {
        if (a == ActionId::D) return Matrix::Identity(num_states(), num_states());
        return transition[index_of(a)];
    }

    const ChannelSet<Scalar>& channels(Eigen::Index w, ActionId a) const {
        if (a == ActionId::D) throw InvalidArgument("delegation produces no operator observation");
        return emissions[index_of(a)][static_cast<std::size_t>(w)];
    }
    ChannelSet<Scalar>& channels(Eigen::Index w, ActionId a) {
        if (a == ActionId::D) throw InvalidArgument("delegation produces no operator observation");
        return emissions[index_of(a)][static_cast<std::size_t>(w)];
    }

    /// Uniform-parameter model with K states; callers fill in the numbers.
    static BasicWorkloadModel with_states(Eigen::Index k) {
        BasicWorkloadModel m;
        for (auto& t : m.transition) t = Matrix::Identity(k, k);
        for (auto& e : m.emissions) e.assign(static_cast<std::size_t>(k), ChannelSet<Scalar>{});
        m.initial = Vector::Constant(k, Scalar(1) / Scalar(k));
        return m;
    }
};

using EmissionChannel = BasicEmissionChannel<double>;
using WorkloadModel = BasicWorkloadModel<double>;

/// Point-mass matching tolerance per channel: half the discretization step.
inline std::array<double, kNumChannels> matching_tolerance(const ChannelSteps& steps = {}) {
    return {steps[0] / 2, steps[1] / 2, steps[2] / 2};
}

/// Throws InvalidArgument describing the first violated invariant.
void validate(const WorkloadModel& model, double tol = 1e-9);

/// Product of the three channel densities for state w under servicing action a.
template <typename Scalar>
Scalar emission_likelihood(const BasicWorkloadModel<Scalar>& model, Eigen::Index w, ActionId a,
                           const ObservationTriple& o,
                           const std::array<double, kNumChannels>& tolerance = matching_tolerance()) {
    if (a == ActionId::D) throw InvalidArgument("delegation produces no operator observation");
    if (w < 0 || w >= model.num_states()) throw InvalidArgument("state index out of range");
    const auto& ch = model.channels(w, a);
    Scalar p = 1;
    for (std::size_t c = 0; c < kNumChannels; ++c) p *= ch[c].density(Scalar(o[c]), Scalar(tolerance[c]));
    return p;
}

template <typename Scalar>
Scalar log_emission_likelihood(const BasicWorkloadModel<Scalar>& model, Eigen::Index w, ActionId a,
                               const ObservationTriple& o,
                               const std::array<double, kNumChannels>& tolerance = matching_tolerance()) {
    if (a == ActionId::D) throw InvalidArgument("delegation produces no operator observation");
    const auto& ch = model.channels(w, a);
    Scalar lp = 0;
    for (std::size_t c = 0; c < kNumChannels; ++c) lp += ch[c].log_density(Scalar(o[c]), Scalar(tolerance[c]));
    return lp;
}

/// Relabels hidden states: new state i is old state perm[i].
WorkloadModel permute_states(const WorkloadModel& model, const std::vector<Eigen::Index>& perm);

} // namespace fidelity

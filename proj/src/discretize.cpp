#include "fidelity/discretize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fidelity {

namespace {

/// Standard normal mass on [za, zb], evaluated in whichever tail keeps precision.
double normal_mass(double za, double zb) {
    constexpr double r2 = std::numbers::sqrt2;
    if (za >= 0) return 0.5 * (std::erfc(za / r2) - std::erfc(zb / r2));
    if (zb <= 0) return 0.5 * (std::erfc(-zb / r2) - std::erfc(-za / r2));
    return 1.0 - 0.5 * std::erfc(zb / r2) - 0.5 * std::erfc(-za / r2);
}

} // namespace

long lattice_bin(double x, double step) { return static_cast<long>(std::floor(x / step + 0.5 + 1e-9)); }

std::pair<long, Eigen::VectorXd> discretize_channel(const EmissionChannel& channel, double step, ChannelRange range,
                                                    bool* collapsed) {
    if (!(step > 0)) throw InvalidArgument("discretization step must be positive");
    if (collapsed) *collapsed = false;
    auto single = [&](double at) {
        Eigen::VectorXd p(1);
        p(0) = 1.0;
        return std::pair{lattice_bin(std::clamp(at, range.lo, range.hi), step), p};
    };
    if (channel.kind == ChannelKind::PointMass) return single(channel.point);
    if (step > range.hi - range.lo) {
        if (collapsed) *collapsed = true;
        return single(channel.mean);
    }
    const double lo = std::max(channel.mean - 4 * channel.std, range.lo);
    const double hi = std::min(channel.mean + 4 * channel.std, range.hi);
    if (!(lo < hi)) return single(channel.mean);

    const long first = lattice_bin(lo, step);
    long last = lattice_bin(hi, step);
    if ((static_cast<double>(last) - 0.5) * step >= hi && last > first) --last;
    Eigen::VectorXd p(last - first + 1);
    for (long k = first; k <= last; ++k) {
        const double a = std::max(lo, (static_cast<double>(k) - 0.5) * step);
        const double b = std::min(hi, (static_cast<double>(k) + 0.5) * step);
        p(k - first) = b > a ? normal_mass((a - channel.mean) / channel.std, (b - channel.mean) / channel.std) : 0.0;
    }
    p /= p.sum();
    return {first, p};
}

Eigen::VectorXd ChannelTable::at(long bin) const {
    if (bin < first_bin || bin > last_bin()) return Eigen::VectorXd::Zero(probs.cols());
    return probs.row(bin - first_bin).transpose();
}

Eigen::VectorXd ChannelTable::means() const {
    Eigen::VectorXd centers(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) centers(i) = value(first_bin + static_cast<long>(i));
    return probs.transpose() * centers;
}

DiscreteObservationTable::DiscreteObservationTable(std::array<std::array<ChannelTable, kNumChannels>, 2> channels,
                                                   ChannelSteps steps, Eigen::Index num_states)
    : channels_(std::move(channels)), steps_(steps), num_states_(num_states) {
    for (std::size_t a = 0; a < 2; ++a) {
        const auto& ch = channels_[a];
        auto& out = entries_[a];
        for (long k1 = ch[0].first_bin; k1 <= ch[0].last_bin(); ++k1) {
            const Eigen::VectorXd p1 = ch[0].at(k1);
            if (p1.maxCoeff() <= 0) continue;
            for (long k2 = ch[1].first_bin; k2 <= ch[1].last_bin(); ++k2) {
                const Eigen::VectorXd p12 = p1.cwiseProduct(ch[1].at(k2));
                if (p12.maxCoeff() <= 0) continue;
                for (long k3 = ch[2].first_bin; k3 <= ch[2].last_bin(); ++k3) {
                    Eigen::VectorXd p = p12.cwiseProduct(ch[2].at(k3));
                    if (p.maxCoeff() <= 0) continue;
                    out.push_back({DiscreteObservation{{k1, k2, k3}}, std::move(p)});
                }
            }
        }
    }
}

const ChannelTable& DiscreteObservationTable::channel(ActionId a, std::size_t ch) const {
    if (a == ActionId::D) throw InvalidArgument("delegation has no observation table");
    return channels_[index_of(a)][ch];
}

bool DiscreteObservationTable::collapsed() const {
    for (const auto& per_action : channels_)
        for (const auto& ch : per_action)
            if (ch.collapsed) return true;
    return false;
}

Eigen::VectorXd DiscreteObservationTable::likelihood(ActionId a, const DiscreteObservation& o) const {
    Eigen::VectorXd p = Eigen::VectorXd::Ones(num_states_);
    for (std::size_t c = 0; c < kNumChannels; ++c) p = p.cwiseProduct(channel(a, c).at(o.bin[c]));
    return p;
}

const std::vector<DiscreteEntry>& DiscreteObservationTable::entries(ActionId a) const {
    if (a == ActionId::D) throw InvalidArgument("delegation has no observation table");
    return entries_[index_of(a)];
}

std::vector<std::pair<DiscreteObservation, double>> DiscreteObservationTable::joint(Eigen::Index w, ActionId a) const {
    std::vector<std::pair<DiscreteObservation, double>> out;
    for (const auto& e : entries(a))
        if (e.likelihood(w) > 0) out.emplace_back(e.obs, e.likelihood(w));
    return out;
}

DiscreteObservation DiscreteObservationTable::bin(ActionId a, const ObservationTriple& o) const {
    DiscreteObservation d;
    for (std::size_t c = 0; c < kNumChannels; ++c) {
        const auto& ch = channel(a, c);
        d.bin[c] = std::clamp(lattice_bin(o[c], ch.step), ch.first_bin, ch.last_bin());
    }
    return d;
}

ObservationTriple DiscreteObservationTable::values(const DiscreteObservation& o) const {
    ObservationTriple t;
    for (std::size_t c = 0; c < kNumChannels; ++c) t[c] = static_cast<double>(o.bin[c]) * steps_[c];
    return t;
}

DiscreteObservationTable discretize_observations(const WorkloadModel& model, const ChannelSteps& steps) {
    for (std::size_t c = 0; c < kNumChannels; ++c)
        if (!(steps[c] > 0)) throw InvalidArgument("discretization steps must be positive");
    const Eigen::Index k = model.num_states();
    std::array<std::array<ChannelTable, kNumChannels>, 2> channels;
    for (ActionId a : kServicingActions) {
        for (std::size_t c = 0; c < kNumChannels; ++c) {
            std::vector<std::pair<long, Eigen::VectorXd>> per_state;
            bool any_collapsed = false;
            long first = 0, last = 0;
            for (Eigen::Index w = 0; w < k; ++w) {
                bool collapsed = false;
                per_state.push_back(discretize_channel(model.channels(w, a)[c], steps[c], channel_range(c), &collapsed));
                any_collapsed = any_collapsed || collapsed;
                const long f = per_state.back().first;
                const long l = f + static_cast<long>(per_state.back().second.size()) - 1;
                first = w == 0 ? f : std::min(first, f);
                last = w == 0 ? l : std::max(last, l);
            }
            ChannelTable table;
            table.step = steps[c];
            table.first_bin = first;
            table.collapsed = any_collapsed;
            table.probs = Eigen::MatrixXd::Zero(last - first + 1, k);
            for (Eigen::Index w = 0; w < k; ++w) {
                const auto& [f, p] = per_state[static_cast<std::size_t>(w)];
                table.probs.col(w).segment(f - first, p.size()) = p;
            }
            channels[index_of(a)][c] = std::move(table);
        }
    }
    return DiscreteObservationTable(std::move(channels), steps, k);
}

} // namespace fidelity

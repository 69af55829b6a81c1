#include "fidelity/em.hpp"
#include "fidelity/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fidelity {

namespace {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ChannelMoments {
    double weight = 0;
    double sum = 0;
    double sum_sq = 0;

    void add(double w, double x) {
        weight += w;
        sum += w * x;
        sum_sq += w * x * x;
    }
    double mean() const { return sum / weight; }
    double variance() const { return std::max(0.0, sum_sq / weight - mean() * mean()); }
};

/// Expected sufficient statistics accumulated over a dataset.
struct Statistics {
    Vector initial;
    std::array<Matrix, 2> transitions;
    // moments[a][w][ch]
    std::array<std::vector<std::array<ChannelMoments, kNumChannels>>, 2> moments;
    Vector occupancy;
    double log_likelihood = 0;

    explicit Statistics(Eigen::Index k) : initial(Vector::Zero(k)), occupancy(Vector::Zero(k)) {
        for (auto& t : transitions) t = Matrix::Zero(k, k);
        for (auto& m : moments) m.assign(static_cast<std::size_t>(k), {});
    }
};

void accumulate(const WorkloadModel& model, const TaskTrace& trace, const std::array<double, kNumChannels>& tol,
                Statistics& stats) {
    const Eigen::Index k = model.num_states();
    const std::size_t steps = trace.steps.size();
    Matrix scaled(steps, k);
    std::vector<double> scale(steps, 1.0);
    std::vector<Vector> alpha(steps);

    Vector prev = model.initial;
    for (std::size_t t = 0; t < steps; ++t) {
        const auto& step = trace.steps[t];
        if (step.action == ActionId::D) {
            scaled.row(t).setOnes();
            alpha[t] = prev;
            continue;
        }
        const Vector le = log_emissions(model, step, tol);
        const double shift = le.maxCoeff();
        if (!std::isfinite(shift))
            throw DegenerateEvidence("trace '" + trace.session_id + "' step " + std::to_string(t) +
                                     " has zero likelihood under every state");
        scaled.row(t) = (le.array() - shift).exp().matrix().transpose();
        const Vector joint =
            (model.transition[index_of(step.action)].transpose() * prev).cwiseProduct(scaled.row(t).transpose());
        scale[t] = joint.sum();
        if (!(scale[t] > 0.0))
            throw DegenerateEvidence("trace '" + trace.session_id + "' has zero predictive probability at step " +
                                     std::to_string(t));
        stats.log_likelihood += std::log(scale[t]) + shift;
        alpha[t] = joint / scale[t];
        prev = alpha[t];
    }

    Vector beta = Vector::Ones(k);
    for (std::size_t t = steps; t-- > 0;) {
        const auto& step = trace.steps[t];
        const Vector& alpha_prev = t == 0 ? model.initial : alpha[t - 1];
        if (step.action == ActionId::D) continue; // identity, no evidence: beta and alpha pass through
        const std::size_t a = index_of(step.action);
        const Vector gamma = alpha[t].cwiseProduct(beta);
        const Vector eb = scaled.row(t).transpose().cwiseProduct(beta);
        // xi(w, w') = alpha_prev(w) A(w, w') e(w') beta(w') / c
        stats.transitions[a] += (alpha_prev * eb.transpose()).cwiseProduct(model.transition[a]) / scale[t];
        const auto& o = *step.observation;
        for (Eigen::Index w = 0; w < k; ++w) {
            stats.occupancy(w) += gamma(w);
            for (std::size_t c = 0; c < kNumChannels; ++c)
                stats.moments[a][static_cast<std::size_t>(w)][c].add(gamma(w), o[c]);
        }
        beta = model.transition[a] * eb / scale[t];
    }
    stats.initial += model.initial.cwiseProduct(beta);
}

Statistics collect(std::span<const TaskTrace> dataset, const WorkloadModel& model, const ChannelSteps& steps) {
    Statistics stats(model.num_states());
    const auto tol = matching_tolerance(steps);
    for (const auto& trace : dataset) accumulate(model, trace, tol, stats);
    return stats;
}

/// Which fitted channels fell under the variance floor in the last M-step.
using FloorMask = std::array<std::vector<std::array<bool, kNumChannels>>, 2>;

WorkloadModel maximize(const Statistics& stats, const WorkloadModel& previous, double floor, FloorMask* mask) {
    const Eigen::Index k = previous.num_states();
    WorkloadModel next = previous;
    next.initial = stats.initial / stats.initial.sum();
    if (mask)
        for (auto& m : *mask) m.assign(static_cast<std::size_t>(k), {false, false, false});
    for (std::size_t a = 0; a < 2; ++a) {
        for (Eigen::Index w = 0; w < k; ++w) {
            const double row = stats.transitions[a].row(w).sum();
            if (row > 0.0) next.transition[a].row(w) = stats.transitions[a].row(w) / row;
            for (std::size_t c = 0; c < kNumChannels; ++c) {
                const auto& mom = stats.moments[a][static_cast<std::size_t>(w)][c];
                if (!(mom.weight > 0.0)) continue;
                const double var = mom.variance();
                next.emissions[a][static_cast<std::size_t>(w)][c] =
                    EmissionChannel::gaussian(mom.mean(), std::sqrt(std::max(var, floor)));
                if (mask && var < floor) (*mask)[a][static_cast<std::size_t>(w)][c] = true;
            }
        }
    }
    return next;
}

Vector dirichlet_uniform(Rng& rng, Eigen::Index k) {
    std::gamma_distribution<double> g(1.0, 1.0);
    Vector v(k);
    for (Eigen::Index i = 0; i < k; ++i) v(i) = g(rng) + 1e-12;
    return v / v.sum();
}

/// 1-D k-means on reaction times, seeded k-means++ style; centers returned sorted.
std::vector<double> kmeans_1d(const std::vector<double>& xs, int k, Rng& rng) {
    std::vector<double> centers;
    std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
    centers.push_back(xs[pick(rng)]);
    std::vector<double> d2(xs.size());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (xs[i] - c) * (xs[i] - c));
            d2[i] = best;
            total += best;
        }
        if (!(total > 0)) {
            centers.push_back(xs[pick(rng)]);
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng), acc = 0;
        std::size_t chosen = xs.size() - 1;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            acc += d2[i];
            if (r < acc) {
                chosen = i;
                break;
            }
        }
        centers.push_back(xs[chosen]);
    }
    std::vector<double> sum(k), count(k);
    for (int iter = 0; iter < 25; ++iter) {
        std::fill(sum.begin(), sum.end(), 0.0);
        std::fill(count.begin(), count.end(), 0.0);
        for (double x : xs) {
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (std::abs(x - centers[c]) < std::abs(x - centers[best])) best = c;
            sum[best] += x;
            count[best] += 1;
        }
        for (int c = 0; c < k; ++c)
            if (count[c] > 0) centers[c] = sum[c] / count[c];
    }
    std::sort(centers.begin(), centers.end());
    return centers;
}

WorkloadModel initial_model(std::span<const TaskTrace> dataset, int k, const EmConfig& config, Rng& rng) {
    std::vector<double> reaction;
    for (const auto& tr : dataset)
        for (const auto& s : tr.steps)
            if (s.observation) reaction.push_back(s.observation->o3);
    if (reaction.empty()) throw InvalidArgument("dataset has no servicing observations");
    const auto centers = kmeans_1d(reaction, k, rng);

    auto nearest = [&](double x) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (std::abs(x - centers[c]) < std::abs(x - centers[best])) best = c;
        return best;
    };

    WorkloadModel m = WorkloadModel::with_states(k);
    std::array<std::vector<std::array<ChannelMoments, kNumChannels>>, 2> mom;
    std::array<std::array<ChannelMoments, kNumChannels>, 2> global{};
    for (auto& x : mom) x.assign(static_cast<std::size_t>(k), {});
    for (const auto& tr : dataset)
        for (const auto& s : tr.steps) {
            if (!s.observation) continue;
            const std::size_t a = index_of(s.action);
            const int w = nearest(s.observation->o3);
            for (std::size_t c = 0; c < kNumChannels; ++c) {
                mom[a][static_cast<std::size_t>(w)][c].add(1.0, (*s.observation)[c]);
                global[a][c].add(1.0, (*s.observation)[c]);
            }
        }
    for (std::size_t a = 0; a < 2; ++a) {
        for (int w = 0; w < k; ++w)
            for (std::size_t c = 0; c < kNumChannels; ++c) {
                const auto& src = mom[a][static_cast<std::size_t>(w)][c].weight > 0
                                      ? mom[a][static_cast<std::size_t>(w)][c]
                                      : global[a][c];
                if (!(src.weight > 0)) continue;
                m.emissions[a][static_cast<std::size_t>(w)][c] =
                    EmissionChannel::gaussian(src.mean(), std::sqrt(std::max(src.variance(), config.variance_floor)));
            }
        for (int w = 0; w < k; ++w) m.transition[a].row(w) = dirichlet_uniform(rng, k).transpose();
    }
    m.initial = dirichlet_uniform(rng, k);
    return m;
}

WorkloadModel to_point_masses(const WorkloadModel& model, const FloorMask& mask) {
    WorkloadModel out = model;
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t w = 0; w < out.emissions[a].size(); ++w)
            for (std::size_t c = 0; c < kNumChannels; ++c)
                if (mask[a][w][c]) out.emissions[a][w][c] = EmissionChannel::point_mass(model.emissions[a][w][c].mean);
    return out;
}

struct RestartResult {
    WorkloadModel model;
    std::vector<double> trace;
    double final_ll = -std::numeric_limits<double>::infinity();
    bool converged = false;
    bool degenerate = false;
    int iterations = 0;
};

RestartResult run_restart(std::span<const TaskTrace> dataset, int k, const EmConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    RestartResult out;
    WorkloadModel model = initial_model(dataset, k, config, rng);
    FloorMask mask;
    double previous = -std::numeric_limits<double>::infinity();
    Statistics stats(k);
    for (int iter = 0; iter < config.max_iters; ++iter) {
        stats = collect(dataset, model, config.steps);
        out.trace.push_back(stats.log_likelihood);
        out.iterations = iter + 1;
        if (iter > 0) {
            const double rel = (stats.log_likelihood - previous) / std::max(1.0, std::abs(previous));
            if (rel < config.tol) {
                out.converged = true;
                break;
            }
        }
        previous = stats.log_likelihood;
        model = maximize(stats, model, config.variance_floor, &mask);
    }
    if (!out.converged) {
        // the final M-step's model is unscored; score it so the trace ends on the returned model
        stats = collect(dataset, model, config.steps);
        out.trace.push_back(stats.log_likelihood);
    }
    const double total = stats.occupancy.sum();
    for (Eigen::Index w = 0; w < k; ++w)
        if (stats.occupancy(w) < std::max(1.0, 1e-3 * total)) out.degenerate = true;
    out.model = relabel_by_reaction_time(to_point_masses(model, mask));
    out.final_ll = dataset_log_likelihood(out.model, dataset, config.steps);
    return out;
}

} // namespace

int count_parameters(const WorkloadModel& model) {
    const int k = static_cast<int>(model.num_states());
    int p = (k - 1) + 2 * k * (k - 1);
    for (const auto& per_action : model.emissions)
        for (const auto& set : per_action)
            for (const auto& ch : set) p += ch.kind == ChannelKind::Gaussian ? 2 : 1;
    return p;
}

double dataset_log_likelihood(const WorkloadModel& model, std::span<const TaskTrace> dataset,
                              const ChannelSteps& steps) {
    const auto tol = matching_tolerance(steps);
    double ll = 0;
    for (const auto& tr : dataset) ll += forward_filter(model, tr, tol).log_likelihood;
    return ll;
}

WorkloadModel em_step(std::span<const TaskTrace> dataset, const WorkloadModel& model, const EmConfig& config,
                      double* log_likelihood_before) {
    const Statistics stats = collect(dataset, model, config.steps);
    if (log_likelihood_before) *log_likelihood_before = stats.log_likelihood;
    return maximize(stats, model, config.variance_floor, nullptr);
}

WorkloadModel relabel_by_reaction_time(const WorkloadModel& model) {
    const Eigen::Index k = model.num_states();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    const auto& rt = model.emissions[index_of(ActionId::N)];
    std::stable_sort(perm.begin(), perm.end(), [&](Eigen::Index a, Eigen::Index b) {
        return rt[static_cast<std::size_t>(a)][2].expectation() < rt[static_cast<std::size_t>(b)][2].expectation();
    });
    return permute_states(model, perm);
}

FitReport em_fit(std::span<const TaskTrace> dataset, int num_states, const EmConfig& config) {
    if (dataset.empty()) throw InvalidArgument("dataset is empty");
    if (num_states < 1) throw InvalidArgument("number of hidden states must be positive");
    if (config.restarts < 1 || config.max_iters < 1) throw InvalidArgument("restarts and max_iters must be positive");
    for (const auto& tr : dataset) validate(tr);

    FitReport report;
    report.num_trajectories = static_cast<int>(dataset.size());
    report.normalize_criteria = config.normalize_criteria;
    RestartResult best;
    for (int r = 0; r < config.restarts; ++r) {
        RestartResult res = run_restart(dataset, num_states, config, derive_seed(config.seed, static_cast<std::uint64_t>(r)));
        report.restart_traces.push_back(res.trace);
        if (res.final_ll > best.final_ll) {
            best = std::move(res);
            report.best_restart = r;
        }
    }
    if (!std::isfinite(best.final_ll)) throw DegenerateEvidence("no restart produced a finite log-likelihood");
    report.model = best.model;
    report.loglik_trace = best.trace;
    report.log_likelihood = best.final_ll;
    report.converged = best.converged;
    report.iterations = best.iterations;
    report.degenerate_states = best.degenerate;
    report.num_params = count_parameters(report.model);
    return report;
}

InformationCriteria information_criteria(const FitReport& report) {
    const double p = report.num_params;
    const double n = report.num_trajectories;
    InformationCriteria ic{2 * p - 2 * report.log_likelihood, p * std::log(n) - 2 * report.log_likelihood};
    if (report.normalize_criteria && n > 0) {
        ic.aic /= n;
        ic.bic /= n;
    }
    return ic;
}

int argmin_criterion(std::span<const SelectionRow> table, Criterion criterion) {
    int best = -1;
    double best_value = std::numeric_limits<double>::infinity();
    for (const auto& row : table) {
        if (!row.error.empty()) continue;
        const double v = criterion == Criterion::Aic ? row.criteria.aic : row.criteria.bic;
        if (v < best_value || (v == best_value && best >= 0 && row.k < best)) {
            best_value = v;
            best = row.k;
        }
    }
    return best;
}

SelectionResult select_model(std::span<const TaskTrace> dataset, std::span<const int> candidates,
                             const EmConfig& config, Criterion criterion) {
    if (candidates.empty()) throw InvalidArgument("no candidate state counts");
    SelectionResult out;
    std::vector<FitReport> fits;
    for (int k : candidates) {
        SelectionRow row;
        row.k = k;
        try {
            FitReport fit = em_fit(dataset, k, config);
            row.num_params = fit.num_params;
            row.log_likelihood = fit.log_likelihood;
            row.criteria = information_criteria(fit);
            row.converged = fit.converged;
            fits.push_back(std::move(fit));
        } catch (const Error& e) {
            row.error = e.what();
            fits.emplace_back();
        }
        out.table.push_back(row);
    }
    out.best_k = argmin_criterion(out.table, criterion);
    if (out.best_k < 0) throw Error("every candidate fit failed");
    for (std::size_t i = 0; i < out.table.size(); ++i)
        if (out.table[i].k == out.best_k && out.table[i].error.empty()) {
            out.best = fits[i];
            break;
        }
    return out;
}

} // namespace fidelity

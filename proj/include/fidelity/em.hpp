#pragma once

#include "fidelity/filter.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace fidelity {

struct EmConfig {
    int restarts = 10;
    int max_iters = 500;
    /// Stop when the relative log-likelihood improvement drops below this.
    double tol = 1e-6;
    /// Channel-unit squared; fitted variances below it become point masses.
    double variance_floor = 1e-4;
    std::uint64_t seed = 0;
    ChannelSteps steps{};
    /// Report AIC/BIC divided by the number of trajectories.
    bool normalize_criteria = false;
};

struct FitReport {
    WorkloadModel model;
    /// Per-iteration total log-likelihood of the winning restart.
    std::vector<double> loglik_trace;
    std::vector<std::vector<double>> restart_traces;
    /// Log-likelihood of `model` after point-mass conversion and relabeling.
    double log_likelihood = 0;
    int num_params = 0;
    int num_trajectories = 0;
    int iterations = 0;
    int best_restart = 0;
    bool converged = false;
    /// Some state carries (almost) no posterior mass: K exceeds the distinguishable support.
    bool degenerate_states = false;
    bool normalize_criteria = false;
};

/// Free parameters: initial (K-1), two transition matrices, and 2 per Gaussian / 1 per point mass.
int count_parameters(const WorkloadModel& model);

/// Extended Baum-Welch for the action-conditioned HMM with multiple random restarts.
FitReport em_fit(std::span<const TaskTrace> dataset, int num_states, const EmConfig& config = {});

/// Per-trace sufficient statistics pass; exposed for tests of monotonicity.
WorkloadModel em_step(std::span<const TaskTrace> dataset, const WorkloadModel& model, const EmConfig& config,
                      double* log_likelihood_before = nullptr);

double dataset_log_likelihood(const WorkloadModel& model, std::span<const TaskTrace> dataset,
                              const ChannelSteps& steps = {});

/// Sorts states so mean reaction time under N increases with the state index.
WorkloadModel relabel_by_reaction_time(const WorkloadModel& model);

struct InformationCriteria {
    double aic = 0;
    double bic = 0;
};

InformationCriteria information_criteria(const FitReport& report);

enum class Criterion { Aic, Bic };

struct SelectionRow {
    int k = 0;
    int num_params = 0;
    double log_likelihood = 0;
    InformationCriteria criteria;
    bool converged = false;
    std::string error; // nonempty when the fit for this K failed
};

struct SelectionResult {
    int best_k = 0;
    std::vector<SelectionRow> table;
    FitReport best;
};

/// K of the row with the smallest criterion; failed rows are skipped, ties go to the smaller K.
int argmin_criterion(std::span<const SelectionRow> table, Criterion criterion);

/// Fits each candidate and returns the argmin of the criterion; ties go to the smaller K.
SelectionResult select_model(std::span<const TaskTrace> dataset, std::span<const int> candidates,
                             const EmConfig& config = {}, Criterion criterion = Criterion::Aic);

} // namespace fidelity

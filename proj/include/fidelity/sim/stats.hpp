#pragma once

#include "fidelity/rng.hpp"

#include <span>
#include <vector>

namespace fidelity::sim {

struct GroupStats {
    std::size_t n = 0;
    double mean = 0;
    /// Sample standard deviation (n - 1 denominator).
    double sd = 0;
};

GroupStats group_stats(std::span<const double> xs);

struct GroupComparison {
    GroupStats a, b;
    /// (mean_a - mean_b) / pooled SD.
    double cohen_d = 0;
    /// Welch two-sample statistic, degrees of freedom, and two-sided p-value.
    double t_statistic = 0;
    double df = 0;
    double p_value = 1;
};

/// Throws InvalidArgument when a group has fewer than two samples or both groups have
/// zero variance.
GroupComparison compare_groups(std::span<const double> a, std::span<const double> b);

/// n normal draws shifted and scaled so the sample mean and SD equal the targets exactly.
std::vector<double> moment_matched_sample(std::size_t n, double mean, double sd, Rng& rng);

} // namespace fidelity::sim

#include "fidelity/sim/stats.hpp"

#include "fidelity/types.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numeric>

namespace fidelity::sim {

GroupStats group_stats(std::span<const double> xs) {
    GroupStats s;
    s.n = xs.size();
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

GroupComparison compare_groups(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw InvalidArgument("each group needs at least two samples");
    GroupComparison out;
    out.a = group_stats(a);
    out.b = group_stats(b);
    const double na = static_cast<double>(out.a.n), nb = static_cast<double>(out.b.n);
    const double va = out.a.sd * out.a.sd, vb = out.b.sd * out.b.sd;
    const double pooled = std::sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2));
    if (!(pooled > 0)) throw InvalidArgument("both groups have zero variance");
    const double diff = out.a.mean - out.b.mean;
    out.cohen_d = diff / pooled;

    const double sa = va / na, sb = vb / nb;
    const double se = std::sqrt(sa + sb);
    out.t_statistic = diff / se;
    out.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
    if (diff == 0) {
        out.p_value = 1.0;
    } else {
        const boost::math::students_t dist(out.df);
        out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t_statistic)));
    }
    return out;
}

std::vector<double> moment_matched_sample(std::size_t n, double mean, double sd, Rng& rng) {
    if (n < 2) throw InvalidArgument("moment matching needs at least two samples");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> xs(n);
    for (auto& x : xs) x = gauss(rng);
    const auto s = group_stats(xs);
    for (auto& x : xs) x = mean + sd * (x - s.mean) / s.sd;
    return xs;
}

} // namespace fidelity::sim

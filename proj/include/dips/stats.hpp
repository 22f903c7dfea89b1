#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "core.hpp"

namespace dips::stats {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw ArgumentError("mean of empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Unbiased sample variance (n - 1 denominator); 0 for a single value.
inline double variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

inline double standard_error(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

/// Linear-interpolation quantile (numpy's default), q in [0, 1].
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw ArgumentError("quantile of empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("quantile level must lie in [0,1]");
    std::sort(xs.begin(), xs.end());
    const double pos = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

struct PairedTest {
    double mean_difference = 0.0;  // mean(a - b)
    double t_statistic = 0.0;
    double p_greater = 1.0;        // one-sided p-value for H1: mean(a - b) > 0
    std::size_t n = 0;
};

/// Paired t-test on a - b.
inline PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ArgumentError("paired test needs two equal samples of size >= 2");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    PairedTest r;
    r.n = d.size();
    r.mean_difference = mean(d);
    const double se = standard_error(d);
    if (se == 0.0) {
        r.t_statistic = r.mean_difference > 0 ? INFINITY : (r.mean_difference < 0 ? -INFINITY : 0.0);
        r.p_greater = r.mean_difference > 0 ? 0.0 : (r.mean_difference < 0 ? 1.0 : 0.5);
        return r;
    }
    r.t_statistic = r.mean_difference / se;
    boost::math::students_t dist(static_cast<double>(d.size() - 1));
    r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t_statistic));
    return r;
}

}  // namespace dips::stats

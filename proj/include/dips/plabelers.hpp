#pragma once

// Pseudo-label selectors s: turn model predictions over the unlabeled pool
// into (sample, class) pairs. A sample is pseudo-labeled at most once, with
// its argmax class (or its transport column for the Sinkhorn allocator).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace dips {

enum class PlabelerKind { greedy, ups, flexmatch, sla_lite };

inline std::string to_string(PlabelerKind k) {
    switch (k) {
        case PlabelerKind::greedy: return "greedy";
        case PlabelerKind::ups: return "ups";
        case PlabelerKind::flexmatch: return "flexmatch";
        case PlabelerKind::sla_lite: return "sla_lite";
    }
    return "?";
}

inline PlabelerKind parse_plabeler_kind(const std::string& s) {
    if (s == "greedy" || s == "pl") return PlabelerKind::greedy;
    if (s == "ups") return PlabelerKind::ups;
    if (s == "flexmatch") return PlabelerKind::flexmatch;
    if (s == "sla_lite" || s == "sla") return PlabelerKind::sla_lite;
    throw ArgumentError("unknown pseudo-labeler kind: " + s);
}

struct PlabelerConfig {
    PlabelerKind kind = PlabelerKind::greedy;
    double tau_p = 0.8;
    double tau_n = 0.2;
    double kappa_p = 0.2;
    double kappa_n = 0.05;
    int ensemble_size = 10;
    double flex_base_tau = 0.9;
    double sinkhorn_epsilon = 0.05;
    int sinkhorn_iters = 500;
    double sinkhorn_tolerance = 1e-6;

    void validate() const {
        if (!(tau_n < tau_p)) throw ArgumentError("tau_n must be below tau_p");
        if (!(kappa_n < kappa_p)) throw ArgumentError("kappa_n must be below kappa_p");
        if (ensemble_size < 2) throw ArgumentError("ensemble_size must be >= 2");
        if (!(flex_base_tau > 0.0 && flex_base_tau <= 1.0)) throw ArgumentError("flex_base_tau must lie in (0,1]");
        if (!(sinkhorn_epsilon > 0.0)) throw ArgumentError("sinkhorn_epsilon must be > 0");
        if (sinkhorn_iters < 1) throw ArgumentError("sinkhorn_iters must be >= 1");
    }
};

struct PseudoLabel {
    std::size_t index = 0;  // row of the probability matrix (unlabeled pool position)
    ClassIndex label = 0;
    int iteration = 0;
    double confidence = 0.0;  // model probability of `label` at assignment

    friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct PseudoLabelBatch {
    std::vector<PseudoLabel> entries;
    PlabelerKind method = PlabelerKind::greedy;

    std::size_t size() const noexcept { return entries.size(); }
    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        for (const auto& e : entries) out.push_back(e.index);
        return out;
    }
};

namespace detail {

inline bool eligible_row(std::span<const char> eligible, std::size_t i) { return eligible.empty() || eligible[i]; }

inline void check_probs(const Matrix& probs) {
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        double s = 0.0;
        for (double v : probs.row(i)) {
            if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("probability outside [0,1]");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-6) throw ArgumentError("probability row does not sum to 1");
    }
}

}  // namespace detail

/// Selects rows whose argmax probability is >= tau_p. `eligible` (optional)
/// masks out rows already pseudo-labeled.
inline PseudoLabelBatch greedy_select(const Matrix& probs, const PlabelerConfig& config, int iteration = 0,
                                      std::span<const char> eligible = {}) {
    detail::check_probs(probs);
    PseudoLabelBatch batch;
    batch.method = PlabelerKind::greedy;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        if (!detail::eligible_row(eligible, i)) continue;
        const ClassIndex k = argmax(probs.row(i));
        const double p = probs(i, static_cast<std::size_t>(k));
        if (p >= config.tau_p) batch.entries.push_back({i, k, iteration, p});
    }
    return batch;
}

/// Greedy rule gated by the ensemble standard deviation of the argmax class.
inline PseudoLabelBatch ups_select(const Matrix& probs, const Matrix& uncertainty, const PlabelerConfig& config,
                                   int iteration = 0, std::span<const char> eligible = {}) {
    if (probs.rows() != uncertainty.rows() || probs.cols() != uncertainty.cols())
        throw ShapeError("probability and uncertainty matrices differ in shape");
    detail::check_probs(probs);
    PseudoLabelBatch batch;
    batch.method = PlabelerKind::ups;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        if (!detail::eligible_row(eligible, i)) continue;
        const ClassIndex k = argmax(probs.row(i));
        const double p = probs(i, static_cast<std::size_t>(k));
        if (p >= config.tau_p && uncertainty(i, static_cast<std::size_t>(k)) <= config.kappa_p)
            batch.entries.push_back({i, k, iteration, p});
    }
    return batch;
}

/// Class thresholds base * count_c / max_c count_c; all equal to base while
/// every count is zero.
inline std::vector<double> flexmatch_thresholds(std::span<const std::size_t> status, double base_tau) {
    std::vector<double> thr(status.size(), base_tau);
    const std::size_t top = status.empty() ? 0 : *std::max_element(status.begin(), status.end());
    if (top == 0) return thr;
    for (std::size_t c = 0; c < status.size(); ++c)
        thr[c] = base_tau * static_cast<double>(status[c]) / static_cast<double>(top);
    return thr;
}

/// Selects rows whose max probability strictly exceeds the dynamic threshold
/// of their argmax class.
inline PseudoLabelBatch flexmatch_select(const Matrix& probs, std::span<const std::size_t> status,
                                         const PlabelerConfig& config, int iteration = 0,
                                         std::span<const char> eligible = {}) {
    if (status.size() != probs.cols()) throw ShapeError("one learning-status count per class is required");
    detail::check_probs(probs);
    const auto thr = flexmatch_thresholds(status, config.flex_base_tau);
    PseudoLabelBatch batch;
    batch.method = PlabelerKind::flexmatch;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        if (!detail::eligible_row(eligible, i)) continue;
        const ClassIndex k = argmax(probs.row(i));
        const double p = probs(i, static_cast<std::size_t>(k));
        if (p > thr[static_cast<std::size_t>(k)]) batch.entries.push_back({i, k, iteration, p});
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Sinkhorn allocation

struct SinkhornResult {
    Matrix plan;
    bool converged = false;
    int iterations = 0;
    double max_violation = 0.0;  // largest row or column marginal error of `plan`
};

/// Entropic optimal transport between rows with marginals `row_mass` and
/// columns with marginals `col_mass` under `cost`, solved in the log domain.
/// Columns with zero mass receive nothing.
inline SinkhornResult sinkhorn(const Matrix& cost, std::span<const double> row_mass, std::span<const double> col_mass,
                               double epsilon, int max_iters, double tolerance) {
    const std::size_t n = cost.rows(), C = cost.cols();
    if (row_mass.size() != n || col_mass.size() != C) throw ShapeError("marginal lengths do not match the cost matrix");
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    std::vector<double> log_a(n), log_b(C);
    for (std::size_t i = 0; i < n; ++i) log_a[i] = row_mass[i] > 0 ? std::log(row_mass[i]) : kNegInf;
    for (std::size_t k = 0; k < C; ++k) log_b[k] = col_mass[k] > 0 ? std::log(col_mass[k]) : kNegInf;

    Matrix logK(n, C);
    for (std::size_t q = 0; q < logK.data().size(); ++q) logK.data()[q] = -cost.data()[q] / epsilon;
    std::vector<double> u(n, 0.0), v(C, 0.0);

    auto lse = [](std::span<const double> xs) {
        double m = kNegInf;
        for (double x : xs) m = std::max(m, x);
        if (m == kNegInf) return kNegInf;
        double s = 0.0;
        for (double x : xs) s += std::exp(x - m);
        return m + std::log(s);
    };

    SinkhornResult res;
    std::vector<double> buf(std::max(n, C));
    auto row_error = [&] {
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < C; ++k)
                if (log_b[k] != kNegInf) s += std::exp(u[i] + logK(i, k) + v[k]);
            err = std::max(err, std::abs(s - row_mass[i]));
        }
        return err;
    };
    for (int it = 1; it <= max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < C; ++k) buf[k] = log_b[k] == kNegInf ? kNegInf : logK(i, k) + v[k];
            u[i] = log_a[i] == kNegInf ? kNegInf : log_a[i] - lse(std::span<const double>(buf.data(), C));
        }
        for (std::size_t k = 0; k < C; ++k) {
            for (std::size_t i = 0; i < n; ++i) buf[i] = u[i] == kNegInf ? kNegInf : logK(i, k) + u[i];
            v[k] = log_b[k] == kNegInf ? kNegInf : log_b[k] - lse(std::span<const double>(buf.data(), n));
        }
        res.iterations = it;
        if (row_error() < tolerance) {
            res.converged = true;
            break;
        }
    }

    res.plan = Matrix(n, C);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < C; ++k)
            res.plan(i, k) = (u[i] == kNegInf || v[k] == kNegInf) ? 0.0 : std::exp(u[i] + logK(i, k) + v[k]);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < C; ++k) s += res.plan(i, k);
        err = std::max(err, std::abs(s - row_mass[i]));
    }
    for (std::size_t k = 0; k < C; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += res.plan(i, k);
        err = std::max(err, std::abs(s - col_mass[k]));
    }
    res.max_violation = err;
    return res;
}

struct SinkhornAllocation {
    PseudoLabelBatch batch;
    SinkhornResult transport;  // over the eligible rows only, in row order
    std::vector<std::size_t> rows;  // probability-matrix row of each transport row
};

/// Transport between eligible rows (uniform mass) and classes
/// (`class_marginals`) with cost -log(clipped p); each row takes its argmax
/// transport column and is kept when the model's probability of that class
/// is >= tau_p. Non-convergence is reported in `transport.converged`.
inline SinkhornAllocation sinkhorn_allocate(const Matrix& probs, std::span<const double> class_marginals,
                                            const PlabelerConfig& config, int iteration = 0,
                                            std::span<const char> eligible = {}) {
    config.validate();
    if (class_marginals.size() != probs.cols()) throw ShapeError("one marginal per class is required");
    double total = 0.0;
    for (double b : class_marginals) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw ArgumentError("class marginals must be finite and >= 0");
        total += b;
    }
    if (total <= 0.0) throw ArgumentError("class marginals are all zero");
    detail::check_probs(probs);

    SinkhornAllocation out;
    out.batch.method = PlabelerKind::sla_lite;
    for (std::size_t i = 0; i < probs.rows(); ++i)
        if (detail::eligible_row(eligible, i)) out.rows.push_back(i);
    if (out.rows.empty()) return out;

    Matrix cost(out.rows.size(), probs.cols());
    for (std::size_t r = 0; r < out.rows.size(); ++r)
        for (std::size_t k = 0; k < probs.cols(); ++k) cost(r, k) = -std::log(clip_prob(probs(out.rows[r], k)));
    const std::vector<double> row_mass(out.rows.size(), total / static_cast<double>(out.rows.size()));
    out.transport = sinkhorn(cost, row_mass, class_marginals, config.sinkhorn_epsilon, config.sinkhorn_iters,
                             config.sinkhorn_tolerance);

    for (std::size_t r = 0; r < out.rows.size(); ++r) {
        const ClassIndex k = argmax(out.transport.plan.row(r));
        const double p = probs(out.rows[r], static_cast<std::size_t>(k));
        if (p >= config.tau_p) out.batch.entries.push_back({out.rows[r], k, iteration, p});
    }
    return out;
}

/// Class proportions of the labeled set scaled to `pool_size`.
inline std::vector<double> derive_class_marginals(const Dataset& labeled, std::size_t pool_size) {
    if (!labeled.labels || labeled.size() == 0) throw ArgumentError("class marginals need a non-empty labeled set");
    if (distinct_classes(*labeled.labels, labeled.class_count) < 2)
        throw ArgumentError("class marginals are degenerate: labeled set holds a single class");
    const auto counts = class_counts(*labeled.labels, labeled.class_count);
    std::vector<double> out(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k)
        out[k] = static_cast<double>(counts[k]) / static_cast<double>(labeled.size()) * static_cast<double>(pool_size);
    return out;
}

/// sample,label,iteration,confidence
inline void write_batch_csv(std::ostream& out, const PseudoLabelBatch& batch) {
    out << "sample,label,iteration,confidence\n";
    char buf[32];
    for (const auto& e : batch.entries) {
        std::snprintf(buf, sizeof buf, "%.17g", e.confidence);
        out << e.index << ',' << e.label << ',' << e.iteration << ',' << buf << '\n';
    }
}

}  // namespace dips

#pragma once

// Learning-dynamics trace: per-sample, per-class running means over training
// checkpoints of the predicted probability p, of p(1-p), and of the clipped
// negative log-likelihood. Storing every class lets a label be chosen after
// recording (pseudo-labels come from the model that produced the dynamics).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace dips {

struct TraceOptions {
    /// Checkpoints with 1-based index <= skip_first are ignored (window ablation).
    int skip_first = 0;
    /// Keep every checkpoint matrix; needed only by the fluctuation selector.
    bool keep_stream = false;
};

class DynamicsTrace {
public:
    DynamicsTrace() = default;
    DynamicsTrace(std::size_t samples, int class_count, TraceOptions options = {})
        : options_(options),
          mean_p_(samples, static_cast<std::size_t>(class_count)),
          mean_pq_(samples, static_cast<std::size_t>(class_count)),
          mean_nll_(samples, static_cast<std::size_t>(class_count)) {
        if (class_count < 1) throw ArgumentError("class_count must be positive");
        if (options.skip_first < 0) throw ArgumentError("skip_first must be >= 0");
    }

    std::size_t samples() const noexcept { return mean_p_.rows(); }
    int class_count() const noexcept { return static_cast<int>(mean_p_.cols()); }
    /// Number of checkpoints folded into the averages.
    int e_seen() const noexcept { return e_seen_; }
    /// Number of checkpoints offered, including skipped ones.
    int checkpoints_observed() const noexcept { return observed_; }
    const TraceOptions& options() const noexcept { return options_; }

    const Matrix& mean_p() const noexcept { return mean_p_; }
    const Matrix& mean_pq() const noexcept { return mean_pq_; }
    const Matrix& mean_nll() const noexcept { return mean_nll_; }
    const std::vector<Matrix>& stream() const noexcept { return stream_; }

    /// Folds one checkpoint's |samples| x C probability matrix into the
    /// running means with mu <- mu + (m - mu) / e.
    void update(const Matrix& probs) {
        if (probs.rows() != mean_p_.rows() || probs.cols() != mean_p_.cols())
            throw ShapeError("checkpoint matrix shape does not match the trace");
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            double s = 0.0;
            for (double v : probs.row(i)) {
                if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("checkpoint probability outside [0,1]");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-6) throw ArgumentError("checkpoint row is not a distribution");
        }
        ++observed_;
        if (observed_ <= options_.skip_first) return;
        ++e_seen_;
        const double inv = 1.0 / static_cast<double>(e_seen_);
        auto& mp = mean_p_.data();
        auto& mpq = mean_pq_.data();
        auto& mnll = mean_nll_.data();
        const auto& m = probs.data();
        for (std::size_t q = 0; q < m.size(); ++q) {
            const double p = m[q];
            mp[q] = std::clamp(mp[q] + (p - mp[q]) * inv, 0.0, 1.0);
            mpq[q] = std::clamp(mpq[q] + (p * (1.0 - p) - mpq[q]) * inv, 0.0, 0.25);
            mnll[q] += (-std::log(clip_prob(p)) - mnll[q]) * inv;
        }
        if (options_.keep_stream) stream_.push_back(probs);
    }

    /// Average confidence of sample i for label k.
    double confidence(std::size_t i, ClassIndex k) const {
        check(i, k);
        return mean_p_(i, static_cast<std::size_t>(k));
    }

    /// Aleatoric uncertainty of sample i for label k, in [0, 0.25].
    double aleatoric(std::size_t i, ClassIndex k) const {
        check(i, k);
        return mean_pq_(i, static_cast<std::size_t>(k));
    }

    /// Mean cross-entropy loss over checkpoints of sample i for label k.
    double mean_loss(std::size_t i, ClassIndex k) const {
        check(i, k);
        return mean_nll_(i, static_cast<std::size_t>(k));
    }

private:
    void check(std::size_t i, ClassIndex k) const {
        if (e_seen_ == 0) throw NoDynamicsError("trace has not seen any checkpoint");
        if (i >= samples()) throw ArgumentError("sample index out of range");
        if (k < 0 || k >= class_count()) throw ArgumentError("label out of range");
    }

    TraceOptions options_;
    Matrix mean_p_;
    Matrix mean_pq_;
    Matrix mean_nll_;
    std::vector<Matrix> stream_;
    int e_seen_ = 0;
    int observed_ = 0;
};

inline DynamicsTrace& update_running_stats(DynamicsTrace& trace, const Matrix& checkpoint_probs) {
    trace.update(checkpoint_probs);
    return trace;
}

struct SampleMetrics {
    std::vector<double> confidence;
    std::vector<double> aleatoric;
};

/// Gathers the label coordinate of each statistic for samples `indices`
/// (trace rows) carrying `labels`.
inline SampleMetrics extract_for_labels(const DynamicsTrace& trace, std::span<const std::size_t> indices,
                                        std::span<const ClassIndex> labels) {
    if (indices.size() != labels.size()) throw ShapeError("indices and labels differ in length");
    SampleMetrics out;
    out.confidence.reserve(indices.size());
    out.aleatoric.reserve(indices.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        out.confidence.push_back(trace.confidence(indices[j], labels[j]));
        out.aleatoric.push_back(trace.aleatoric(indices[j], labels[j]));
    }
    return out;
}

/// Whole-trace variant: labels[i] belongs to trace row i.
inline SampleMetrics extract_for_labels(const DynamicsTrace& trace, std::span<const ClassIndex> labels) {
    if (labels.size() != trace.samples()) throw ShapeError("one label per traced sample is required");
    std::vector<std::size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return extract_for_labels(trace, idx, labels);
}

/// Per-checkpoint probability of `label` for trace row i (requires keep_stream).
inline std::vector<double> label_stream(const DynamicsTrace& trace, std::size_t i, ClassIndex label) {
    if (!trace.options().keep_stream) throw ArgumentError("trace was recorded without keep_stream");
    std::vector<double> s;
    s.reserve(trace.stream().size());
    for (const auto& m : trace.stream()) s.push_back(m(i, static_cast<std::size_t>(label)));
    return s;
}

// ---------------------------------------------------------------------------
// Export

inline void write_trace_csv(std::ostream& out, const DynamicsTrace& trace) {
    out << "sample,e_seen";
    for (int k = 0; k < trace.class_count(); ++k) out << ",mean_p_" << k;
    for (int k = 0; k < trace.class_count(); ++k) out << ",mean_pq_" << k;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < trace.samples(); ++i) {
        out << i << ',' << trace.e_seen();
        for (double v : trace.mean_p().row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        for (double v : trace.mean_pq().row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

inline nlohmann::json trace_to_json(const DynamicsTrace& trace) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < trace.samples(); ++i) {
        auto p = trace.mean_p().row(i);
        auto pq = trace.mean_pq().row(i);
        rows.push_back({{"sample", i},
                        {"mean_p", std::vector<double>(p.begin(), p.end())},
                        {"mean_pq", std::vector<double>(pq.begin(), pq.end())}});
    }
    return {{"e_seen", trace.e_seen()}, {"class_count", trace.class_count()}, {"samples", rows}};
}

}  // namespace dips

#pragma once

// Sample selectors r: map per-sample learning-dynamics metrics over a
// candidate set to a keep mask. DIPS keeps samples that are confidently and
// consistently predicted; the others are loss- or forgetting-based baselines.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "stats.hpp"

namespace dips {

enum class SelectorKind { dips, identity, small_loss, fluctuation };

inline std::string to_string(SelectorKind k) {
    switch (k) {
        case SelectorKind::dips: return "dips";
        case SelectorKind::identity: return "identity";
        case SelectorKind::small_loss: return "small_loss";
        case SelectorKind::fluctuation: return "fluctuation";
    }
    return "?";
}

inline SelectorKind parse_selector_kind(const std::string& s) {
    if (s == "dips") return SelectorKind::dips;
    if (s == "identity" || s == "none") return SelectorKind::identity;
    if (s == "small_loss") return SelectorKind::small_loss;
    if (s == "fluctuation") return SelectorKind::fluctuation;
    throw ArgumentError("unknown selector kind: " + s);
}

enum class Verdict { useful, harmful };

struct AleatoricThreshold {
    enum class Mode { fixed, adaptive } mode = Mode::adaptive;
    /// Cutoff for fixed mode, range factor for adaptive mode.
    double value = 0.75;
    /// Adaptive mode only: use min + factor * range instead of factor * range.
    bool offset_by_min = false;

    static AleatoricThreshold fixed(double v) { return {Mode::fixed, v, false}; }
    static AleatoricThreshold adaptive(double factor = 0.75, bool offset = false) { return {Mode::adaptive, factor, offset}; }
};

struct SelectorConfig {
    SelectorKind kind = SelectorKind::dips;
    double tau_conf = 0.8;
    /// When set, tau_conf is replaced by this quantile of the candidates' confidences.
    std::optional<double> tau_conf_percentile;
    AleatoricThreshold tau_al = AleatoricThreshold::adaptive(0.75);
    double keep_fraction = 0.8;           // small_loss
    double fluctuation_percentile = 0.8;  // fluctuation rejection cutoff
    bool smoothing = true;                // fluctuation
    /// DIPS: a class left without Useful samples gets back its members that
    /// pass the confidence rule alone.
    bool class_fallback = true;

    void validate() const {
        if (!(tau_conf >= 0.0 && tau_conf <= 1.0)) throw ArgumentError("tau_conf must lie in [0,1]");
        if (tau_conf_percentile && !(*tau_conf_percentile >= 0.0 && *tau_conf_percentile <= 1.0))
            throw ArgumentError("confidence percentile must lie in [0,1]");
        if (tau_al.mode == AleatoricThreshold::Mode::adaptive && !(tau_al.value > 0.0 && tau_al.value <= 1.0))
            throw ArgumentError("adaptive factor must lie in (0,1]");
        if (tau_al.mode == AleatoricThreshold::Mode::fixed && !(tau_al.value >= 0.0))
            throw ArgumentError("fixed aleatoric threshold must be >= 0");
        if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("keep_fraction must lie in (0,1]");
        if (!(fluctuation_percentile >= 0.0 && fluctuation_percentile <= 1.0))
            throw ArgumentError("fluctuation percentile must lie in [0,1]");
    }
};

struct Characterization {
    std::size_t sample_index = 0;
    Verdict verdict = Verdict::harmful;
    double confidence = 0.0;
    double aleatoric = 0.0;
    bool rescued = false;  // kept by the safeguard despite a Harmful verdict
};

struct Selection {
    std::vector<char> keep;                       // one flag per candidate
    std::vector<Characterization> characterizations;  // DIPS only
    double tau_conf = 0.0;
    double tau_al = 0.0;
    bool safeguard_applied = false;

    std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)); }
};

/// factor * (max - min) of the candidates' aleatoric values (plus min when
/// `offset_by_min`).
inline double adaptive_al_threshold(std::span<const double> aleatoric, double factor, bool offset_by_min = false) {
    if (aleatoric.empty()) throw ArgumentError("adaptive threshold needs at least one value");
    const auto [lo, hi] = std::minmax_element(aleatoric.begin(), aleatoric.end());
    return factor * (*hi - *lo) + (offset_by_min ? *lo : 0.0);
}

/// Guarantees the kept set is non-empty and covers every class present among
/// the candidates: for each uncovered class, keeps its highest-scoring
/// candidate (lowest index on ties). Returns true if anything was added.
inline bool apply_class_coverage_safeguard(std::vector<char>& keep, std::span<const ClassIndex> labels,
                                           std::span<const double> score) {
    if (keep.size() != labels.size() || keep.size() != score.size()) throw ShapeError("safeguard inputs differ in length");
    if (keep.empty()) return false;
    const ClassIndex max_label = *std::max_element(labels.begin(), labels.end());
    std::vector<char> covered(static_cast<std::size_t>(max_label) + 1, 0);
    std::vector<long> best(static_cast<std::size_t>(max_label) + 1, -1);
    for (std::size_t j = 0; j < keep.size(); ++j) {
        const auto c = static_cast<std::size_t>(labels[j]);
        if (keep[j]) covered[c] = 1;
        if (best[c] < 0 || score[j] > score[static_cast<std::size_t>(best[c])]) best[c] = static_cast<long>(j);
    }
    bool changed = false;
    for (std::size_t c = 0; c < best.size(); ++c) {
        if (best[c] >= 0 && !covered[c]) {
            keep[static_cast<std::size_t>(best[c])] = 1;
            changed = true;
        }
    }
    return changed;
}

/// For every class present among the candidates but absent from `keep`, keeps
/// its members with confidence >= tau_conf. Returns true if anything was added.
inline bool admit_confident_in_uncovered(std::vector<char>& keep, std::span<const ClassIndex> labels,
                                         std::span<const double> confidence, double tau_conf) {
    if (keep.empty()) return false;
    const ClassIndex max_label = *std::max_element(labels.begin(), labels.end());
    std::vector<char> covered(static_cast<std::size_t>(max_label) + 1, 0);
    for (std::size_t j = 0; j < keep.size(); ++j)
        if (keep[j]) covered[static_cast<std::size_t>(labels[j])] = 1;
    bool changed = false;
    for (std::size_t j = 0; j < keep.size(); ++j) {
        if (!keep[j] && !covered[static_cast<std::size_t>(labels[j])] && confidence[j] >= tau_conf) {
            keep[j] = 1;
            changed = true;
        }
    }
    return changed;
}

/// Useful iff confidence >= tau_conf and aleatoric < tau_al. An adaptive
/// tau_al is computed on `al_reference` when given, else on the candidates.
/// When `labels` is given, classes left uncovered are repaired: first by the
/// confidence-only fallback (if enabled), then by the coverage safeguard.
inline Selection dips_select(std::span<const double> confidence, std::span<const double> aleatoric,
                             const SelectorConfig& config, std::span<const ClassIndex> labels = {},
                             std::span<const double> al_reference = {}) {
    config.validate();
    if (confidence.size() != aleatoric.size()) throw ShapeError("confidence and aleatoric vectors differ in length");
    if (!labels.empty() && labels.size() != confidence.size()) throw ShapeError("labels differ in length");
    Selection sel;
    const std::size_t n = confidence.size();
    sel.keep.assign(n, 0);
    if (n == 0) return sel;

    sel.tau_conf = config.tau_conf_percentile
                       ? stats::quantile(std::vector<double>(confidence.begin(), confidence.end()), *config.tau_conf_percentile)
                       : config.tau_conf;
    sel.tau_al = config.tau_al.mode == AleatoricThreshold::Mode::fixed
                     ? config.tau_al.value
                     : adaptive_al_threshold(al_reference.empty() ? aleatoric : al_reference, config.tau_al.value,
                                             config.tau_al.offset_by_min);

    sel.characterizations.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const bool useful = confidence[j] >= sel.tau_conf && aleatoric[j] < sel.tau_al;
        sel.characterizations[j] = {j, useful ? Verdict::useful : Verdict::harmful, confidence[j], aleatoric[j], false};
        sel.keep[j] = useful ? 1 : 0;
    }
    if (!labels.empty()) {
        const std::vector<char> before = sel.keep;
        if (config.class_fallback) sel.safeguard_applied = admit_confident_in_uncovered(sel.keep, labels, confidence, sel.tau_conf);
        sel.safeguard_applied = apply_class_coverage_safeguard(sel.keep, labels, confidence) || sel.safeguard_applied;
        for (std::size_t j = 0; j < n; ++j)
            if (sel.keep[j] && !before[j]) sel.characterizations[j].rescued = true;
    }
    return sel;
}

inline Selection identity_select(std::size_t candidates) {
    Selection sel;
    sel.keep.assign(candidates, 1);
    return sel;
}

/// Keeps the round(keep_fraction * n) candidates with the lowest mean loss;
/// ties go to the lower index.
inline Selection small_loss_select(std::span<const double> mean_losses, double keep_fraction) {
    if (mean_losses.empty()) throw ArgumentError("small-loss selection needs at least one candidate");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("keep_fraction must lie in (0,1]");
    for (double l : mean_losses)
        if (!std::isfinite(l)) throw ArgumentError("non-finite loss");
    const std::size_t n = mean_losses.size();
    const auto keep_count = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return mean_losses[a] < mean_losses[b]; });
    Selection sel;
    sel.keep.assign(n, 0);
    for (std::size_t j = 0; j < std::min(keep_count, n); ++j) sel.keep[order[j]] = 1;
    return sel;
}

/// Number of adjacent checkpoint pairs (e, e+1) where the label probability
/// goes from > 1/2 (correct) to < 1/2 (incorrect).
inline int fluctuation_count(std::span<const double> label_probs) {
    if (label_probs.size() < 2) throw ArgumentError("fluctuation needs at least two checkpoints");
    int count = 0;
    for (std::size_t e = 0; e + 1 < label_probs.size(); ++e)
        if (label_probs[e] > 0.5 && label_probs[e + 1] < 0.5) ++count;
    return count;
}

/// Fluctuation score per candidate: the transition count, or with smoothing
/// count/(E-1) + (1 - confidence).
inline std::vector<double> fluctuation_scores(const std::vector<std::vector<double>>& streams,
                                              std::span<const double> confidence, bool smoothing) {
    if (streams.size() != confidence.size()) throw ShapeError("streams and confidence differ in length");
    std::vector<double> scores(streams.size());
    for (std::size_t j = 0; j < streams.size(); ++j) {
        const double c = fluctuation_count(streams[j]);
        scores[j] = smoothing ? c / static_cast<double>(streams[j].size() - 1) + (1.0 - confidence[j]) : c;
    }
    return scores;
}

/// Rejects candidates whose score exceeds the configured percentile of all
/// candidate scores.
inline Selection fluctuation_select(const std::vector<std::vector<double>>& streams,
                                    std::span<const double> confidence, const SelectorConfig& config) {
    config.validate();
    Selection sel;
    if (streams.empty()) return sel;
    const auto scores = fluctuation_scores(streams, confidence, config.smoothing);
    const double cutoff = stats::quantile(scores, config.fluctuation_percentile);
    sel.keep.assign(scores.size(), 0);
    for (std::size_t j = 0; j < scores.size(); ++j) sel.keep[j] = scores[j] > cutoff ? 0 : 1;
    return sel;
}

// ---------------------------------------------------------------------------
// Export

inline const char* to_string(Verdict v) { return v == Verdict::useful ? "useful" : "harmful"; }

/// One row per characterization; `pseudo[j]` marks pseudo-labeled candidates.
inline void write_characterizations_csv(std::ostream& out, std::span<const Characterization> chars,
                                        std::span<const char> pseudo = {}) {
    if (!pseudo.empty() && pseudo.size() != chars.size()) throw ShapeError("provenance flags differ in length");
    out << "sample,provenance,confidence,aleatoric,verdict,rescued\n";
    char buf[64];
    for (std::size_t j = 0; j < chars.size(); ++j) {
        const auto& c = chars[j];
        std::snprintf(buf, sizeof buf, "%.17g,%.17g", c.confidence, c.aleatoric);
        out << c.sample_index << ',' << (!pseudo.empty() && pseudo[j] ? "pseudo" : "labeled") << ',' << buf << ','
            << to_string(c.verdict) << ',' << (c.rescued ? 1 : 0) << '\n';
    }
}

inline nlohmann::json characterizations_to_json(std::span<const Characterization> chars,
                                                std::span<const char> pseudo = {}) {
    if (!pseudo.empty() && pseudo.size() != chars.size()) throw ShapeError("provenance flags differ in length");
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t j = 0; j < chars.size(); ++j) {
        const auto& c = chars[j];
        rows.push_back({{"sample", c.sample_index},
                        {"provenance", !pseudo.empty() && pseudo[j] ? "pseudo" : "labeled"},
                        {"confidence", c.confidence},
                        {"aleatoric", c.aleatoric},
                        {"verdict", to_string(c.verdict)},
                        {"rescued", c.rescued}});
    }
    return rows;
}

}  // namespace dips

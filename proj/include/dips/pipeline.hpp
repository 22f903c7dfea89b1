#pragma once

// The pseudo-labeling loop with DIPS plugged in:
//   f(0) on D_lab; D(1) = D_train(1) = r(D_lab, f(0))
//   for t = 1..T: train f(t) on D_train(t); D(t+1) = D(t) u s(D_unlab, f(t));
//                 D_train(t+1) = r(D(t+1), f(t))
// Every model is trained from scratch with its dynamics recorded over the
// whole pool D_lab u D_unlab, so r can score any candidate.

#include <algorithm>
#include <chrono>
#include <numeric>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "backbone.hpp"
#include "core.hpp"
#include "datagen.hpp"
#include "dynamics.hpp"
#include "plabelers.hpp"
#include "random.hpp"
#include "selectors.hpp"

namespace dips {

enum class PipelineVersion { grow, rebuild };

/// Sample set on which an adaptive aleatoric threshold is computed: the
/// candidates being characterized, or the training set of the model whose
/// dynamics are used.
enum class AleatoricReference { candidates, training_set };

inline std::string to_string(AleatoricReference r) {
    return r == AleatoricReference::candidates ? "candidates" : "training_set";
}

inline AleatoricReference parse_aleatoric_reference(const std::string& s) {
    if (s == "candidates") return AleatoricReference::candidates;
    if (s == "training_set") return AleatoricReference::training_set;
    throw ArgumentError("unknown aleatoric reference: " + s);
}

inline std::string to_string(PipelineVersion v) { return v == PipelineVersion::grow ? "grow" : "rebuild"; }

inline PipelineVersion parse_pipeline_version(const std::string& s) {
    if (s == "grow" || s == "1" || s == "v1") return PipelineVersion::grow;
    if (s == "rebuild" || s == "2" || s == "v2") return PipelineVersion::rebuild;
    throw ArgumentError("unknown pipeline version: " + s);
}

struct PipelineConfig {
    int T = 5;
    PlabelerConfig plabeler;
    SelectorConfig selector;
    BackboneConfig backbone;
    bool dips_at_init = true;
    bool dips_at_iters = true;
    PipelineVersion version = PipelineVersion::grow;
    std::uint64_t seed = 0;
    /// Checkpoints ignored at the start of every dynamics window.
    int skip_first = 0;
    AleatoricReference tau_al_reference = AleatoricReference::candidates;

    void validate() const {
        if (T < 1) throw ArgumentError("T must be >= 1");
        if (skip_first < 0 || skip_first >= backbone.rounds_or_epochs)
            throw ArgumentError("skip_first must leave at least one checkpoint");
        plabeler.validate();
        selector.validate();
        backbone.validate();
    }
};

struct SampleProvenance {
    enum class Origin { labeled, pseudo_labeled, unlabeled } origin = Origin::unlabeled;
    int iteration = 0;  // iteration at which the pseudo-label was assigned
    ClassIndex current_label = -1;
    bool selected_last_round = false;
};

struct VerdictCounts {
    std::size_t useful_labeled = 0;
    std::size_t harmful_labeled = 0;
    std::size_t useful_pseudo = 0;
    std::size_t harmful_pseudo = 0;

    friend bool operator==(const VerdictCounts&, const VerdictCounts&) = default;
};

/// One entry per model f(t), t = 0..T. Entry t describes f(t) and the sets
/// D(t+1), D_train(t+1) derived from it.
struct IterationRecord {
    int iteration = 0;
    std::size_t pool_size = 0;   // |D(t+1)|
    std::size_t train_size = 0;  // |D_train(t+1)|
    std::size_t new_pseudo_labels = 0;
    std::size_t held_pseudo_labels = 0;
    std::optional<double> test_accuracy;
    std::optional<double> pseudo_label_accuracy;
    VerdictCounts verdicts;
    bool fallback = false;  // f(t) could not be trained; f(t-1) reused
    bool safeguard_applied = false;
    bool sinkhorn_converged = true;
    double tau_conf = 0.0;
    double tau_al = 0.0;
    std::vector<std::size_t> pool_indices;   // D(t+1), pool positions
    std::vector<std::size_t> train_indices;  // D_train(t+1)
    std::vector<PseudoLabel> batch;           // s output at t, indices into D_unlab
    std::vector<std::pair<std::size_t, ClassIndex>> held;  // (D_unlab index, label) in D(t+1)
    double seconds_train = 0.0;
    double seconds_select = 0.0;
};

struct PipelineState {
    std::size_t n_labeled = 0;
    std::vector<SampleProvenance> pool;  // D_lab rows first, then D_unlab rows
    std::vector<char> in_set;            // D(t)
    std::vector<char> train_mask;        // D_train(t)
    int iteration = 0;
    std::vector<std::size_t> flex_status;
};

struct PipelineResult {
    Model model;  // f(T)
    std::vector<IterationRecord> history;
    PipelineState state;
    bool ground_truth_available = false;
};

inline double evaluate(const Model& model, const Dataset& test) {
    if (!test.labels) throw ArgumentError("evaluation needs a labeled test set");
    if (test.size() == 0) throw ArgumentError("evaluation needs a non-empty test set");
    const Matrix p = model.predict_proba(test.features);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (argmax(p.row(i)) == (*test.labels)[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

/// Fraction of held pseudo-labels matching `truth`, per history entry. Absent
/// where nothing is held yet.
inline std::vector<std::optional<double>> pseudo_label_accuracy(const std::vector<IterationRecord>& history,
                                                                 const Labels& truth) {
    std::vector<std::optional<double>> out;
    for (const auto& rec : history) {
        if (rec.held.empty()) {
            out.emplace_back();
            continue;
        }
        std::size_t hit = 0;
        for (const auto& [j, y] : rec.held) {
            if (j >= truth.size()) throw ArgumentError("pseudo-label index outside the ground truth");
            if (truth[j] == y) ++hit;
        }
        out.emplace_back(static_cast<double>(hit) / static_cast<double>(rec.held.size()));
    }
    return out;
}

namespace detail {

struct TrainedStep {
    Model model;
    DynamicsTrace trace;
    Matrix last_probs;
};

inline TrainedStep train_step(const Dataset& train, const Dataset& probe, const BackboneConfig& cfg,
                              const TraceOptions& topt, int class_count) {
    TrainedStep step;
    step.trace = DynamicsTrace(probe.size(), class_count, topt);
    step.model = train_with_checkpoints(train, probe, cfg, [&](int, const Matrix& probs) {
        step.trace.update(probs);
        step.last_probs = probs;
    });
    return step;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Applies r to pool positions `cand` with their current labels.
inline Selection apply_selector(const SelectorConfig& sc, bool enabled, const DynamicsTrace& trace,
                                std::span<const std::size_t> cand, std::span<const ClassIndex> labels,
                                std::span<const double> al_reference) {
    if (!enabled || sc.kind == SelectorKind::identity) return identity_select(cand.size());
    const auto metrics = extract_for_labels(trace, cand, labels);
    if (sc.kind == SelectorKind::dips)
        return dips_select(metrics.confidence, metrics.aleatoric, sc, labels, al_reference);

    Selection sel;
    if (sc.kind == SelectorKind::small_loss) {
        std::vector<double> losses;
        losses.reserve(cand.size());
        for (std::size_t j = 0; j < cand.size(); ++j) losses.push_back(trace.mean_loss(cand[j], labels[j]));
        sel = small_loss_select(losses, sc.keep_fraction);
    } else {
        std::vector<std::vector<double>> streams;
        streams.reserve(cand.size());
        for (std::size_t j = 0; j < cand.size(); ++j) streams.push_back(label_stream(trace, cand[j], labels[j]));
        sel = fluctuation_select(streams, metrics.confidence, sc);
    }
    sel.safeguard_applied = apply_class_coverage_safeguard(sel.keep, labels, metrics.confidence);
    return sel;
}

}  // namespace detail

/// Runs the loop on `split`. Test accuracy is recorded when the split has a
/// labeled, non-empty test part; pseudo-label accuracy when hidden ground
/// truth is present.
inline PipelineResult run(const Split& split, const PipelineConfig& config) {
    config.validate();
    split.validate();
    if (!split.labeled.labels) throw ArgumentError("labeled part has no labels");
    const int C = split.class_count();
    if (distinct_classes(*split.labeled.labels, C) < 2)
        throw ArgumentError("labeled part must contain at least two classes");

    const std::size_t n_lab = split.labeled.size();
    const std::size_t n_unlab = split.unlabeled.size();
    const std::size_t n_pool = n_lab + n_unlab;
    Dataset probe;
    probe.class_count = C;
    probe.features = Matrix::stack(split.labeled.features, split.unlabeled.features);

    const bool has_test = split.test.labels && split.test.size() > 0;
    const bool has_truth = !split.unlabeled_truth.empty();
    const auto& sc = config.selector;
    TraceOptions topt{config.skip_first, sc.kind == SelectorKind::fluctuation};

    PipelineResult result;
    result.ground_truth_available = has_truth;
    PipelineState& st = result.state;
    st.n_labeled = n_lab;
    st.pool.resize(n_pool);
    st.flex_status.assign(static_cast<std::size_t>(C), 0);
    for (std::size_t i = 0; i < n_lab; ++i)
        st.pool[i] = {SampleProvenance::Origin::labeled, 0, (*split.labeled.labels)[i], false};
    st.in_set.assign(n_pool, 0);
    st.train_mask.assign(n_pool, 0);

    auto backbone_for = [&](int t) {
        BackboneConfig b = config.backbone;
        b.seed = derive_seed(config.seed, "backbone", static_cast<std::uint64_t>(t));
        return b;
    };
    auto members = [](const std::vector<char>& mask) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) idx.push_back(i);
        return idx;
    };
    auto labels_of = [&](std::span<const std::size_t> idx) {
        Labels y;
        y.reserve(idx.size());
        for (auto i : idx) y.push_back(st.pool[i].current_label);
        return y;
    };
    auto training_set = [&](std::span<const std::size_t> idx) {
        Dataset d;
        d.class_count = C;
        d.features = probe.features.select_rows(idx);
        d.labels = labels_of(idx);
        return d;
    };
    auto held_pseudo = [&](const std::vector<char>& mask) {
        std::vector<std::pair<std::size_t, ClassIndex>> held;
        for (std::size_t i = n_lab; i < n_pool; ++i)
            if (mask[i]) held.emplace_back(i - n_lab, st.pool[i].current_label);
        return held;
    };
    // Aleatoric values of the samples the traced model was trained on.
    auto training_al = [&](const DynamicsTrace& trace, std::span<const std::size_t> trained) {
        std::vector<double> al;
        if (config.tau_al_reference == AleatoricReference::candidates) return al;
        al.reserve(trained.size());
        for (auto i : trained) al.push_back(trace.aleatoric(i, st.pool[i].current_label));
        return al;
    };
    auto select_into_train = [&](bool enabled, const DynamicsTrace& trace, std::span<const std::size_t> trained,
                                 IterationRecord& rec) {
        const auto cand = members(st.in_set);
        const auto y = labels_of(cand);
        const auto ref = training_al(trace, trained);
        const Selection sel = detail::apply_selector(sc, enabled, trace, cand, y, ref);
        std::fill(st.train_mask.begin(), st.train_mask.end(), 0);
        for (std::size_t j = 0; j < cand.size(); ++j) {
            const bool keep = sel.keep[j] != 0;
            st.train_mask[cand[j]] = keep ? 1 : 0;
            st.pool[cand[j]].selected_last_round = keep;
            const bool labeled = cand[j] < n_lab;
            if (labeled) (keep ? rec.verdicts.useful_labeled : rec.verdicts.harmful_labeled)++;
            else (keep ? rec.verdicts.useful_pseudo : rec.verdicts.harmful_pseudo)++;
        }
        rec.safeguard_applied = sel.safeguard_applied;
        rec.tau_conf = sel.tau_conf;
        rec.tau_al = sel.tau_al;
        rec.pool_indices = cand;
        rec.train_indices = members(st.train_mask);
        rec.pool_size = cand.size();
        rec.train_size = rec.train_indices.size();
        rec.held = held_pseudo(st.in_set);
        rec.held_pseudo_labels = rec.held.size();
    };

    // f(0) and the initial training set.
    IterationRecord rec0;
    auto t0 = std::chrono::steady_clock::now();
    detail::TrainedStep step = detail::train_step(split.labeled, probe, backbone_for(0), topt, C);
    rec0.seconds_train = detail::seconds_since(t0);
    if (has_test) rec0.test_accuracy = evaluate(step.model, split.test);
    t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n_lab; ++i) st.in_set[i] = 1;
    {
        std::vector<std::size_t> lab(n_lab);
        std::iota(lab.begin(), lab.end(), std::size_t{0});
        select_into_train(config.dips_at_init, step.trace, lab, rec0);
    }
    // D(1) = D_train(1) = r(D_lab, f(0))
    st.in_set = st.train_mask;
    rec0.pool_indices = rec0.train_indices;
    rec0.pool_size = rec0.train_size;
    rec0.seconds_select = detail::seconds_since(t0);
    result.history.push_back(std::move(rec0));
    const std::vector<char> initial_set = st.in_set;
    std::vector<std::size_t> step_train(n_lab);
    std::iota(step_train.begin(), step_train.end(), std::size_t{0});

    for (int t = 1; t <= config.T; ++t) {
        st.iteration = t;
        IterationRecord rec;
        rec.iteration = t;
        t0 = std::chrono::steady_clock::now();
        const auto train_idx = members(st.train_mask);
        try {
            step = detail::train_step(training_set(train_idx), probe, backbone_for(t), topt, C);
            step_train = train_idx;
        } catch (const DegenerateTrainingError&) {
            rec.fallback = true;  // keep f(t-1) and its dynamics
        }
        rec.seconds_train = detail::seconds_since(t0);
        if (has_test) rec.test_accuracy = evaluate(step.model, split.test);

        t0 = std::chrono::steady_clock::now();
        // s over D_unlab using f(t)
        if (config.version == PipelineVersion::rebuild) {
            for (std::size_t i = n_lab; i < n_pool; ++i) {
                st.pool[i].origin = SampleProvenance::Origin::unlabeled;
                st.pool[i].current_label = -1;
            }
        }
        std::vector<char> eligible(n_unlab, 0);
        for (std::size_t j = 0; j < n_unlab; ++j)
            eligible[j] = st.pool[n_lab + j].origin == SampleProvenance::Origin::unlabeled ? 1 : 0;
        Matrix unlab_probs(n_unlab, static_cast<std::size_t>(C));
        for (std::size_t j = 0; j < n_unlab; ++j)
            std::copy_n(step.last_probs.row(n_lab + j).begin(), C, unlab_probs.row(j).begin());

        PseudoLabelBatch batch;
        if (n_unlab > 0) {
            switch (config.plabeler.kind) {
                case PlabelerKind::greedy:
                    batch = greedy_select(unlab_probs, config.plabeler, t, eligible);
                    break;
                case PlabelerKind::ups: {
                    BackboneConfig eb = config.backbone;
                    eb.seed = derive_seed(config.seed, "ups-ensemble", static_cast<std::uint64_t>(t));
                    const auto tr = training_set(members(st.train_mask));
                    Matrix u(n_unlab, static_cast<std::size_t>(C));
                    try {
                        const Ensemble ens = train_ensemble(tr, config.plabeler.ensemble_size, eb);
                        u = ensemble_uncertainty(ens, split.unlabeled.features);
                    } catch (const DegenerateTrainingError&) {
                        std::fill(u.data().begin(), u.data().end(), 1.0);
                    }
                    batch = ups_select(unlab_probs, u, config.plabeler, t, eligible);
                    break;
                }
                case PlabelerKind::flexmatch:
                    batch = flexmatch_select(unlab_probs, st.flex_status, config.plabeler, t, eligible);
                    break;
                case PlabelerKind::sla_lite: {
                    const auto n_eligible = static_cast<std::size_t>(std::count(eligible.begin(), eligible.end(), 1));
                    if (n_eligible > 0) {
                        const auto marg = derive_class_marginals(split.labeled, n_eligible);
                        auto alloc = sinkhorn_allocate(unlab_probs, marg, config.plabeler, t, eligible);
                        rec.sinkhorn_converged = alloc.transport.converged;
                        batch = std::move(alloc.batch);
                    }
                    break;
                }
            }
        }
        for (const auto& e : batch.entries) {
            auto& p = st.pool[n_lab + e.index];
            p.origin = SampleProvenance::Origin::pseudo_labeled;
            p.iteration = t;
            p.current_label = e.label;
            ++st.flex_status[static_cast<std::size_t>(e.label)];
        }
        if (config.version == PipelineVersion::rebuild) st.in_set = initial_set;
        for (const auto& e : batch.entries) st.in_set[n_lab + e.index] = 1;
        rec.new_pseudo_labels = batch.size();
        rec.batch = batch.entries;

        select_into_train(config.dips_at_iters, step.trace, step_train, rec);
        rec.seconds_select = detail::seconds_since(t0);
        result.history.push_back(std::move(rec));
    }

    if (has_truth) {
        const auto acc = pseudo_label_accuracy(result.history, split.unlabeled_truth);
        for (std::size_t k = 0; k < acc.size(); ++k) result.history[k].pseudo_label_accuracy = acc[k];
    }
    result.model = std::move(step.model);
    return result;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json tau_al = {{"mode", c.selector.tau_al.mode == AleatoricThreshold::Mode::fixed ? "fixed" : "adaptive"},
                             {"value", c.selector.tau_al.value},
                             {"offset_by_min", c.selector.tau_al.offset_by_min}};
    return {{"T", c.T},
            {"seed", c.seed},
            {"version", to_string(c.version)},
            {"dips_at_init", c.dips_at_init},
            {"dips_at_iters", c.dips_at_iters},
            {"skip_first", c.skip_first},
            {"plabeler",
             {{"kind", to_string(c.plabeler.kind)},
              {"tau_p", c.plabeler.tau_p},
              {"tau_n", c.plabeler.tau_n},
              {"kappa_p", c.plabeler.kappa_p},
              {"kappa_n", c.plabeler.kappa_n},
              {"ensemble_size", c.plabeler.ensemble_size},
              {"flex_base_tau", c.plabeler.flex_base_tau},
              {"sinkhorn_epsilon", c.plabeler.sinkhorn_epsilon},
              {"sinkhorn_iters", c.plabeler.sinkhorn_iters}}},
            {"selector",
             {{"kind", to_string(c.selector.kind)},
              {"tau_conf", c.selector.tau_conf},
              {"tau_conf_percentile", c.selector.tau_conf_percentile ? nlohmann::json(*c.selector.tau_conf_percentile)
                                                                     : nlohmann::json(nullptr)},
              {"tau_al", tau_al},
              {"keep_fraction", c.selector.keep_fraction},
              {"fluctuation_percentile", c.selector.fluctuation_percentile},
              {"smoothing", c.selector.smoothing},
              {"class_fallback", c.selector.class_fallback},
              {"tau_al_reference", to_string(c.tau_al_reference)}}},
            {"backbone",
             {{"kind", to_string(c.backbone.kind)},
              {"rounds_or_epochs", c.backbone.rounds_or_epochs},
              {"learning_rate", c.backbone.learning_rate},
              {"tree_depth", c.backbone.tree_depth},
              {"hidden_width", c.backbone.hidden_width},
              {"batch_size", c.backbone.batch_size}}}};
}

/// Per-run history document. Wall-clock timings are included only on request
/// so that default exports are reproducible byte for byte.
inline nlohmann::json history_to_json(const PipelineConfig& config, const PipelineResult& result,
                                      bool include_timing = false) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json its = nlohmann::json::array();
    for (const auto& r : result.history) {
        nlohmann::json j = {{"iteration", r.iteration},
                            {"pool_size", r.pool_size},
                            {"train_size", r.train_size},
                            {"new_pseudo_labels", r.new_pseudo_labels},
                            {"held_pseudo_labels", r.held_pseudo_labels},
                            {"test_accuracy", opt(r.test_accuracy)},
                            {"pseudo_label_accuracy", opt(r.pseudo_label_accuracy)},
                            {"verdicts",
                             {{"labeled", {{"useful", r.verdicts.useful_labeled}, {"harmful", r.verdicts.harmful_labeled}}},
                              {"pseudo", {{"useful", r.verdicts.useful_pseudo}, {"harmful", r.verdicts.harmful_pseudo}}}}},
                            {"fallback", r.fallback},
                            {"safeguard_applied", r.safeguard_applied},
                            {"sinkhorn_converged", r.sinkhorn_converged}};
        if (include_timing) j["seconds"] = {{"train", r.seconds_train}, {"select", r.seconds_select}};
        its.push_back(std::move(j));
    }
    return {{"config", config_to_json(config)},
            {"ground_truth_available", result.ground_truth_available},
            {"iterations", its}};
}

}  // namespace dips

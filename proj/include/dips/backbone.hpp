#pragma once

// Iterative probabilistic classifiers. Training reports one probability
// matrix over a fixed probe set per checkpoint (boosting round or epoch),
// which is what the learning-dynamics trace consumes.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"
#include "gbdt.hpp"
#include "random.hpp"
#include "sgd.hpp"

namespace dips {

enum class BackboneKind { gradient_boosted_trees, sgd_linear, sgd_mlp };

inline std::string to_string(BackboneKind k) {
    switch (k) {
        case BackboneKind::gradient_boosted_trees: return "gradient_boosted_trees";
        case BackboneKind::sgd_linear: return "sgd_linear";
        case BackboneKind::sgd_mlp: return "sgd_mlp";
    }
    return "?";
}

inline BackboneKind parse_backbone_kind(const std::string& s) {
    if (s == "gradient_boosted_trees" || s == "gbdt" || s == "gbt" || s == "trees") return BackboneKind::gradient_boosted_trees;
    if (s == "sgd_linear" || s == "linear") return BackboneKind::sgd_linear;
    if (s == "sgd_mlp" || s == "mlp") return BackboneKind::sgd_mlp;
    throw ArgumentError("unknown backbone kind: " + s);
}

struct BackboneConfig {
    BackboneKind kind = BackboneKind::gradient_boosted_trees;
    int rounds_or_epochs = 100;
    double learning_rate = 0.3;
    int tree_depth = 3;
    double l2 = 1.0;
    double min_child_weight = 1.0;
    int hidden_width = 16;
    int batch_size = 32;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (rounds_or_epochs < 1) throw ArgumentError("rounds_or_epochs must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be finite and > 0");
        if (kind == BackboneKind::gradient_boosted_trees && tree_depth < 1) throw ArgumentError("tree_depth must be >= 1");
        if (kind == BackboneKind::sgd_mlp && hidden_width < 1) throw ArgumentError("hidden_width must be >= 1");
        if (kind != BackboneKind::gradient_boosted_trees && batch_size < 1) throw ArgumentError("batch_size must be >= 1");
        if (l2 < 0.0 || min_child_weight < 0.0 || weight_decay < 0.0) throw ArgumentError("regularizers must be >= 0");
    }
};

/// Called once per checkpoint with its 1-based index and the |probe| x C
/// probability matrix.
using CheckpointObserver = std::function<void(int checkpoint, const Matrix& probe_probs)>;

class Model {
public:
    using Params = std::variant<GbdtParams, SgdParams>;

    Model() = default;
    Model(BackboneKind kind, int class_count, std::size_t n_features, std::uint64_t seed, Params params)
        : kind_(kind), class_count_(class_count), n_features_(n_features), seed_(seed), params_(std::move(params)) {}

    BackboneKind kind() const noexcept { return kind_; }
    int class_count() const noexcept { return class_count_; }
    std::size_t n_features() const noexcept { return n_features_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const Params& params() const noexcept { return params_; }

    Matrix predict_proba(const Matrix& X) const {
        if (X.cols() != n_features_)
            throw ShapeError("predict_proba: expected " + std::to_string(n_features_) + " features, got " +
                             std::to_string(X.cols()));
        if (const auto* g = std::get_if<GbdtParams>(&params_)) return gbdt_proba(*g, X, g->rounds.size());
        return sgd_predict_proba(std::get<SgdParams>(params_), X);
    }

    /// Boosted model restricted to its first `rounds` rounds (0 = prior only).
    Model truncated(std::size_t rounds) const {
        const auto* g = std::get_if<GbdtParams>(&params_);
        if (!g) throw ArgumentError("truncation is only defined for boosted trees");
        GbdtParams t = *g;
        t.rounds.resize(std::min(rounds, t.rounds.size()));
        return Model(kind_, class_count_, n_features_, seed_, std::move(t));
    }

    friend bool operator==(const Model&, const Model&) = default;

private:
    Matrix gbdt_proba(const GbdtParams& g, const Matrix& X, std::size_t rounds) const {
        const Matrix raw = gbdt_raw(g, X, rounds);
        Matrix out(X.rows(), static_cast<std::size_t>(class_count_));
        for (std::size_t i = 0; i < X.rows(); ++i) gbdt::raw_to_proba(raw.row(i), class_count_, out.row(i));
        return out;
    }

    BackboneKind kind_ = BackboneKind::gradient_boosted_trees;
    int class_count_ = 2;
    std::size_t n_features_ = 0;
    std::uint64_t seed_ = 0;
    Params params_;
};

inline Matrix predict_proba(const Model& model, const Matrix& X) { return model.predict_proba(X); }

/// Trains from scratch on `train`, reporting each checkpoint's predictions on
/// `probe` to `observer`. The returned model equals the last checkpoint.
inline Model train_with_checkpoints(const Dataset& train, const Dataset& probe, const BackboneConfig& config,
                                    const CheckpointObserver& observer = {}) {
    config.validate();
    if (!train.labels) throw ArgumentError("training set must be labeled");
    if (train.size() == 0) throw DegenerateTrainingError("empty training set");
    if (probe.size() == 0) throw ArgumentError("probe set must be non-empty");
    if (probe.dim() != train.dim()) throw ShapeError("probe and training feature counts differ");
    if (distinct_classes(*train.labels, train.class_count) < 2)
        throw DegenerateTrainingError("training set holds fewer than two classes");

    const int C = train.class_count;
    if (config.kind == BackboneKind::gradient_boosted_trees) {
        GbdtOptions opt{config.rounds_or_epochs, config.tree_depth, config.learning_rate, config.l2,
                        config.min_child_weight};
        Matrix probs(probe.size(), static_cast<std::size_t>(C));
        auto params = fit_gbdt(train.features, *train.labels, C, opt, probe.features,
                               [&](int e, const Matrix& raw) {
                                   if (!observer) return;
                                   for (std::size_t i = 0; i < raw.rows(); ++i)
                                       gbdt::raw_to_proba(raw.row(i), C, probs.row(i));
                                   for (double v : probs.data())
                                       if (!std::isfinite(v)) throw NumericError("non-finite probe prediction", e);
                                   observer(e, probs);
                               });
        return Model(config.kind, C, train.dim(), config.seed, std::move(params));
    }

    SgdOptions opt{config.rounds_or_epochs, config.learning_rate, config.batch_size,
                   config.kind == BackboneKind::sgd_mlp ? config.hidden_width : 0, config.weight_decay, config.seed};
    auto params = fit_sgd(train.features, *train.labels, C, opt, probe.features, [&](int e, const Matrix& probs) {
        for (double v : probs.data())
            if (!std::isfinite(v)) throw NumericError("non-finite probe prediction", e);
        if (observer) observer(e, probs);
    });
    return Model(config.kind, C, train.dim(), config.seed, std::move(params));
}

/// Convenience overload with the training set as the probe.
inline Model train(const Dataset& train, const BackboneConfig& config) {
    return train_with_checkpoints(train, train, config);
}

// ---------------------------------------------------------------------------
// Ensembles

struct Ensemble {
    std::vector<Model> members;
    std::size_t size() const noexcept { return members.size(); }
};

namespace detail {

/// Bootstrap sample drawn within each class so every present class survives.
inline std::vector<std::size_t> stratified_bootstrap(const Labels& y, int class_count, Rng& rng) {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < y.size(); ++i) members[static_cast<std::size_t>(y[i])].push_back(i);
    std::vector<std::size_t> out;
    out.reserve(y.size());
    for (const auto& m : members)
        for (std::size_t j = 0; j < m.size(); ++j) out.push_back(m[rng.below(m.size())]);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// k members with seeds seed+0 .. seed+k-1. With `bootstrap`, each member sees
/// a stratified bootstrap resample of `train`. Members may be trained on
/// `jobs` threads; the result does not depend on scheduling.
inline Ensemble train_ensemble(const Dataset& train, int k, const BackboneConfig& config, bool bootstrap = true,
                               int jobs = 1) {
    if (k < 2) throw ArgumentError("ensemble size must be >= 2");
    if (!train.labels) throw ArgumentError("training set must be labeled");
    Ensemble ens;
    ens.members.resize(static_cast<std::size_t>(k));
    auto fit_member = [&](std::size_t m) {
        BackboneConfig member = config;
        member.seed = config.seed + m;
        if (!bootstrap) {
            ens.members[m] = dips::train(train, member);
            return;
        }
        Rng rng(derive_seed(member.seed, "bootstrap"));
        const auto idx = detail::stratified_bootstrap(*train.labels, train.class_count, rng);
        ens.members[m] = dips::train(train.subset(idx), member);
    };
    if (jobs <= 1) {
        for (std::size_t m = 0; m < ens.members.size(); ++m) fit_member(m);
        return ens;
    }
    std::vector<std::exception_ptr> errors(ens.members.size());
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (std::size_t m; (m = next++) < ens.members.size();) {
                try {
                    fit_member(m);
                } catch (...) {
                    errors[m] = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return ens;
}

inline Matrix ensemble_mean(const Ensemble& ens, const Matrix& X) {
    Matrix mean;
    for (const auto& m : ens.members) {
        Matrix p = m.predict_proba(X);
        if (mean.empty()) mean = Matrix(p.rows(), p.cols());
        for (std::size_t q = 0; q < p.data().size(); ++q) mean.data()[q] += p.data()[q];
    }
    for (double& v : mean.data()) v /= static_cast<double>(ens.size());
    return mean;
}

/// Population standard deviation over members of each class probability.
inline Matrix ensemble_uncertainty(const Ensemble& ens, const Matrix& X) {
    if (ens.members.empty()) throw ArgumentError("empty ensemble");
    std::vector<Matrix> preds;
    for (const auto& m : ens.members) preds.push_back(m.predict_proba(X));
    Matrix out(X.rows(), preds.front().cols());
    const double k = static_cast<double>(preds.size());
    for (std::size_t q = 0; q < out.data().size(); ++q) {
        double mean = 0.0;
        for (const auto& p : preds) mean += p.data()[q];
        mean /= k;
        double var = 0.0;
        for (const auto& p : preds) var += (p.data()[q] - mean) * (p.data()[q] - mean);
        out.data()[q] = std::sqrt(var / k);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const Model& model) {
    nlohmann::json j;
    j["format"] = "dips-model";
    j["version"] = kModelFormatVersion;
    j["kind"] = to_string(model.kind());
    j["class_count"] = model.class_count();
    j["n_features"] = model.n_features();
    j["seed"] = model.seed();
    if (const auto* g = std::get_if<GbdtParams>(&model.params())) {
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& round : g->rounds) {
            nlohmann::json trees = nlohmann::json::array();
            for (const auto& tree : round) {
                nlohmann::json nodes = nlohmann::json::array();
                for (const auto& n : tree.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
                trees.push_back(nodes);
            }
            rounds.push_back(trees);
        }
        j["gbdt"] = {{"base_scores", g->base_scores}, {"rounds", rounds}};
    } else {
        const auto& s = std::get<SgdParams>(model.params());
        j["sgd"] = {{"inputs", s.inputs}, {"hidden", s.hidden}, {"classes", s.classes}, {"w", s.w}};
    }
    return j;
}

inline Model model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "dips-model") throw ArgumentError("not a dips model blob");
    if (j.at("version").get<int>() != kModelFormatVersion) throw ArgumentError("unsupported model format version");
    const auto kind = parse_backbone_kind(j.at("kind").get<std::string>());
    const int C = j.at("class_count").get<int>();
    const auto d = j.at("n_features").get<std::size_t>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    if (kind == BackboneKind::gradient_boosted_trees) {
        GbdtParams g;
        g.base_scores = j.at("gbdt").at("base_scores").get<std::vector<double>>();
        for (const auto& round : j.at("gbdt").at("rounds")) {
            std::vector<Tree> trees;
            for (const auto& nodes : round) {
                Tree t;
                for (const auto& n : nodes)
                    t.nodes.push_back({n[0].get<int>(), n[1].get<double>(), n[2].get<int>(), n[3].get<int>(),
                                       n[4].get<double>()});
                trees.push_back(std::move(t));
            }
            g.rounds.push_back(std::move(trees));
        }
        return Model(kind, C, d, seed, std::move(g));
    }
    const auto& s = j.at("sgd");
    SgdParams p{s.at("inputs").get<int>(), s.at("hidden").get<int>(), s.at("classes").get<int>(),
                s.at("w").get<std::vector<double>>()};
    if (p.w.size() != SgdParams::size_for(p.inputs, p.hidden, p.classes)) throw ArgumentError("corrupt parameter block");
    return Model(kind, C, d, seed, std::move(p));
}

}  // namespace dips

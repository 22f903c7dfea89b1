#pragma once

// Second-order gradient-boosted regression trees with logistic loss.
// Binary problems use a single booster on the positive-class logit; C > 2
// uses one booster per class (one-vs-rest) with normalized sigmoids.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "core.hpp"

namespace dips {

struct TreeNode {
    int feature = -1;        // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;      // leaf output, shrinkage included

    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> x) const {
        int i = 0;
        while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
            const auto& n = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }

    friend bool operator==(const Tree&, const Tree&) = default;
};

struct GbdtParams {
    std::vector<double> base_scores;        // one per booster
    std::vector<std::vector<Tree>> rounds;  // rounds[e][booster]

    std::size_t booster_count() const noexcept { return base_scores.size(); }

    friend bool operator==(const GbdtParams&, const GbdtParams&) = default;
};

struct GbdtOptions {
    int rounds = 100;
    int max_depth = 3;
    double learning_rate = 0.1;
    double l2 = 1.0;
    double min_child_weight = 1.0;
};

namespace gbdt {

inline double sigmoid(double z) noexcept {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

/// Logistic loss of raw score z against target t in {0,1}.
inline double logistic_loss(double z, double t) noexcept { return t > 0.5 ? softplus(-z) : softplus(z); }

/// Converts booster raw scores to a probability row.
inline void raw_to_proba(std::span<const double> raw, int class_count, std::span<double> out) {
    if (class_count == 2) {
        const double p1 = sigmoid(raw[0]);
        out[0] = 1.0 - p1;
        out[1] = p1;
        return;
    }
    double sum = 0.0;
    for (int k = 0; k < class_count; ++k) {
        out[static_cast<std::size_t>(k)] = sigmoid(raw[static_cast<std::size_t>(k)]);
        sum += out[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < class_count; ++k) out[static_cast<std::size_t>(k)] /= sum;
}

/// Grows one regression tree on (grad, hess) by exact greedy split search.
class TreeBuilder {
public:
    TreeBuilder(const Matrix& X, const GbdtOptions& opt) : X_(X), opt_(opt) {
        sorted_.resize(X.cols());
        for (std::size_t f = 0; f < X.cols(); ++f) {
            auto& s = sorted_[f];
            s.resize(X.rows());
            std::iota(s.begin(), s.end(), std::size_t{0});
            std::stable_sort(s.begin(), s.end(), [&](std::size_t a, std::size_t b) { return X(a, f) < X(b, f); });
        }
        node_of_.resize(X.rows());
    }

    Tree build(const std::vector<double>& grad, const std::vector<double>& hess) {
        Tree tree;
        tree.nodes.push_back({});
        std::fill(node_of_.begin(), node_of_.end(), 0);
        std::vector<int> frontier{0};

        for (int depth = 0; depth < opt_.max_depth && !frontier.empty(); ++depth) {
            // Totals per frontier node.
            std::vector<int> slot(tree.nodes.size(), -1);
            for (std::size_t s = 0; s < frontier.size(); ++s) slot[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);
            std::vector<double> G(frontier.size(), 0.0), H(frontier.size(), 0.0);
            std::vector<std::size_t> count(frontier.size(), 0);
            for (std::size_t i = 0; i < X_.rows(); ++i) {
                const int s = slot[static_cast<std::size_t>(node_of_[i])];
                if (s < 0) continue;
                G[static_cast<std::size_t>(s)] += grad[i];
                H[static_cast<std::size_t>(s)] += hess[i];
                ++count[static_cast<std::size_t>(s)];
            }

            struct Best {
                double gain = 0.0;
                int feature = -1;
                double threshold = 0.0;
            };
            std::vector<Best> best(frontier.size());
            std::vector<double> GL(frontier.size()), HL(frontier.size()), last(frontier.size());
            std::vector<char> seen(frontier.size());

            for (std::size_t f = 0; f < X_.cols(); ++f) {
                std::fill(GL.begin(), GL.end(), 0.0);
                std::fill(HL.begin(), HL.end(), 0.0);
                std::fill(seen.begin(), seen.end(), 0);
                for (std::size_t i : sorted_[f]) {
                    const int si = slot[static_cast<std::size_t>(node_of_[i])];
                    if (si < 0) continue;
                    const auto s = static_cast<std::size_t>(si);
                    const double v = X_(i, f);
                    if (seen[s] && v > last[s]) {
                        const double gr = G[s] - GL[s], hr = H[s] - HL[s];
                        if (HL[s] >= opt_.min_child_weight && hr >= opt_.min_child_weight) {
                            const double gain = 0.5 * (GL[s] * GL[s] / (HL[s] + opt_.l2) + gr * gr / (hr + opt_.l2) -
                                                       G[s] * G[s] / (H[s] + opt_.l2));
                            if (gain > best[s].gain + 1e-12) {
                                double thr = last[s] + 0.5 * (v - last[s]);
                                if (thr >= v) thr = last[s];
                                best[s] = {gain, static_cast<int>(f), thr};
                            }
                        }
                    }
                    GL[s] += grad[i];
                    HL[s] += hess[i];
                    last[s] = v;
                    seen[s] = 1;
                }
            }

            std::vector<int> next;
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                const int id = frontier[s];
                if (best[s].feature < 0) {
                    set_leaf(tree, id, G[s], H[s]);
                    continue;
                }
                const int l = static_cast<int>(tree.nodes.size());
                tree.nodes.push_back({});
                tree.nodes.push_back({});
                auto& node = tree.nodes[static_cast<std::size_t>(id)];
                node.feature = best[s].feature;
                node.threshold = best[s].threshold;
                node.left = l;
                node.right = l + 1;
                next.push_back(l);
                next.push_back(l + 1);
            }
            for (std::size_t i = 0; i < X_.rows(); ++i) {
                const auto& n = tree.nodes[static_cast<std::size_t>(node_of_[i])];
                if (n.feature >= 0 && n.left >= 0 && slot.size() > static_cast<std::size_t>(node_of_[i]) &&
                    slot[static_cast<std::size_t>(node_of_[i])] >= 0)
                    node_of_[i] = X_(i, static_cast<std::size_t>(n.feature)) <= n.threshold ? n.left : n.right;
            }
            frontier = std::move(next);
        }

        // Remaining frontier nodes become leaves.
        if (!frontier.empty()) {
            std::vector<double> G(tree.nodes.size(), 0.0), H(tree.nodes.size(), 0.0);
            for (std::size_t i = 0; i < X_.rows(); ++i) {
                G[static_cast<std::size_t>(node_of_[i])] += grad[i];
                H[static_cast<std::size_t>(node_of_[i])] += hess[i];
            }
            for (int id : frontier) set_leaf(tree, id, G[static_cast<std::size_t>(id)], H[static_cast<std::size_t>(id)]);
        }
        return tree;
    }

    /// Leaf index reached by each training row in the last built tree.
    const std::vector<int>& assignment() const noexcept { return node_of_; }

private:
    void set_leaf(Tree& tree, int id, double G, double H) const {
        auto& n = tree.nodes[static_cast<std::size_t>(id)];
        n.feature = -1;
        n.value = -G / (H + opt_.l2) * opt_.learning_rate;
    }

    const Matrix& X_;
    GbdtOptions opt_;
    std::vector<std::vector<std::size_t>> sorted_;
    std::vector<int> node_of_;
};

}  // namespace gbdt

/// Fits a boosted ensemble. `on_round(e, probe_raw)` receives the probe's raw
/// booster scores (rows x boosters) after round e (1-based).
inline GbdtParams fit_gbdt(const Matrix& X, const Labels& y, int class_count, const GbdtOptions& opt,
                           const Matrix& probe,
                           const std::function<void(int, const Matrix&)>& on_round) {
    const std::size_t n = X.rows();
    const std::size_t boosters = class_count == 2 ? 1 : static_cast<std::size_t>(class_count);
    const auto counts = class_counts(y, class_count);

    GbdtParams params;
    params.base_scores.resize(boosters);
    std::vector<std::vector<double>> target(boosters, std::vector<double>(n));
    for (std::size_t b = 0; b < boosters; ++b) {
        const ClassIndex positive = class_count == 2 ? 1 : static_cast<ClassIndex>(b);
        const double prior = static_cast<double>(counts[static_cast<std::size_t>(positive)]) / static_cast<double>(n);
        params.base_scores[b] = gbdt::logit(clip_prob(prior));
        for (std::size_t i = 0; i < n; ++i) target[b][i] = y[i] == positive ? 1.0 : 0.0;
    }

    Matrix train_raw(n, boosters), probe_raw(probe.rows(), boosters);
    for (std::size_t b = 0; b < boosters; ++b) {
        for (std::size_t i = 0; i < n; ++i) train_raw(i, b) = params.base_scores[b];
        for (std::size_t i = 0; i < probe.rows(); ++i) probe_raw(i, b) = params.base_scores[b];
    }

    gbdt::TreeBuilder builder(X, opt);
    std::vector<double> grad(n), hess(n), leaf_train(n);
    for (int e = 1; e <= opt.rounds; ++e) {
        std::vector<Tree> round_trees(boosters);
        for (std::size_t b = 0; b < boosters; ++b) {
            double loss_before = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double z = train_raw(i, b);
                const double p = gbdt::sigmoid(z);
                grad[i] = p - target[b][i];
                hess[i] = std::max(p * (1.0 - p), 1e-16);
                loss_before += gbdt::logistic_loss(z, target[b][i]);
            }
            Tree tree = builder.build(grad, hess);
            const auto& leaf_of = builder.assignment();

            // Backtrack on the shrinkage so the training loss never increases.
            double scale = 1.0;
            for (int attempt = 0; attempt < 60; ++attempt) {
                double loss_after = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    loss_after += gbdt::logistic_loss(
                        train_raw(i, b) + scale * tree.nodes[static_cast<std::size_t>(leaf_of[i])].value, target[b][i]);
                if (!std::isfinite(loss_after)) throw NumericError("non-finite boosting loss", e);
                if (loss_after <= loss_before) break;
                scale = attempt == 59 ? 0.0 : scale * 0.5;
            }
            if (scale != 1.0)
                for (auto& node : tree.nodes) node.value *= scale;

            for (std::size_t i = 0; i < n; ++i)
                train_raw(i, b) += tree.nodes[static_cast<std::size_t>(leaf_of[i])].value;
            for (std::size_t i = 0; i < probe.rows(); ++i) probe_raw(i, b) += tree.predict(probe.row(i));
            round_trees[b] = std::move(tree);
        }
        params.rounds.push_back(std::move(round_trees));
        if (on_round) on_round(e, probe_raw);
    }
    return params;
}

/// Raw booster scores using only the first `rounds` rounds.
inline Matrix gbdt_raw(const GbdtParams& params, const Matrix& X, std::size_t rounds) {
    const std::size_t boosters = params.booster_count();
    Matrix raw(X.rows(), boosters);
    rounds = std::min(rounds, params.rounds.size());
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const auto x = X.row(i);
        for (std::size_t b = 0; b < boosters; ++b) {
            double z = params.base_scores[b];
            for (std::size_t e = 0; e < rounds; ++e) z += params.rounds[e][b].predict(x);
            raw(i, b) = z;
        }
    }
    return raw;
}

/// Mean logistic training loss summed over boosters, after each round 0..E.
inline std::vector<double> gbdt_loss_curve(const GbdtParams& params, const Matrix& X, const Labels& y,
                                           int class_count) {
    const std::size_t boosters = params.booster_count();
    Matrix raw(X.rows(), boosters);
    for (std::size_t i = 0; i < X.rows(); ++i)
        for (std::size_t b = 0; b < boosters; ++b) raw(i, b) = params.base_scores[b];
    auto loss = [&] {
        double total = 0.0;
        for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t b = 0; b < boosters; ++b) {
                const ClassIndex positive = class_count == 2 ? 1 : static_cast<ClassIndex>(b);
                total += gbdt::logistic_loss(raw(i, b), y[i] == positive ? 1.0 : 0.0);
            }
        return total / static_cast<double>(X.rows());
    };
    std::vector<double> curve{loss()};
    for (const auto& round : params.rounds) {
        for (std::size_t i = 0; i < X.rows(); ++i)
            for (std::size_t b = 0; b < boosters; ++b) raw(i, b) += round[b].predict(X.row(i));
        curve.push_back(loss());
    }
    return curve;
}

}  // namespace dips

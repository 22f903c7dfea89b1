#pragma once

// Softmax classifiers trained by minibatch SGD: a linear model and a
// one-hidden-layer tanh MLP. Parameters are stored flat so that the loss and
// its gradient can be checked against finite differences.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "core.hpp"
#include "random.hpp"

namespace dips {

/// Flat parameter block. hidden == 0 means the linear model.
///   linear: W[C x d], b[C]
///   mlp:    W1[H x d], b1[H], W2[C x H], b2[C]
struct SgdParams {
    int inputs = 0;
    int hidden = 0;
    int classes = 0;
    std::vector<double> w;

    static std::size_t size_for(int d, int h, int c) {
        const auto D = static_cast<std::size_t>(d), H = static_cast<std::size_t>(h), C = static_cast<std::size_t>(c);
        return h == 0 ? C * D + C : H * D + H + C * H + C;
    }

    friend bool operator==(const SgdParams&, const SgdParams&) = default;
};

struct SgdOptions {
    int epochs = 100;
    double learning_rate = 0.1;
    int batch_size = 32;
    int hidden_width = 0;  // 0 => linear
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

namespace sgd {

inline void softmax_inplace(std::span<double> z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : z) v /= s;
}

/// Forward pass for one sample; fills `hidden_out` (mlp only) and returns logits.
inline void forward(const SgdParams& p, std::span<const double> x, std::vector<double>& hidden_out,
                    std::vector<double>& logits) {
    const auto D = static_cast<std::size_t>(p.inputs), C = static_cast<std::size_t>(p.classes);
    logits.assign(C, 0.0);
    if (p.hidden == 0) {
        const double* W = p.w.data();
        const double* b = W + C * D;
        for (std::size_t k = 0; k < C; ++k) {
            double z = b[k];
            for (std::size_t j = 0; j < D; ++j) z += W[k * D + j] * x[j];
            logits[k] = z;
        }
        return;
    }
    const auto H = static_cast<std::size_t>(p.hidden);
    const double* W1 = p.w.data();
    const double* b1 = W1 + H * D;
    const double* W2 = b1 + H;
    const double* b2 = W2 + C * H;
    hidden_out.assign(H, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        double a = b1[h];
        for (std::size_t j = 0; j < D; ++j) a += W1[h * D + j] * x[j];
        hidden_out[h] = std::tanh(a);
    }
    for (std::size_t k = 0; k < C; ++k) {
        double z = b2[k];
        for (std::size_t h = 0; h < H; ++h) z += W2[k * H + h] * hidden_out[h];
        logits[k] = z;
    }
}

}  // namespace sgd

/// Mean cross-entropy (computed with log-softmax, no clipping) over the rows
/// listed in `rows`, plus 0.5 * weight_decay * ||weights||^2. When `grad` is
/// non-null it receives the exact gradient.
inline double sgd_loss(const SgdParams& p, const Matrix& X, const Labels& y, std::span<const std::size_t> rows,
                       double weight_decay, std::vector<double>* grad) {
    const auto D = static_cast<std::size_t>(p.inputs), C = static_cast<std::size_t>(p.classes),
               H = static_cast<std::size_t>(p.hidden);
    if (grad) grad->assign(p.w.size(), 0.0);
    std::vector<double> hidden, logits;
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i : rows) {
        const auto x = X.row(i);
        sgd::forward(p, x, hidden, logits);
        double m = logits[0];
        for (double v : logits) m = std::max(m, v);
        double s = 0.0;
        for (double v : logits) s += std::exp(v - m);
        const double lse = m + std::log(s);
        const auto yi = static_cast<std::size_t>(y[i]);
        loss += (lse - logits[yi]) * inv;
        if (!grad) continue;

        std::vector<double> delta(C);
        for (std::size_t k = 0; k < C; ++k) delta[k] = (std::exp(logits[k] - lse) - (k == yi ? 1.0 : 0.0)) * inv;
        double* g = grad->data();
        if (H == 0) {
            for (std::size_t k = 0; k < C; ++k) {
                for (std::size_t j = 0; j < D; ++j) g[k * D + j] += delta[k] * x[j];
                g[C * D + k] += delta[k];
            }
        } else {
            const double* W2 = p.w.data() + H * D + H;
            double* gW1 = g;
            double* gb1 = g + H * D;
            double* gW2 = gb1 + H;
            double* gb2 = gW2 + C * H;
            for (std::size_t k = 0; k < C; ++k) {
                for (std::size_t h = 0; h < H; ++h) gW2[k * H + h] += delta[k] * hidden[h];
                gb2[k] += delta[k];
            }
            for (std::size_t h = 0; h < H; ++h) {
                double back = 0.0;
                for (std::size_t k = 0; k < C; ++k) back += delta[k] * W2[k * H + h];
                back *= 1.0 - hidden[h] * hidden[h];
                for (std::size_t j = 0; j < D; ++j) gW1[h * D + j] += back * x[j];
                gb1[h] += back;
            }
        }
    }
    if (weight_decay > 0.0) {
        // Biases are not decayed.
        auto decay = [&](std::size_t begin, std::size_t end) {
            for (std::size_t q = begin; q < end; ++q) {
                loss += 0.5 * weight_decay * p.w[q] * p.w[q];
                if (grad) (*grad)[q] += weight_decay * p.w[q];
            }
        };
        if (H == 0) {
            decay(0, C * D);
        } else {
            decay(0, H * D);
            decay(H * D + H, H * D + H + C * H);
        }
    }
    return loss;
}

inline Matrix sgd_predict_proba(const SgdParams& p, const Matrix& X) {
    Matrix out(X.rows(), static_cast<std::size_t>(p.classes));
    std::vector<double> hidden, logits;
    for (std::size_t i = 0; i < X.rows(); ++i) {
        sgd::forward(p, X.row(i), hidden, logits);
        sgd::softmax_inplace(logits);
        std::copy(logits.begin(), logits.end(), out.row(i).begin());
    }
    return out;
}

inline SgdParams sgd_init(int inputs, int hidden, int classes, std::uint64_t seed) {
    SgdParams p{inputs, hidden, classes, std::vector<double>(SgdParams::size_for(inputs, hidden, classes), 0.0)};
    if (hidden == 0) return p;
    Rng rng(derive_seed(seed, "sgd-init"));
    const auto D = static_cast<std::size_t>(inputs), H = static_cast<std::size_t>(hidden),
               C = static_cast<std::size_t>(classes);
    const double a1 = std::sqrt(6.0 / static_cast<double>(D + H));
    const double a2 = std::sqrt(6.0 / static_cast<double>(H + C));
    for (std::size_t q = 0; q < H * D; ++q) p.w[q] = rng.uniform(-a1, a1);
    for (std::size_t q = 0; q < C * H; ++q) p.w[H * D + H + q] = rng.uniform(-a2, a2);
    return p;
}

/// Minibatch SGD; `on_epoch(e, probe_probs)` fires after every epoch (1-based).
inline SgdParams fit_sgd(const Matrix& X, const Labels& y, int class_count, const SgdOptions& opt,
                         const Matrix& probe, const std::function<void(int, const Matrix&)>& on_epoch) {
    SgdParams p = sgd_init(static_cast<int>(X.cols()), opt.hidden_width, class_count, opt.seed);
    Rng rng(derive_seed(opt.seed, "sgd-shuffle"));
    std::vector<std::size_t> order(X.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad;
    const auto batch = static_cast<std::size_t>(std::max(1, opt.batch_size));
    for (int e = 1; e <= opt.epochs; ++e) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::span<const std::size_t> rows(order.data() + start, end - start);
            epoch_loss += sgd_loss(p, X, y, rows, opt.weight_decay, &grad);
            for (std::size_t q = 0; q < p.w.size(); ++q) p.w[q] -= opt.learning_rate * grad[q];
        }
        if (!std::isfinite(epoch_loss)) throw NumericError("non-finite SGD loss", e);
        if (on_epoch) on_epoch(e, sgd_predict_proba(p, probe));
    }
    return p;
}

}  // namespace dips

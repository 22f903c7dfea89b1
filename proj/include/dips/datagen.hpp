#pragma once

// Synthetic generators, symmetric label noise and labeled/unlabeled/test
// splitting. All functions are pure in their arguments (seed included).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "core.hpp"
#include "random.hpp"

namespace dips {

struct Split {
    Dataset labeled;
    Dataset unlabeled;          // labels withheld
    Labels unlabeled_truth;     // hidden ground truth, same order as unlabeled
    Dataset test;
    std::uint64_t seed = 0;

    int class_count() const noexcept { return labeled.class_count; }

    void validate() const {
        labeled.validate();
        unlabeled.validate();
        test.validate();
        if (labeled.class_count != unlabeled.class_count || labeled.class_count != test.class_count)
            throw ArgumentError("split parts disagree on class_count");
        if (!unlabeled_truth.empty() && unlabeled_truth.size() != unlabeled.size())
            throw ShapeError("hidden ground truth length differs from unlabeled size");
    }
};

struct NoiseReport {
    std::vector<std::size_t> flipped_indices;  // ascending
    Labels original_labels;                    // ground truth at flipped_indices
    double p_corrupt = 0.0;
    std::uint64_t seed = 0;
};

/// Two separable uniform quadrants: [0,1]^2 labeled 1 and [-1,0]^2 labeled 0,
/// each sample equally likely to land in either. Draws with a zero coordinate
/// are redrawn so no sample sits on a quadrant boundary.
inline Dataset generate_two_quadrants(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw ArgumentError("generate_two_quadrants requires n >= 2");
    Rng rng(seed);
    Dataset ds;
    ds.features = Matrix(n, 2);
    ds.labels = Labels(n);
    ds.class_count = 2;
    ds.feature_names = {"x0", "x1"};
    auto positive = [&rng] {
        double u;
        do {
            u = rng.uniform();
        } while (u == 0.0);
        return u;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const bool upper = rng.uniform() < 0.5;
        const double sign = upper ? 1.0 : -1.0;
        ds.features(i, 0) = sign * positive();
        ds.features(i, 1) = sign * positive();
        (*ds.labels)[i] = upper ? 1 : 0;
    }
    return ds;
}

namespace detail {

inline void moon_point(Rng& rng, ClassIndex label, double noise_std, double& x, double& y) {
    const double t = rng.uniform() * std::numbers::pi;
    if (label == 0) {
        x = std::cos(t);
        y = std::sin(t);
    } else {
        x = 1.0 - std::cos(t);
        y = 0.5 - std::sin(t);
    }
    if (noise_std > 0.0) {
        x += noise_std * rng.normal();
        y += noise_std * rng.normal();
    }
}

inline Dataset moons_block(Rng& rng, const Labels& labels, double noise_std) {
    Dataset ds;
    ds.features = Matrix(labels.size(), 2);
    ds.class_count = 2;
    ds.feature_names = {"x0", "x1"};
    for (std::size_t i = 0; i < labels.size(); ++i)
        moon_point(rng, labels[i], noise_std, ds.features(i, 0), ds.features(i, 1));
    ds.labels = labels;
    return ds;
}

}  // namespace detail

/// Two interleaving half circles with isotropic Gaussian perturbation.
/// The labeled part holds exactly n_labeled_per_class samples of each class.
inline Split generate_two_moons(std::size_t n_labeled_per_class, std::size_t n_unlab, std::size_t n_test,
                                double noise_std, std::uint64_t seed) {
    if (n_labeled_per_class < 1 || n_unlab < 1 || n_test < 1)
        throw ArgumentError("generate_two_moons requires all counts >= 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ArgumentError("noise std must be finite and >= 0");
    Rng rng(seed);
    Split split;
    split.seed = seed;

    Labels lab_labels;
    for (ClassIndex c = 0; c < 2; ++c) lab_labels.insert(lab_labels.end(), n_labeled_per_class, c);
    split.labeled = detail::moons_block(rng, lab_labels, noise_std);

    auto random_labels = [&rng](std::size_t n) {
        Labels l(n);
        for (auto& y : l) y = rng.uniform() < 0.5 ? 0 : 1;
        return l;
    };
    const Labels unlab_labels = random_labels(n_unlab);
    split.unlabeled = detail::moons_block(rng, unlab_labels, noise_std);
    split.unlabeled.labels.reset();
    split.unlabeled_truth = unlab_labels;

    split.test = detail::moons_block(rng, random_labels(n_test), noise_std);
    return split;
}

/// Replaces exactly round(p_corrupt * n) labels, chosen uniformly without
/// replacement, by a different class drawn uniformly.
inline std::pair<Labels, NoiseReport> inject_symmetric_label_noise(const Labels& labels, double p_corrupt,
                                                                    int class_count, std::uint64_t seed) {
    if (!(p_corrupt >= 0.0 && p_corrupt < 0.5)) throw ArgumentError("p_corrupt must lie in [0, 0.5)");
    if (class_count < 2) throw ArgumentError("label noise needs at least two classes");
    for (ClassIndex y : labels)
        if (y < 0 || y >= class_count) throw ArgumentError("label outside [0, class_count)");

    NoiseReport report;
    report.p_corrupt = p_corrupt;
    report.seed = seed;
    Labels noisy = labels;
    const auto n_flip = static_cast<std::size_t>(std::llround(p_corrupt * static_cast<double>(labels.size())));
    if (n_flip == 0) return {noisy, report};

    Rng rng(seed);
    auto perm = rng.permutation(labels.size());
    perm.resize(n_flip);
    std::sort(perm.begin(), perm.end());
    for (std::size_t i : perm) {
        const ClassIndex y = labels[i];
        auto r = static_cast<ClassIndex>(rng.below(static_cast<std::uint64_t>(class_count - 1)));
        noisy[i] = r >= y ? r + 1 : r;
        report.original_labels.push_back(y);
    }
    report.flipped_indices = std::move(perm);
    return {noisy, report};
}

namespace detail {

/// Largest-remainder apportionment of `total` over `weights`.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
    std::size_t sum = 0;
    for (auto w : weights) sum += w;
    std::vector<std::size_t> out(weights.size(), 0);
    if (sum == 0) return out;
    std::vector<std::pair<double, std::size_t>> rema;
    std::size_t given = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double exact = static_cast<double>(total) * static_cast<double>(weights[k]) / static_cast<double>(sum);
        out[k] = static_cast<std::size_t>(std::floor(exact));
        given += out[k];
        rema.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(rema.begin(), rema.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; given < total && j < rema.size(); ++j, ++given) ++out[rema[j].second];
    return out;
}

}  // namespace detail

/// Disjoint labeled/unlabeled/test partition. The labeled part is stratified by
/// class when labels exist; the test part receives whatever is left over.
inline Split split_lab_unlab_test(const Dataset& dataset, double lab_fraction, double unlab_fraction,
                                  std::uint64_t seed) {
    if (!(lab_fraction >= 0.0 && lab_fraction <= 1.0) || !(unlab_fraction >= 0.0 && unlab_fraction <= 1.0) ||
        lab_fraction + unlab_fraction > 1.0 + 1e-12)
        throw ArgumentError("fractions must be in [0,1] and sum to at most 1");
    dataset.validate();

    const std::size_t n = dataset.size();
    std::size_t n_lab = static_cast<std::size_t>(std::llround(lab_fraction * static_cast<double>(n)));
    std::size_t n_unlab = static_cast<std::size_t>(std::llround(unlab_fraction * static_cast<double>(n)));
    n_lab = std::min(n_lab, n);
    n_unlab = std::min(n_unlab, n - n_lab);

    Rng rng(seed);
    std::vector<std::size_t> lab_idx;
    std::vector<char> taken(n, 0);
    if (dataset.labels) {
        std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(dataset.class_count));
        for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>((*dataset.labels)[i])].push_back(i);
        std::vector<std::size_t> sizes;
        for (auto& m : members) sizes.push_back(m.size());
        const auto quota = detail::apportion(n_lab, sizes);
        for (std::size_t k = 0; k < members.size(); ++k) {
            rng.shuffle(members[k]);
            for (std::size_t j = 0; j < quota[k]; ++j) lab_idx.push_back(members[k][j]);
        }
    } else {
        auto perm = rng.permutation(n);
        lab_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_lab));
    }
    std::sort(lab_idx.begin(), lab_idx.end());
    for (auto i : lab_idx) taken[i] = 1;

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) rest.push_back(i);
    rng.shuffle(rest);
    std::vector<std::size_t> unlab_idx(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_unlab));
    std::vector<std::size_t> test_idx(rest.begin() + static_cast<std::ptrdiff_t>(n_unlab), rest.end());
    std::sort(unlab_idx.begin(), unlab_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    Split split;
    split.seed = seed;
    split.labeled = dataset.subset(lab_idx);
    split.unlabeled = dataset.subset(unlab_idx);
    if (split.unlabeled.labels) {
        split.unlabeled_truth = *split.unlabeled.labels;
        split.unlabeled.labels.reset();
    }
    split.test = dataset.subset(test_idx);
    return split;
}

/// Stratified subsample of `fraction` of the samples, at least one per present
/// class. For a fixed seed, the subsets are nested in `fraction`.
inline std::vector<std::size_t> nested_subsample(const Labels& labels, int class_count, double fraction,
                                                 std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("subsample fraction must lie in (0, 1]");
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);
    std::vector<std::size_t> out;
    for (auto& m : members) {
        if (m.empty()) continue;
        rng.shuffle(m);
        auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m.size())));
        take = std::clamp<std::size_t>(take, 1, m.size());
        out.insert(out.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace dips

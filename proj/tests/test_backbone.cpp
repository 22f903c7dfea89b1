#include <gtest/gtest.h>

#include <cmath>

#include "dips/backbone.hpp"
#include "dips/datagen.hpp"
#include "oracles.hpp"

using namespace dips;

namespace {

Dataset ten_point_set() {
    // separable along x0 at 0.45
    Dataset d;
    d.features = Matrix(10, 2, std::vector<double>{0.1, 0.9, 0.2, 0.1, 0.3, 0.5, 0.35, 0.7, 0.4, 0.2,
                                                   0.5, 0.8, 0.6, 0.3, 0.7, 0.6, 0.8, 0.1, 0.9, 0.4});
    d.labels = Labels{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    d.class_count = 2;
    return d;
}

Dataset blobs(std::size_t n, int C, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.features = Matrix(n, 3);
    d.labels = Labels(n);
    d.class_count = C;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<ClassIndex>(i % static_cast<std::size_t>(C));
        (*d.labels)[i] = y;
        for (std::size_t f = 0; f < 3; ++f) d.features(i, f) = (f == static_cast<std::size_t>(y) % 3 ? 1.5 : 0.0) + rng.normal();
    }
    return d;
}

double accuracy(const Model& m, const Dataset& d) {
    const Matrix p = m.predict_proba(d.features);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) ok += argmax(p.row(i)) == (*d.labels)[i];
    return static_cast<double>(ok) / static_cast<double>(d.size());
}

void expect_simplex(const Matrix& p) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (double v : p.row(i)) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
            s += v;
        }
        ASSERT_NEAR(s, 1.0, 1e-9);
    }
}

BackboneConfig config_for(BackboneKind kind, int E = 100) {
    BackboneConfig c;
    c.kind = kind;
    c.rounds_or_epochs = E;
    if (kind != BackboneKind::gradient_boosted_trees) c.learning_rate = 0.1;
    return c;
}

const BackboneKind kAllKinds[] = {BackboneKind::gradient_boosted_trees, BackboneKind::sgd_linear, BackboneKind::sgd_mlp};

}  // namespace

TEST(Backbone, SeparableSetMatchesStumpOracle) {
    const Dataset d = ten_point_set();
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (std::size_t i = 0; i < d.size(); ++i) {
        X.push_back({d.features(i, 0), d.features(i, 1)});
        y.push_back((*d.labels)[i]);
    }
    ASSERT_EQ(oracle::best_stump_correct(X, y), 10u);
    const Model m = train(d, config_for(BackboneKind::gradient_boosted_trees));
    EXPECT_GE(accuracy(m, d), 0.99);
    const auto curve = gbdt_loss_curve(std::get<GbdtParams>(m.params()), d.features, *d.labels, 2);
    ASSERT_EQ(curve.size(), 101u);
    for (std::size_t e = 1; e < curve.size(); ++e) EXPECT_LE(curve[e], curve[e - 1] + 1e-12);
}

TEST(Backbone, BoostingLossMonotoneOnNoisyMulticlass) {
    Dataset d = blobs(300, 4, 1);
    d.labels = inject_symmetric_label_noise(*d.labels, 0.3, 4, 2).first;
    const Model m = train(d, config_for(BackboneKind::gradient_boosted_trees));
    const auto curve = gbdt_loss_curve(std::get<GbdtParams>(m.params()), d.features, *d.labels, 4);
    for (std::size_t e = 1; e < curve.size(); ++e) EXPECT_LE(curve[e], curve[e - 1] + 1e-12);
}

TEST(Backbone, LinearModelsFitQuadrants) {
    const Dataset d = generate_two_quadrants(200, 3);
    for (auto kind : {BackboneKind::sgd_linear, BackboneKind::sgd_mlp})
        EXPECT_GE(accuracy(train(d, config_for(kind, 50)), d), 0.99) << to_string(kind);
}

TEST(Backbone, SingleCheckpointEqualsFinalPrediction) {
    const Dataset d = blobs(60, 3, 4);
    const Dataset probe = blobs(15, 3, 5);
    for (auto kind : kAllKinds) {
        int calls = 0;
        Matrix seen;
        const Model m = train_with_checkpoints(d, probe, config_for(kind, 1), [&](int e, const Matrix& p) {
            ++calls;
            EXPECT_EQ(e, 1);
            seen = p;
        });
        EXPECT_EQ(calls, 1);
        EXPECT_EQ(seen, m.predict_proba(probe.features)) << to_string(kind);
    }
}

TEST(Backbone, ObserverSeesEveryCheckpointOnSimplex) {
    const Dataset d = blobs(90, 3, 6);
    const Dataset probe = blobs(40, 3, 7);
    for (auto kind : kAllKinds) {
        int calls = 0;
        Matrix last;
        const Model m = train_with_checkpoints(d, probe, config_for(kind, 25), [&](int e, const Matrix& p) {
            EXPECT_EQ(e, ++calls);
            EXPECT_EQ(p.rows(), probe.size());
            EXPECT_EQ(p.cols(), 3u);
            expect_simplex(p);
            last = p;
        });
        EXPECT_EQ(calls, 25);
        const Matrix final_p = m.predict_proba(probe.features);
        for (std::size_t q = 0; q < final_p.data().size(); ++q) EXPECT_NEAR(final_p.data()[q], last.data()[q], 1e-12);
    }
}

TEST(Backbone, CheckpointStreamsAreDeterministic) {
    const Dataset d = blobs(80, 2, 8);
    for (auto kind : kAllKinds) {
        std::vector<Matrix> a, b;
        auto cfg = config_for(kind, 10);
        cfg.seed = 42;
        train_with_checkpoints(d, d, cfg, [&](int, const Matrix& p) { a.push_back(p); });
        train_with_checkpoints(d, d, cfg, [&](int, const Matrix& p) { b.push_back(p); });
        EXPECT_EQ(a, b) << to_string(kind);
    }
}

TEST(Backbone, PriorOnlyBoosterPredictsClassPrior) {
    Dataset d = blobs(70, 3, 9);
    (*d.labels)[0] = 2;
    (*d.labels)[1] = 2;
    const Model m = train(d, config_for(BackboneKind::gradient_boosted_trees, 5)).truncated(0);
    std::vector<double> prior(3, 0.0);
    for (ClassIndex y : *d.labels) prior[static_cast<std::size_t>(y)] += 1.0;
    double norm = 0.0;
    // one-vs-rest: normalized per-class prior
    for (auto& v : prior) norm += v / 70.0;
    const Matrix p = m.predict_proba(d.features);
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p(i, k), prior[k] / 70.0 / norm, 1e-12);

    Dataset bin = generate_two_quadrants(40, 2);
    const Model mb = train(bin, config_for(BackboneKind::gradient_boosted_trees, 3)).truncated(0);
    const double ones = static_cast<double>(class_counts(*bin.labels, 2)[1]) / 40.0;
    const Matrix pb = mb.predict_proba(bin.features);
    for (std::size_t i = 0; i < pb.rows(); ++i) EXPECT_NEAR(pb(i, 1), ones, 1e-12);
}

TEST(Backbone, ZeroLinearWeightsGiveUniformRows) {
    const Model m(BackboneKind::sgd_linear, 4, 3, 0, SgdParams{3, 0, 4, std::vector<double>(SgdParams::size_for(3, 0, 4), 0.0)});
    const Matrix p = m.predict_proba(blobs(5, 4, 1).features);
    for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Backbone, Errors) {
    const Dataset d = blobs(20, 2, 1);
    const Model m = train(d, config_for(BackboneKind::gradient_boosted_trees, 2));
    EXPECT_THROW(m.predict_proba(Matrix(3, 5)), ShapeError);
    Dataset one = d;
    std::fill(one.labels->begin(), one.labels->end(), 1);
    EXPECT_THROW(train(one, config_for(BackboneKind::gradient_boosted_trees)), DegenerateTrainingError);
    BackboneConfig bad;
    bad.rounds_or_epochs = 0;
    EXPECT_THROW(train(d, bad), ArgumentError);
    bad = {};
    bad.learning_rate = std::nan("");
    EXPECT_THROW(train(d, bad), ArgumentError);
    BackboneConfig hot = config_for(BackboneKind::sgd_linear, 50);
    hot.learning_rate = 1e300;
    Dataset big = d;
    for (double& v : big.features.data()) v *= 1e10;
    EXPECT_THROW(train(big, hot), NumericError);
}

TEST(Backbone, SgdGradientMatchesCentralDifferences) {
    Rng rng(3);
    Matrix X(5, 3);
    for (double& v : X.data()) v = rng.normal();
    const Labels y{0, 2, 1, 2, 0};
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    for (int hidden : {0, 4}) {
        SgdParams p = sgd_init(3, hidden, 3, 11);
        for (double& w : p.w) w = 0.5 * rng.normal();
        for (double wd : {0.0, 0.01}) {
            std::vector<double> grad;
            sgd_loss(p, X, y, rows, wd, &grad);
            const double h = 1e-6;
            for (std::size_t q = 0; q < p.w.size(); ++q) {
                SgdParams up = p, down = p;
                up.w[q] += h;
                down.w[q] -= h;
                const double fd = (sgd_loss(up, X, y, rows, wd, nullptr) - sgd_loss(down, X, y, rows, wd, nullptr)) / (2 * h);
                const double scale = std::max({std::abs(fd), std::abs(grad[q]), 1e-8});
                EXPECT_LE(std::abs(fd - grad[q]) / scale, 1e-4) << "hidden=" << hidden << " q=" << q;
            }
        }
    }
}

TEST(Ensemble, TenDistinctMembers) {
    const Dataset d = blobs(120, 2, 2);
    const Ensemble e = train_ensemble(d, 10, config_for(BackboneKind::gradient_boosted_trees, 20));
    ASSERT_EQ(e.size(), 10u);
    const Matrix probe = blobs(50, 2, 3).features;
    std::size_t distinct_pairs = 0;
    for (std::size_t a = 0; a < 10; ++a)
        for (std::size_t b = a + 1; b < 10; ++b)
            distinct_pairs += e.members[a].predict_proba(probe) != e.members[b].predict_proba(probe);
    EXPECT_EQ(distinct_pairs, 45u);
    for (std::size_t m = 0; m < 10; ++m) EXPECT_EQ(e.members[m].seed(), m);
}

TEST(Ensemble, NoBootstrapTreesAreIdentical) {
    const Dataset d = blobs(60, 2, 2);
    const Ensemble e = train_ensemble(d, 2, config_for(BackboneKind::gradient_boosted_trees, 10), false);
    EXPECT_EQ(e.members[0].params(), e.members[1].params());
    const Matrix u = ensemble_uncertainty(e, d.features);
    for (double v : u.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ensemble, ThreadCountDoesNotMatter) {
    const Dataset d = blobs(60, 3, 4);
    const auto cfg = config_for(BackboneKind::sgd_mlp, 5);
    const Ensemble a = train_ensemble(d, 4, cfg, true, 1);
    const Ensemble b = train_ensemble(d, 4, cfg, true, 3);
    for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(a.members[m], b.members[m]);
}

TEST(Ensemble, MeanInsideMemberHull) {
    const Dataset d = blobs(80, 3, 5);
    const Ensemble e = train_ensemble(d, 5, config_for(BackboneKind::sgd_linear, 10));
    const Matrix probe = blobs(30, 3, 6).features;
    const Matrix mean = ensemble_mean(e, probe);
    for (std::size_t q = 0; q < mean.data().size(); ++q) {
        double lo = 1.0, hi = 0.0;
        for (const auto& m : e.members) {
            const double v = m.predict_proba(probe).data()[q];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        EXPECT_GE(mean.data()[q], lo - 1e-15);
        EXPECT_LE(mean.data()[q], hi + 1e-15);
    }
}

TEST(Ensemble, TwoPointExtremeHasStdHalf) {
    auto constant = [](double raw) {
        GbdtParams g;
        g.base_scores = {raw};
        return Model(BackboneKind::gradient_boosted_trees, 2, 1, 0, g);
    };
    Ensemble e;
    e.members = {constant(-800.0), constant(800.0)};
    const Matrix u = ensemble_uncertainty(e, Matrix(3, 1));
    for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Ensemble, UncertaintyMatchesBruteForceStd) {
    const Dataset d = blobs(60, 3, 7);
    const Ensemble e = train_ensemble(d, 3, config_for(BackboneKind::sgd_mlp, 8));
    const Matrix probe = blobs(5, 3, 8).features;
    const Matrix u = ensemble_uncertainty(e, probe);
    std::vector<Matrix> preds;
    for (const auto& m : e.members) preds.push_back(m.predict_proba(probe));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t k = 0; k < 3; ++k) {
            const std::vector<double> xs{preds[0](i, k), preds[1](i, k), preds[2](i, k)};
            EXPECT_NEAR(u(i, k), oracle::population_std(xs), 1e-15);
            EXPECT_LE(u(i, k), 0.5);
        }
}

TEST(Serialization, RoundTripIsBitExact) {
    const Dataset d = blobs(60, 3, 9);
    for (auto kind : kAllKinds) {
        const Model m = train(d, config_for(kind, 7));
        const Model back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
        EXPECT_EQ(back.predict_proba(d.features), m.predict_proba(d.features)) << to_string(kind);
        EXPECT_EQ(back.kind(), kind);
    }
    EXPECT_THROW(model_from_json({{"format", "other"}}), ArgumentError);
}

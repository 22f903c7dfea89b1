#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "dips/experiments.hpp"
#include "dips/pipeline.hpp"

using namespace dips;

namespace {

Split small_split(std::uint64_t seed, double p = 0.2) { return make_quadrant_split(seed, p, 100, 300, 200); }

PipelineConfig small_config(std::uint64_t seed = 11) {
    PipelineConfig c;
    c.T = 3;
    c.seed = seed;
    c.backbone.rounds_or_epochs = 30;
    return c;
}

Dataset labeled_set(std::vector<std::vector<double>> x, Labels y) {
    Dataset d;
    d.class_count = 2;
    d.features = Matrix(x.size(), x[0].size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t f = 0; f < x[i].size(); ++f) d.features(i, f) = x[i][f];
    d.labels = std::move(y);
    return d;
}

void expect_same_history(const PipelineResult& a, const PipelineResult& b) {
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t t = 0; t < a.history.size(); ++t) {
        EXPECT_EQ(a.history[t].train_indices, b.history[t].train_indices) << "t=" << t;
        EXPECT_EQ(a.history[t].pool_indices, b.history[t].pool_indices) << "t=" << t;
        EXPECT_EQ(a.history[t].batch, b.history[t].batch) << "t=" << t;
        EXPECT_EQ(a.history[t].test_accuracy, b.history[t].test_accuracy) << "t=" << t;
    }
    EXPECT_TRUE(a.model == b.model);
}

}  // namespace

TEST(Evaluate, MajorityClassOnSixtyForty) {
    Labels y(100, 1);
    std::fill(y.begin(), y.begin() + 40, 0);
    std::vector<std::vector<double>> x(100, {0.0});
    for (std::size_t i = 0; i < 100; ++i) x[i][0] = static_cast<double>(i);
    const Dataset d = labeled_set(x, y);
    BackboneConfig b;
    b.rounds_or_epochs = 3;
    const Model prior = train(d, b).truncated(0);
    EXPECT_NEAR(evaluate(prior, d), 0.6, 1e-15);
}

TEST(Evaluate, CoinFlipLabelsStayNearHalf) {
    const Split s = small_split(1, 0.0);
    const Model m = train(s.labeled, BackboneConfig{});
    Rng rng(99);
    Dataset test = generate_two_quadrants(4000, 5);
    for (auto& y : *test.labels) y = static_cast<ClassIndex>(rng.below(2));
    // four standard deviations of a Binomial(4000, 1/2) proportion
    EXPECT_NEAR(evaluate(m, test), 0.5, 4.0 * std::sqrt(0.25 / 4000.0));
}

TEST(Evaluate, RejectsUnlabeledOrEmptyTest) {
    const Split s = small_split(1, 0.0);
    const Model m = train(s.labeled, BackboneConfig{});
    Dataset unlabeled = s.test;
    unlabeled.labels.reset();
    EXPECT_THROW(evaluate(m, unlabeled), ArgumentError);
    EXPECT_THROW(evaluate(m, s.test.subset(std::vector<std::size_t>{})), ArgumentError);
}

TEST(Run, HistoryShapeAndPseudoLabelAccuracy) {
    const auto cfg = small_config();
    const auto r = run(small_split(2), cfg);
    ASSERT_EQ(r.history.size(), 4u);
    EXPECT_FALSE(r.history[0].pseudo_label_accuracy.has_value());
    EXPECT_EQ(r.history[0].held_pseudo_labels, 0u);
    EXPECT_TRUE(r.ground_truth_available);
    for (int t = 0; t <= cfg.T; ++t) {
        const auto& rec = r.history[static_cast<std::size_t>(t)];
        EXPECT_EQ(rec.iteration, t);
        ASSERT_TRUE(rec.test_accuracy.has_value());
        EXPECT_EQ(rec.train_size, rec.train_indices.size());
        EXPECT_LE(rec.train_size, rec.pool_size);
        EXPECT_EQ(rec.verdicts.useful_labeled + rec.verdicts.useful_pseudo, rec.train_size);
        if (rec.held_pseudo_labels > 0) {
            ASSERT_TRUE(rec.pseudo_label_accuracy.has_value());
            EXPECT_GE(*rec.pseudo_label_accuracy, 0.0);
            EXPECT_LE(*rec.pseudo_label_accuracy, 1.0);
        }
    }
    EXPECT_GT(r.history.back().held_pseudo_labels, 0u);
}

TEST(Run, PseudoLabelAccuracyMatchesHiddenTruth) {
    const Split s = small_split(3);
    const auto r = run(s, small_config());
    for (const auto& rec : r.history) {
        if (rec.held.empty()) continue;
        std::size_t hit = 0;
        for (const auto& [j, y] : rec.held) hit += s.unlabeled_truth[j] == y;
        EXPECT_NEAR(*rec.pseudo_label_accuracy, static_cast<double>(hit) / static_cast<double>(rec.held.size()), 1e-15);
    }
}

TEST(Run, PermissiveDipsIdentityAndPlainLoopAgree) {
    const Split s = small_split(4);
    auto loose = small_config();
    loose.selector.tau_conf = 0.0;
    loose.selector.tau_al = AleatoricThreshold::fixed(0.25 + 1e-9);
    auto ident = small_config();
    ident.selector.kind = SelectorKind::identity;
    auto plain = small_config();
    plain.dips_at_init = plain.dips_at_iters = false;

    const auto a = run(s, loose), b = run(s, ident), c = run(s, plain);
    expect_same_history(a, b);
    expect_same_history(b, c);
    for (const auto& rec : a.history) EXPECT_EQ(rec.train_size, rec.pool_size);
}

TEST(Run, EmptyBatchTrainsOnSelectedLabeledSet) {
    const Split s = small_split(5);
    auto cfg = small_config();
    cfg.T = 1;
    cfg.plabeler.tau_p = 1.0;
    const auto r = run(s, cfg);
    ASSERT_EQ(r.history.size(), 2u);
    EXPECT_EQ(r.history[1].new_pseudo_labels, 0u);
    EXPECT_EQ(r.history[1].held_pseudo_labels, 0u);
    EXPECT_FALSE(r.history[1].pseudo_label_accuracy.has_value());

    BackboneConfig b = cfg.backbone;
    b.seed = derive_seed(cfg.seed, "backbone", 1);
    const Model expected = train(s.labeled.subset(r.history[0].train_indices), b);
    EXPECT_TRUE(r.model == expected);
}

TEST(Run, GrowVersionOnlyAddsAndNeverRelabels) {
    const Split s = small_split(6);
    auto cfg = small_config();
    cfg.T = 4;
    const auto r = run(s, cfg);
    std::map<std::size_t, ClassIndex> assigned;
    for (std::size_t t = 1; t < r.history.size(); ++t) {
        const auto& prev = r.history[t - 1].pool_indices;
        const auto& cur = r.history[t].pool_indices;
        EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end())) << "t=" << t;
        EXPECT_EQ(cur.size(), prev.size() + r.history[t].new_pseudo_labels);
        for (const auto& e : r.history[t].batch) {
            EXPECT_EQ(e.iteration, static_cast<int>(t));
            EXPECT_TRUE(assigned.emplace(e.index, e.label).second) << "sample " << e.index << " labeled twice";
        }
        for (const auto& [j, y] : r.history[t].held) EXPECT_EQ(assigned.at(j), y);
    }
    for (std::size_t i = 0; i < r.state.pool.size(); ++i) {
        const auto& p = r.state.pool[i];
        if (p.origin == SampleProvenance::Origin::pseudo_labeled) {
            EXPECT_EQ(assigned.at(i - r.state.n_labeled), p.current_label);
        }
    }
}

TEST(Run, RebuildVersionStartsFromInitialSet) {
    const Split s = small_split(7);
    auto cfg = small_config();
    cfg.version = PipelineVersion::rebuild;
    const auto r = run(s, cfg);
    const auto& init = r.history[0].pool_indices;
    for (std::size_t t = 1; t < r.history.size(); ++t)
        EXPECT_EQ(r.history[t].pool_size, init.size() + r.history[t].new_pseudo_labels);
}

TEST(Run, DeterministicAcrossCalls) {
    const Split s = small_split(8);
    for (auto kind : {PlabelerKind::greedy, PlabelerKind::ups, PlabelerKind::flexmatch, PlabelerKind::sla_lite}) {
        auto cfg = small_config();
        cfg.T = 2;
        cfg.plabeler.kind = kind;
        cfg.plabeler.ensemble_size = 3;
        const auto a = run(s, cfg), b = run(s, cfg);
        expect_same_history(a, b);
        EXPECT_EQ(history_to_json(cfg, a).dump(), history_to_json(cfg, b).dump()) << to_string(kind);
    }
}

TEST(Run, EverySelectorKeepsBothClasses) {
    const Split s = small_split(9, 0.4);
    for (auto kind : {SelectorKind::dips, SelectorKind::small_loss, SelectorKind::fluctuation}) {
        auto cfg = small_config();
        cfg.selector.kind = kind;
        cfg.selector.tau_conf = 1.0;
        cfg.selector.class_fallback = false;
        const auto r = run(s, cfg);
        for (const auto& rec : r.history) {
            EXPECT_FALSE(rec.fallback);
            std::set<ClassIndex> classes;
            for (auto i : rec.train_indices) classes.insert(r.state.pool[i].current_label);
            if (kind == SelectorKind::dips) {
                EXPECT_EQ(rec.train_size, 2u);
            }
            std::set<ClassIndex> labeled;
            for (auto i : rec.pool_indices)
                if (i < r.state.n_labeled) labeled.insert(r.state.pool[i].current_label);
            EXPECT_GE(classes.size(), std::min<std::size_t>(2, labeled.size()));
        }
    }
}

TEST(Run, RejectsBadInputs) {
    Split s = small_split(10);
    auto cfg = small_config();
    cfg.T = 0;
    EXPECT_THROW(run(s, cfg), ArgumentError);
    cfg = small_config();
    cfg.skip_first = cfg.backbone.rounds_or_epochs;
    EXPECT_THROW(run(s, cfg), ArgumentError);
    std::fill(s.labeled.labels->begin(), s.labeled.labels->end(), 0);
    EXPECT_THROW(run(s, small_config()), ArgumentError);
}

TEST(Run, NoTestOrTruthLeavesMetricsAbsent) {
    Split s = small_split(12);
    s.test = s.test.subset(std::vector<std::size_t>{});
    s.unlabeled_truth.clear();
    const auto r = run(s, small_config());
    EXPECT_FALSE(r.ground_truth_available);
    for (const auto& rec : r.history) {
        EXPECT_FALSE(rec.test_accuracy.has_value());
        EXPECT_FALSE(rec.pseudo_label_accuracy.has_value());
    }
}

TEST(Export, HistoryJson) {
    const auto cfg = small_config();
    const auto r = run(small_split(13), cfg);
    const auto j = history_to_json(cfg, r);
    EXPECT_EQ(j["iterations"].size(), 4u);
    EXPECT_TRUE(j["iterations"][0]["pseudo_label_accuracy"].is_null());
    EXPECT_EQ(j["config"]["selector"]["tau_al_reference"], "candidates");
    EXPECT_EQ(j["config"]["backbone"]["rounds_or_epochs"], 30);
    EXPECT_FALSE(j["iterations"][1].contains("seconds"));
    EXPECT_TRUE(history_to_json(cfg, r, true)["iterations"][1].contains("seconds"));
    EXPECT_EQ(j["iterations"][2]["train_size"], r.history[2].train_size);
}

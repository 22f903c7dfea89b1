#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dips/experiments.hpp"
#include "oracles.hpp"

using namespace dips;
namespace fs = std::filesystem;

namespace {

ExperimentSpec small_spec(ExperimentKind kind, int seeds = 1) {
    ExperimentSpec s;
    s.kind = kind;
    s.seeds = seeds;
    s.base_seed = 2024;
    s.n_lab = 60;
    s.n_unlab = 150;
    s.n_test = 150;
    s.moons_per_class = 30;
    s.moons_unlab = 120;
    s.pipeline.T = 2;
    s.pipeline.backbone.rounds_or_epochs = 15;
    s.out_dir = fs::temp_directory_path() / "dips_experiments_test";
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_method(const RunResult& r, const std::string& m) {
    return static_cast<std::size_t>(
        std::count_if(r.rows.begin(), r.rows.end(), [&](const RunRow& row) { return row.method == m; }));
}

}  // namespace

TEST(Spec, ResolvedDefaultsAndValidation) {
    ExperimentSpec s;
    s.kind = ExperimentKind::two_moons;
    EXPECT_EQ(s.resolved().seeds, 10);
    EXPECT_TRUE(s.resolved().p_corrupt.empty());
    s.kind = ExperimentKind::noise_sweep;
    EXPECT_EQ(s.resolved().seeds, 20);
    EXPECT_EQ(s.resolved().p_corrupt, default_noise_grid());
    s.kind = ExperimentKind::data_efficiency;
    EXPECT_EQ(s.resolved().p_corrupt, (std::vector<double>{0.2}));
    EXPECT_EQ(s.resolved().fractions.size(), 10u);

    ExperimentSpec bad;
    bad.p_corrupt = {0.5};
    EXPECT_THROW(bad.resolved(), ArgumentError);
    bad = {};
    bad.fractions = {0.0};
    EXPECT_THROW(bad.resolved(), ArgumentError);
    bad = {};
    bad.jobs = 0;
    EXPECT_THROW(bad.resolved(), ArgumentError);
    bad = {};
    bad.kind = ExperimentKind::custom_csv;
    EXPECT_THROW(bad.resolved(), ArgumentError);
}

TEST(NoiseSweep, OneSeedOneLevelGivesFiveRows) {
    auto spec = small_spec(ExperimentKind::noise_sweep);
    spec.p_corrupt = {0.2};
    const auto r = cmd_noise_sweep(spec);
    ASSERT_EQ(r.rows.size(), 5u);
    const std::vector<std::string> names{"supervised", "pl", "pl+dips", "pl+small_loss", "pl+fluctuation"};
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_EQ(r.rows[k].method, names[k]);
        EXPECT_EQ(r.rows[k].status, "ok");
        EXPECT_EQ(r.rows[k].param, "p_corrupt");
        EXPECT_EQ(r.rows[k].value, 0.2);
        ASSERT_TRUE(r.rows[k].test_accuracy.has_value());
    }
    EXPECT_FALSE(r.rows[0].pseudo_label_accuracy.has_value());
    EXPECT_EQ(r.rows[0].train_size, spec.n_lab);
    EXPECT_EQ(r.aggregates.size(), 5u);
    EXPECT_TRUE(r.extras.contains("dips_minus_pl"));
}

TEST(Ablation, RowCountsAndPlainVariantEqualsPl) {
    auto spec = small_spec(ExperimentKind::ablation, 2);
    spec.p_corrupt = {0.1, 0.3};
    const auto r = cmd_ablation(spec);
    EXPECT_EQ(r.rows.size(), 4u * 2u * 2u);
    for (const char* m : {"dips", "a1", "a2", "a3"}) EXPECT_EQ(count_method(r, m), 4u);

    auto pl_spec = spec;
    pl_spec.kind = ExperimentKind::noise_sweep;
    const auto pl = cmd_noise_sweep(pl_spec);
    for (double p : spec.p_corrupt) EXPECT_EQ(r.accuracies("a3", "-", p), pl.accuracies("pl", "-", p));
}

TEST(Aggregates, RecomputableFromRows) {
    auto spec = small_spec(ExperimentKind::noise_sweep, 3);
    spec.p_corrupt = {0.1, 0.2};
    const auto r = cmd_noise_sweep(spec);
    EXPECT_EQ(r.rows.size(), 30u);
    ASSERT_EQ(r.aggregates.size(), 10u);
    for (const auto& a : r.aggregates) {
        std::vector<double> xs;
        for (const auto& row : r.rows)
            if (row.method == a.method && row.value == a.value) xs.push_back(*row.test_accuracy);
        ASSERT_EQ(xs.size(), a.n);
        double m = 0.0;
        for (double x : xs) m += x;
        m /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - m) * (x - m);
        const double se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
        EXPECT_NEAR(a.mean, m, 1e-12);
        EXPECT_NEAR(a.standard_error, se, 1e-12);
    }
}

TEST(Seeding, MethodsSharePairedData) {
    auto spec = small_spec(ExperimentKind::noise_sweep, 2);
    spec.p_corrupt = {0.2};
    const auto r = cmd_noise_sweep(spec);
    std::set<std::uint64_t> seeds0, seeds1;
    for (const auto& row : r.rows) (row.seed_index == 0 ? seeds0 : seeds1).insert(row.seed);
    EXPECT_EQ(seeds0.size(), 1u);
    EXPECT_EQ(seeds1.size(), 1u);
    EXPECT_NE(*seeds0.begin(), *seeds1.begin());
}

TEST(DataEfficiency, NestedFractionsAndReference) {
    auto spec = small_spec(ExperimentKind::data_efficiency, 2);
    spec.fractions = {0.5};
    const auto r = cmd_data_efficiency(spec);
    // fraction 1.0 is added for the reference
    EXPECT_EQ(r.rows.size(), 2u * 2u * 2u);
    const auto& e = r.extras["data_efficiency"][0];
    const auto* ref = r.find("pl", "p_corrupt=0.2", 1.0);
    ASSERT_NE(ref, nullptr);
    EXPECT_EQ(e["reference_accuracy"].get<double>(), ref->mean);
    for (const auto& d : e["deltas"]) {
        const auto* a = r.find(d["method"].get<std::string>(), "p_corrupt=0.2", d["fraction"].get<double>());
        EXPECT_NEAR(d["delta"].get<double>(), a->mean - ref->mean, 1e-15);
    }

    const Split split = make_quadrant_split(data_seed(spec.resolved(), 0), 0.2, spec.n_lab, spec.n_unlab, spec.n_test);
    const auto seed = derive_seed(data_seed(spec.resolved(), 0), "subsample");
    const auto half = nested_subsample(*split.labeled.labels, 2, 0.5, seed);
    const auto most = nested_subsample(*split.labeled.labels, 2, 0.8, seed);
    EXPECT_TRUE(std::includes(most.begin(), most.end(), half.begin(), half.end()));
}

TEST(TwoMoons, ThreeMethodsPerSeed) {
    const auto r = cmd_two_moons(small_spec(ExperimentKind::two_moons, 2));
    EXPECT_EQ(r.rows.size(), 6u);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.param, "std");
        EXPECT_EQ(row.status, "ok");
    }
    EXPECT_TRUE(r.extras.contains("pl_minus_supervised"));
}

TEST(Sweeps, VariantsAndPercentiles) {
    auto spec = small_spec(ExperimentKind::percentile_sweep);
    spec.p_corrupt = {0.3};
    spec.percentiles = {0.25, 0.5};
    const auto r = cmd_percentile_sweep(spec);
    EXPECT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.extras["optimal_percentile"].size(), 1u);

    auto vspec = small_spec(ExperimentKind::version_compare);
    vspec.p_corrupt = {0.3};
    const auto v = cmd_version_compare(vspec);
    EXPECT_EQ(v.rows.size(), 5u);
    EXPECT_NE(v.find("pl+dips", "rebuild", 0.3), nullptr);
}

TEST(Execute, WorkerCountDoesNotChangeOutput) {
    auto spec = small_spec(ExperimentKind::noise_sweep, 2);
    spec.p_corrupt = {0.2, 0.3};
    spec.out_dir = fs::temp_directory_path() / "dips_exec_j1";
    const auto a = cmd_noise_sweep(spec);
    write_result(a);
    spec.jobs = 3;
    spec.out_dir = fs::temp_directory_path() / "dips_exec_j3";
    const auto b = cmd_noise_sweep(spec);
    write_result(b);
    for (const char* f : {"results.csv", "summary.csv"})
        EXPECT_EQ(slurp(fs::temp_directory_path() / "dips_exec_j1" / f), slurp(fs::temp_directory_path() / "dips_exec_j3" / f))
            << f;
    auto ja = summary_to_json(a), jb = summary_to_json(b);
    ja["spec"].erase("jobs");
    jb["spec"].erase("jobs");
    EXPECT_EQ(ja.dump(), jb.dump());
}

TEST(Export, ResultFiles) {
    auto spec = small_spec(ExperimentKind::noise_sweep);
    spec.p_corrupt = {0.2};
    spec.out_dir = fs::temp_directory_path() / "dips_export_test";
    spec.write_histories = true;
    fs::remove_all(spec.out_dir);
    const auto r = cmd_noise_sweep(spec);
    write_result(r);
    const std::string rows = slurp(spec.out_dir / "results.csv");
    EXPECT_EQ(rows.substr(0, rows.find('\n')),
              "experiment,method,variant,param,value,seed_index,seed,status,test_accuracy,pseudo_label_accuracy,"
              "train_size,pool_size,held_pseudo_labels");
    EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 6);
    const auto j = nlohmann::json::parse(slurp(spec.out_dir / "summary.json"));
    EXPECT_EQ(j["runs"], 5);
    EXPECT_EQ(j["failed_runs"], 0);
    EXPECT_EQ(j["aggregates"].size(), 5u);
    std::size_t histories = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(spec.out_dir / "histories")) ++histories;
    EXPECT_EQ(histories, 4u);
}

TEST(RunCsv, StringLabelsSchemaAndDictionary) {
    const fs::path dir = fs::temp_directory_path() / "dips_run_csv_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path csv = dir / "data.csv";
    {
        const Dataset d = generate_two_quadrants(300, 77);
        std::ofstream out(csv);
        out << "a,b,kind\n";
        for (std::size_t i = 0; i < d.size(); ++i)
            out << d.features(i, 0) << ',' << d.features(i, 1) << ',' << ((*d.labels)[i] ? "upper" : "lower") << '\n';
    }
    auto spec = small_spec(ExperimentKind::custom_csv, 2);
    spec.csv_path = csv;
    spec.label_column = std::string("kind");
    spec.csv_plabelers = {PlabelerKind::greedy, PlabelerKind::sla_lite};
    spec.out_dir = dir / "out";
    const auto r = cmd_run_csv(spec);
    EXPECT_EQ(r.rows.size(), (1u + 2u * 2u) * 2u);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.status, "ok") << row.method;
        EXPECT_EQ(row.param, "lab_fraction");
        EXPECT_NEAR(row.value, 0.08, 1e-12);
    }
    EXPECT_EQ(count_method(r, "greedy"), 4u);
    EXPECT_EQ(r.extras["class_count"], 2);
    EXPECT_EQ(r.extras["samples"], 300);
    EXPECT_EQ(r.extras["variance"]["per_method"].size(), 2u);

    const auto dict = nlohmann::json::parse(slurp(spec.out_dir / "label_dictionary.json"));
    const auto expected = oracle::scan_label_dictionary(csv.string(), 2);
    ASSERT_EQ(dict.size(), expected.size());
    for (const auto& [name, k] : expected) EXPECT_EQ(dict.at(name).get<int>(), k) << name;
}

TEST(RunCsv, MissingFileIsAnError) {
    auto spec = small_spec(ExperimentKind::custom_csv);
    spec.csv_path = "/nonexistent/data.csv";
    EXPECT_THROW(cmd_run_csv(spec), Error);
}

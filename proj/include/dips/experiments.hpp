#pragma once

// Experiment harness: builds paired-seed jobs for each study, runs them on a
// worker pool, and emits long-format per-run rows plus grouped aggregates.
// Rows are stored by job index, so output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "backbone.hpp"
#include "csv.hpp"
#include "datagen.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "stats.hpp"

namespace dips {

enum class ExperimentKind {
    noise_sweep,
    ablation,
    threshold_sweep,
    percentile_sweep,
    data_efficiency,
    version_compare,
    two_moons,
    custom_csv
};

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::noise_sweep: return "noise_sweep";
        case ExperimentKind::ablation: return "ablation";
        case ExperimentKind::threshold_sweep: return "threshold_sweep";
        case ExperimentKind::percentile_sweep: return "percentile_sweep";
        case ExperimentKind::data_efficiency: return "data_efficiency";
        case ExperimentKind::version_compare: return "version_compare";
        case ExperimentKind::two_moons: return "two_moons";
        case ExperimentKind::custom_csv: return "custom_csv";
    }
    return "?";
}

inline const std::vector<double>& default_noise_grid() {
    static const std::vector<double> grid{0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45};
    return grid;
}

/// {0.05 + 0.1 k | k = 1..6}
inline const std::vector<double>& default_percentiles() {
    static const std::vector<double> grid{0.15, 0.25, 0.35, 0.45, 0.55, 0.65};
    return grid;
}

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::noise_sweep;
    std::vector<double> p_corrupt;    // empty: kind default
    std::vector<double> fractions;    // data_efficiency
    std::vector<double> percentiles;  // percentile grid
    int seeds = 0;                    // 0: kind default
    std::uint64_t base_seed = 0;
    PipelineConfig pipeline;  // template; seeds are overwritten per run
    std::filesystem::path out_dir = "results";
    int jobs = 1;
    bool write_histories = false;

    // synthetic data
    std::size_t n_lab = 100;
    std::size_t n_unlab = 900;
    std::size_t n_test = 1000;
    bool corrupt_unlabeled = false;
    std::size_t moons_per_class = 100;
    std::size_t moons_unlab = 800;
    double moons_std = 0.4;

    // custom_csv
    std::filesystem::path csv_path;
    ColumnRef label_column = std::string("label");
    bool has_header = true;
    double csv_test_fraction = 0.2;
    double csv_lab_share = 0.1;  // of the non-test part; the rest is unlabeled
    std::vector<PlabelerKind> csv_plabelers{PlabelerKind::greedy, PlabelerKind::ups, PlabelerKind::flexmatch,
                                            PlabelerKind::sla_lite};

    /// Fills kind-dependent defaults and validates.
    ExperimentSpec resolved() const {
        ExperimentSpec s = *this;
        if (s.seeds == 0)
            s.seeds = kind == ExperimentKind::two_moons ? 10 : kind == ExperimentKind::custom_csv ? 50 : 20;
        if (s.p_corrupt.empty()) {
            if (kind == ExperimentKind::data_efficiency) s.p_corrupt = {0.2};
            else if (kind != ExperimentKind::two_moons && kind != ExperimentKind::custom_csv) s.p_corrupt = default_noise_grid();
        }
        if (s.fractions.empty()) s.fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
        if (s.percentiles.empty()) s.percentiles = default_percentiles();
        if (s.seeds < 1) throw ArgumentError("at least one seed is required");
        if (s.jobs < 1) throw ArgumentError("jobs must be >= 1");
        for (double p : s.p_corrupt)
            if (!(p >= 0.0 && p < 0.5)) throw ArgumentError("p_corrupt values must lie in [0, 0.5)");
        for (double f : s.fractions)
            if (!(f > 0.0 && f <= 1.0)) throw ArgumentError("fractions must lie in (0, 1]");
        for (double q : s.percentiles)
            if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("percentiles must lie in [0, 1]");
        if (kind == ExperimentKind::custom_csv && s.csv_path.empty()) throw ArgumentError("a CSV path is required");
        if (!(s.csv_test_fraction >= 0.0 && s.csv_test_fraction < 1.0) || !(s.csv_lab_share > 0.0 && s.csv_lab_share < 1.0))
            throw ArgumentError("CSV split fractions out of range");
        s.pipeline.validate();
        return s;
    }
};

struct RunRow {
    std::string experiment;
    std::string method;
    std::string variant;  // "-" when unused
    std::string param;    // name of the swept setting
    double value = 0.0;
    int seed_index = 0;
    std::uint64_t seed = 0;
    std::string status = "ok";
    std::optional<double> test_accuracy;
    std::optional<double> pseudo_label_accuracy;
    std::size_t train_size = 0;
    std::size_t pool_size = 0;
    std::size_t held_pseudo_labels = 0;
};

struct Aggregate {
    std::string method, variant, param;
    double value = 0.0;
    std::size_t n = 0;
    double mean = 0.0;
    double standard_error = 0.0;
    std::optional<double> pl_accuracy_mean;
};

struct RunResult {
    ExperimentSpec spec;
    std::vector<RunRow> rows;
    std::vector<Aggregate> aggregates;
    nlohmann::ordered_json extras = nlohmann::ordered_json::object();

    /// Test accuracies of one group, ordered by seed index.
    std::vector<double> accuracies(const std::string& method, const std::string& variant, double value) const {
        std::vector<double> out;
        for (const auto& r : rows)
            if (r.method == method && r.variant == variant && r.value == value && r.test_accuracy)
                out.push_back(*r.test_accuracy);
        return out;
    }

    const Aggregate* find(const std::string& method, const std::string& variant, double value) const {
        for (const auto& a : aggregates)
            if (a.method == method && a.variant == variant && a.value == value) return &a;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Logging

/// Line-per-event log on standard error; silent unless enabled.
class EventLog {
public:
    static EventLog& instance() {
        static EventLog log;
        return log;
    }
    void enable(bool on) { enabled_ = on; }
    void emit(const nlohmann::json& event) {
        if (!enabled_) return;
        std::lock_guard lock(mu_);
        std::fprintf(stderr, "%s\n", event.dump().c_str());
    }

private:
    std::atomic<bool> enabled_{false};
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Methods and data

struct MethodSpec {
    std::string name;
    std::string variant = "-";
    bool supervised = false;
    std::function<void(PipelineConfig&)> configure;
};

inline PipelineConfig vanilla(PipelineConfig c) {
    c.dips_at_init = c.dips_at_iters = false;
    return c;
}

inline std::vector<MethodSpec> noise_methods() {
    return {
        {"supervised", "-", true, {}},
        {"pl", "-", false, [](PipelineConfig& c) { c = vanilla(c); }},
        {"pl+dips", "-", false, [](PipelineConfig& c) {
             c.dips_at_init = c.dips_at_iters = true;
             c.selector.kind = SelectorKind::dips;
         }},
        {"pl+small_loss", "-", false, [](PipelineConfig& c) {
             c.dips_at_init = c.dips_at_iters = true;
             c.selector.kind = SelectorKind::small_loss;
         }},
        {"pl+fluctuation", "-", false, [](PipelineConfig& c) {
             c.dips_at_init = c.dips_at_iters = true;
             c.selector.kind = SelectorKind::fluctuation;
         }},
    };
}

inline std::vector<MethodSpec> ablation_methods() {
    auto variant = [](bool init, bool iters) {
        return [=](PipelineConfig& c) {
            c.selector.kind = SelectorKind::dips;
            c.dips_at_init = init;
            c.dips_at_iters = iters;
        };
    };
    return {{"dips", "-", false, variant(true, true)},
            {"a1", "-", false, variant(true, false)},
            {"a2", "-", false, variant(false, true)},
            {"a3", "-", false, variant(false, false)}};
}

/// Two-quadrant split: a pool of n_lab + n_unlab points split into labeled
/// and unlabeled parts, plus an independent clean test set. Label noise is
/// applied to the labeled part (and to the hidden unlabeled truth on request).
inline Split make_quadrant_split(std::uint64_t seed, double p_corrupt, std::size_t n_lab = 100,
                                 std::size_t n_unlab = 900, std::size_t n_test = 1000,
                                 bool corrupt_unlabeled = false) {
    const std::size_t n = n_lab + n_unlab;
    const Dataset pool = generate_two_quadrants(n, derive_seed(seed, "pool"));
    Split s = split_lab_unlab_test(pool, static_cast<double>(n_lab) / static_cast<double>(n),
                                   static_cast<double>(n_unlab) / static_cast<double>(n), derive_seed(seed, "split"));
    s.test = generate_two_quadrants(n_test, derive_seed(seed, "test"));
    s.seed = seed;
    if (p_corrupt > 0.0) {
        s.labeled.labels = inject_symmetric_label_noise(*s.labeled.labels, p_corrupt, 2, derive_seed(seed, "noise")).first;
        if (corrupt_unlabeled && !s.unlabeled_truth.empty())
            s.unlabeled_truth =
                inject_symmetric_label_noise(s.unlabeled_truth, p_corrupt, 2, derive_seed(seed, "noise-unlab")).first;
    }
    return s;
}

inline std::uint64_t data_seed(const ExperimentSpec& spec, int s) {
    return derive_seed(spec.base_seed, "data", static_cast<std::uint64_t>(s));
}
inline std::uint64_t run_seed(const ExperimentSpec& spec, int s) {
    return derive_seed(spec.base_seed, "run", static_cast<std::uint64_t>(s));
}

/// One run of `method` on `split`; errors are recorded in the row status.
inline RunRow run_method(const Split& split, const ExperimentSpec& spec, const MethodSpec& method, RunRow row,
                         const std::function<void(PipelineConfig&)>& extra = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    row.method = method.name;
    row.variant = method.variant;
    try {
        PipelineConfig cfg = spec.pipeline;
        cfg.seed = row.seed;
        if (method.configure) method.configure(cfg);
        if (extra) extra(cfg);
        if (method.supervised) {
            BackboneConfig b = cfg.backbone;
            b.seed = derive_seed(cfg.seed, "backbone", 0);
            const Model m = train(split.labeled, b);
            row.test_accuracy = evaluate(m, split.test);
            row.train_size = row.pool_size = split.labeled.size();
        } else {
            const PipelineResult res = run(split, cfg);
            const auto& last = res.history.back();
            row.test_accuracy = last.test_accuracy;
            row.pseudo_label_accuracy = last.pseudo_label_accuracy;
            row.train_size = last.train_size;
            row.pool_size = last.pool_size;
            row.held_pseudo_labels = last.held_pseudo_labels;
            if (spec.write_histories) {
                char name[160];
                std::snprintf(name, sizeof name, "%s_%s_%s=%g_seed%d.json", row.experiment.c_str(),
                              method.name.c_str(), method.variant.c_str(), row.value, row.seed_index);
                std::string file(name);
                std::replace(file.begin(), file.end(), '+', '_');
                std::filesystem::create_directories(spec.out_dir / "histories");
                std::ofstream out(spec.out_dir / "histories" / file);
                out << history_to_json(cfg, res).dump(2) << '\n';
            }
        }
    } catch (const Error& e) {
        row.status = std::string(e.kind()) + ": " + e.what();
    } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
    }
    EventLog::instance().emit({{"event", "run"},
                               {"experiment", row.experiment},
                               {"method", row.method},
                               {"variant", row.variant},
                               {row.param, row.value},
                               {"seed_index", row.seed_index},
                               {"status", row.status},
                               {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
    return row;
}

// ---------------------------------------------------------------------------
// Execution and aggregation

using Job = std::function<RunRow()>;

/// Runs `jobs` on `threads` workers; results keep job order.
inline std::vector<RunRow> execute(const std::vector<Job>& jobs, int threads) {
    std::vector<RunRow> rows(jobs.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) rows[i] = jobs[i]();
        return rows;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < jobs.size();) rows[i] = jobs[i]();
        });
    for (auto& th : pool) th.join();
    return rows;
}

/// Mean and standard error of test accuracy per (method, variant, value),
/// in order of first appearance.
inline std::vector<Aggregate> aggregate(const std::vector<RunRow>& rows) {
    std::vector<Aggregate> out;
    std::vector<std::vector<double>> acc, pl;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const Aggregate& a) {
            return a.method == r.method && a.variant == r.variant && a.param == r.param && a.value == r.value;
        });
        std::size_t k = static_cast<std::size_t>(it - out.begin());
        if (it == out.end()) {
            out.push_back({r.method, r.variant, r.param, r.value, 0, 0.0, 0.0, std::nullopt});
            acc.emplace_back();
            pl.emplace_back();
        }
        if (r.test_accuracy) acc[k].push_back(*r.test_accuracy);
        if (r.pseudo_label_accuracy) pl[k].push_back(*r.pseudo_label_accuracy);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].n = acc[k].size();
        if (!acc[k].empty()) {
            out[k].mean = stats::mean(acc[k]);
            out[k].standard_error = stats::standard_error(acc[k]);
        }
        if (!pl[k].empty()) out[k].pl_accuracy_mean = stats::mean(pl[k]);
    }
    return out;
}

namespace detail {

inline std::string fmt(double v, const char* f = "%.17g") {
    char buf[40];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

inline nlohmann::ordered_json number_list(const std::vector<double>& xs) {
    auto j = nlohmann::ordered_json::array();
    for (double x : xs) j.push_back(x);
    return j;
}

}  // namespace detail

inline nlohmann::ordered_json spec_to_json(const ExperimentSpec& s) {
    nlohmann::ordered_json j;
    j["experiment"] = to_string(s.kind);
    j["seeds"] = s.seeds;
    j["base_seed"] = s.base_seed;
    j["p_corrupt"] = detail::number_list(s.p_corrupt);
    if (s.kind == ExperimentKind::data_efficiency) j["fractions"] = detail::number_list(s.fractions);
    if (s.kind == ExperimentKind::threshold_sweep || s.kind == ExperimentKind::percentile_sweep)
        j["percentiles"] = detail::number_list(s.percentiles);
    if (s.kind == ExperimentKind::two_moons) {
        j["moons_per_class"] = s.moons_per_class;
        j["moons_unlab"] = s.moons_unlab;
        j["moons_std"] = s.moons_std;
    } else if (s.kind == ExperimentKind::custom_csv) {
        j["csv_path"] = s.csv_path.filename().string();
        j["csv_test_fraction"] = s.csv_test_fraction;
        j["csv_lab_share"] = s.csv_lab_share;
    } else {
        j["n_lab"] = s.n_lab;
        j["n_unlab"] = s.n_unlab;
        j["n_test"] = s.n_test;
        j["corrupt_unlabeled"] = s.corrupt_unlabeled;
    }
    j["n_test"] = s.n_test;
    j["pipeline"] = config_to_json(s.pipeline);
    return j;
}

inline void write_rows_csv(std::ostream& out, const std::vector<RunRow>& rows) {
    out << "experiment,method,variant,param,value,seed_index,seed,status,test_accuracy,pseudo_label_accuracy,"
           "train_size,pool_size,held_pseudo_labels\n";
    for (const auto& r : rows)
        out << r.experiment << ',' << detail::csv_field(r.method) << ',' << detail::csv_field(r.variant) << ','
            << r.param << ',' << detail::fmt(r.value, "%.10g") << ',' << r.seed_index << ',' << r.seed << ','
            << detail::csv_field(r.status) << ',' << detail::fmt_opt(r.test_accuracy) << ','
            << detail::fmt_opt(r.pseudo_label_accuracy) << ',' << r.train_size << ',' << r.pool_size << ','
            << r.held_pseudo_labels << '\n';
}

inline void write_aggregates_csv(std::ostream& out, const std::vector<Aggregate>& aggs) {
    out << "method,variant,param,value,n,mean_test_accuracy,standard_error,mean_pseudo_label_accuracy\n";
    for (const auto& a : aggs)
        out << detail::csv_field(a.method) << ',' << detail::csv_field(a.variant) << ',' << a.param << ','
            << detail::fmt(a.value, "%.10g") << ',' << a.n << ',' << detail::fmt(a.mean) << ','
            << detail::fmt(a.standard_error) << ',' << detail::fmt_opt(a.pl_accuracy_mean) << '\n';
}

inline nlohmann::ordered_json summary_to_json(const RunResult& r) {
    nlohmann::ordered_json aggs = nlohmann::ordered_json::array();
    for (const auto& a : r.aggregates) {
        nlohmann::ordered_json j;
        j["method"] = a.method;
        j["variant"] = a.variant;
        j[a.param] = a.value;
        j["n"] = a.n;
        j["mean_test_accuracy"] = a.mean;
        j["standard_error"] = a.standard_error;
        j["mean_pseudo_label_accuracy"] = a.pl_accuracy_mean ? nlohmann::ordered_json(*a.pl_accuracy_mean) : nlohmann::ordered_json(nullptr);
        aggs.push_back(std::move(j));
    }
    std::size_t failed = 0;
    for (const auto& row : r.rows)
        if (row.status != "ok") ++failed;
    nlohmann::ordered_json j;
    j["spec"] = spec_to_json(r.spec);
    j["runs"] = r.rows.size();
    j["failed_runs"] = failed;
    j["aggregates"] = aggs;
    j["extras"] = r.extras;
    return j;
}

/// Writes results.csv, summary.csv and summary.json into spec.out_dir.
inline void write_result(const RunResult& r) {
    std::filesystem::create_directories(r.spec.out_dir);
    auto open = [&](const char* name) {
        std::ofstream out(r.spec.out_dir / name, std::ios::binary);
        if (!out) throw IoError(std::string("cannot write ") + (r.spec.out_dir / name).string());
        return out;
    };
    {
        auto out = open("results.csv");
        write_rows_csv(out, r.rows);
    }
    {
        auto out = open("summary.csv");
        write_aggregates_csv(out, r.aggregates);
    }
    {
        auto out = open("summary.json");
        out << summary_to_json(r).dump(2) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Studies

namespace detail {

inline RunRow base_row(const ExperimentSpec& spec, const char* param, double value, int s) {
    RunRow row;
    row.experiment = to_string(spec.kind);
    row.param = param;
    row.value = value;
    row.seed_index = s;
    row.seed = run_seed(spec, s);
    return row;
}

inline RunResult finish(const ExperimentSpec& spec, const std::vector<Job>& jobs) {
    RunResult r;
    r.spec = spec;
    r.rows = execute(jobs, spec.jobs);
    r.aggregates = aggregate(r.rows);
    return r;
}

/// Jobs for `methods` x p_corrupt x seeds on two-quadrant splits.
inline std::vector<Job> quadrant_jobs(const ExperimentSpec& spec, const std::vector<MethodSpec>& methods,
                                      const std::function<void(PipelineConfig&)>& extra = {}) {
    std::vector<Job> jobs;
    for (double p : spec.p_corrupt)
        for (const auto& m : methods)
            for (int s = 0; s < spec.seeds; ++s)
                jobs.push_back([&spec, m, p, s, extra] {
                    const Split split = make_quadrant_split(data_seed(spec, s), p, spec.n_lab, spec.n_unlab, spec.n_test,
                                                            spec.corrupt_unlabeled);
                    return run_method(split, spec, m, base_row(spec, "p_corrupt", p, s), extra);
                });
    return jobs;
}

inline double gap(const RunResult& r, const std::string& a, const std::string& b, double value,
                  const std::string& variant = "-") {
    const auto* x = r.find(a, variant, value);
    const auto* y = r.find(b, variant, value);
    return (x && y) ? x->mean - y->mean : 0.0;
}

}  // namespace detail

/// supervised / PL / PL+DIPS / PL+small_loss / PL+fluctuation over the noise grid.
inline RunResult cmd_noise_sweep(ExperimentSpec spec) {
    spec.kind = ExperimentKind::noise_sweep;
    spec = spec.resolved();
    auto r = detail::finish(spec, detail::quadrant_jobs(spec, noise_methods()));
    auto gaps = nlohmann::ordered_json::array();
    for (double p : spec.p_corrupt)
        gaps.push_back({{"p_corrupt", p}, {"dips_minus_pl", detail::gap(r, "pl+dips", "pl", p)}});
    r.extras["dips_minus_pl"] = gaps;
    return r;
}

/// DIPS / A1 (init only) / A2 (iterations only) / A3 (neither).
inline RunResult cmd_ablation(ExperimentSpec spec) {
    spec.kind = ExperimentKind::ablation;
    spec = spec.resolved();
    return detail::finish(spec, detail::quadrant_jobs(spec, ablation_methods()));
}

namespace detail {

inline std::vector<Job> percentile_jobs(const ExperimentSpec& spec) {
    std::vector<MethodSpec> methods;
    for (double q : spec.percentiles) {
        methods.push_back({"pl+dips", "percentile=" + fmt(q, "%.10g"), false, [q](PipelineConfig& c) {
                               c.dips_at_init = c.dips_at_iters = true;
                               c.selector.kind = SelectorKind::dips;
                               c.selector.tau_conf_percentile = q;
                           }});
    }
    return quadrant_jobs(spec, methods);
}

inline nlohmann::ordered_json optimal_percentiles(const RunResult& r) {
    auto out = nlohmann::ordered_json::array();
    for (double p : r.spec.p_corrupt) {
        double best_q = -1.0, best = -1.0;
        for (double q : r.spec.percentiles) {
            const auto* a = r.find("pl+dips", "percentile=" + fmt(q, "%.10g"), p);
            if (a && a->n > 0 && a->mean > best) {
                best = a->mean;
                best_q = q;
            }
        }
        out.push_back({{"p_corrupt", p}, {"optimal_percentile", best_q}, {"mean_test_accuracy", best}});
    }
    return out;
}

}  // namespace detail

/// Default (0.8, adaptive), aggressive (0.9, 0.1) and permissive (0.5, 0.2)
/// thresholds, followed by the confidence-percentile grid.
inline RunResult cmd_threshold_sweep(ExperimentSpec spec) {
    spec.kind = ExperimentKind::threshold_sweep;
    spec = spec.resolved();
    auto cfg = [](double conf, std::optional<double> al) {
        return [=](PipelineConfig& c) {
            c.dips_at_init = c.dips_at_iters = true;
            c.selector.kind = SelectorKind::dips;
            c.selector.tau_conf = conf;
            if (al) c.selector.tau_al = AleatoricThreshold::fixed(*al);
        };
    };
    std::vector<MethodSpec> methods{{"pl+dips", "default", false, cfg(0.8, std::nullopt)},
                                    {"pl+dips", "aggressive", false, cfg(0.9, 0.1)},
                                    {"pl+dips", "permissive", false, cfg(0.5, 0.2)}};
    auto jobs = detail::quadrant_jobs(spec, methods);
    auto pjobs = detail::percentile_jobs(spec);
    jobs.insert(jobs.end(), pjobs.begin(), pjobs.end());
    auto r = detail::finish(spec, jobs);
    r.extras["optimal_percentile"] = detail::optimal_percentiles(r);
    return r;
}

/// tau_conf set to each percentile of the candidates' confidences.
inline RunResult cmd_percentile_sweep(ExperimentSpec spec) {
    spec.kind = ExperimentKind::percentile_sweep;
    spec = spec.resolved();
    auto r = detail::finish(spec, detail::percentile_jobs(spec));
    r.extras["optimal_percentile"] = detail::optimal_percentiles(r);
    return r;
}

/// PL and PL+DIPS on nested labeled subsets of size fraction * |D_lab|;
/// reports deltas against vanilla PL at fraction 1 and the crossover fraction.
inline RunResult cmd_data_efficiency(ExperimentSpec spec) {
    spec.kind = ExperimentKind::data_efficiency;
    spec = spec.resolved();
    if (std::find(spec.fractions.begin(), spec.fractions.end(), 1.0) == spec.fractions.end())
        spec.fractions.push_back(1.0);
    const std::vector<MethodSpec> methods{noise_methods()[1], noise_methods()[2]};
    std::vector<Job> jobs;
    for (double p : spec.p_corrupt)
        for (double f : spec.fractions)
            for (const auto& m : methods)
                for (int s = 0; s < spec.seeds; ++s)
                    jobs.push_back([&spec, m, p, f, s] {
                        Split split = make_quadrant_split(data_seed(spec, s), p, spec.n_lab, spec.n_unlab, spec.n_test,
                                                          spec.corrupt_unlabeled);
                        const auto keep = nested_subsample(*split.labeled.labels, split.labeled.class_count, f,
                                                           derive_seed(data_seed(spec, s), "subsample"));
                        split.labeled = split.labeled.subset(keep);
                        auto out = run_method(split, spec, m, detail::base_row(spec, "fraction", f, s));
                        out.variant = "p_corrupt=" + detail::fmt(p, "%.10g");
                        return out;
                    });
    auto r = detail::finish(spec, jobs);
    auto per_noise = nlohmann::ordered_json::array();
    for (double p : spec.p_corrupt) {
        const std::string v = "p_corrupt=" + detail::fmt(p, "%.10g");
        const auto* ref = r.find("pl", v, 1.0);
        nlohmann::ordered_json entry;
        entry["p_corrupt"] = p;
        entry["reference_accuracy"] = ref ? ref->mean : 0.0;
        auto deltas = nlohmann::ordered_json::array();
        nlohmann::ordered_json crossover = nlohmann::ordered_json::object();
        for (const auto& m : methods) {
            std::optional<double> first;
            for (double f : spec.fractions) {
                const auto* a = r.find(m.name, v, f);
                if (!a || !ref) continue;
                deltas.push_back({{"method", m.name}, {"fraction", f}, {"delta", a->mean - ref->mean}});
                if (!first && a->mean >= ref->mean) first = f;
            }
            crossover[m.name] = first ? nlohmann::ordered_json(*first) : nlohmann::ordered_json(nullptr);
        }
        entry["deltas"] = deltas;
        entry["crossover_fraction"] = crossover;
        per_noise.push_back(entry);
    }
    r.extras["data_efficiency"] = per_noise;
    return r;
}

/// supervised / PL / PL+DIPS on clean two moons.
inline RunResult cmd_two_moons(ExperimentSpec spec) {
    spec.kind = ExperimentKind::two_moons;
    spec = spec.resolved();
    const auto all = noise_methods();
    const std::vector<MethodSpec> methods{all[0], all[1], all[2]};
    std::vector<Job> jobs;
    for (const auto& m : methods)
        for (int s = 0; s < spec.seeds; ++s)
            jobs.push_back([&spec, m, s] {
                const Split split = generate_two_moons(spec.moons_per_class, spec.moons_unlab, spec.n_test,
                                                       spec.moons_std, data_seed(spec, s));
                return run_method(split, spec, m, detail::base_row(spec, "std", spec.moons_std, s));
            });
    auto r = detail::finish(spec, jobs);
    r.extras["dips_minus_pl"] = detail::gap(r, "pl+dips", "pl", spec.moons_std);
    r.extras["pl_minus_supervised"] = detail::gap(r, "pl", "supervised", spec.moons_std);
    return r;
}

/// Growing vs rebuilt pseudo-label sets, each with
/// and without DIPS, against the supervised baseline.
inline RunResult cmd_version_compare(ExperimentSpec spec) {
    spec.kind = ExperimentKind::version_compare;
    spec = spec.resolved();
    const auto all = noise_methods();
    std::vector<MethodSpec> methods{all[0]};
    for (auto v : {PipelineVersion::grow, PipelineVersion::rebuild})
        for (const auto& base : {all[1], all[2]}) {
            MethodSpec m = base;
            m.variant = to_string(v);
            m.configure = [base, v](PipelineConfig& c) {
                base.configure(c);
                c.version = v;
            };
            methods.push_back(m);
        }
    auto r = detail::finish(spec, detail::quadrant_jobs(spec, methods));
    auto gaps = nlohmann::ordered_json::array();
    for (double p : spec.p_corrupt) {
        const auto* sup = r.find("supervised", "-", p);
        nlohmann::ordered_json e;
        e["p_corrupt"] = p;
        for (const char* v : {"grow", "rebuild"}) {
            const auto* pl = r.find("pl", v, p);
            const auto* dp = r.find("pl+dips", v, p);
            e[std::string(v) + "_pl_minus_supervised"] = (pl && sup) ? pl->mean - sup->mean : 0.0;
            e[std::string(v) + "_dips_minus_pl"] = (pl && dp) ? dp->mean - pl->mean : 0.0;
        }
        gaps.push_back(e);
    }
    r.extras["versions"] = gaps;
    return r;
}

/// Real-data protocol on a user CSV: a held-out test fraction, then a 0.1:0.9
/// labeled:unlabeled split of the rest; every pseudo-labeler with and without
/// DIPS, plus the supervised baseline.
inline RunResult cmd_run_csv(ExperimentSpec spec) {
    spec.kind = ExperimentKind::custom_csv;
    spec = spec.resolved();
    const CsvDataset csv = load_csv(spec.csv_path, spec.label_column, spec.has_header);
    if (!csv.labels_were_integers) {
        std::filesystem::create_directories(spec.out_dir);
        write_label_dictionary(spec.out_dir / "label_dictionary.json", csv.label_dictionary);
    }
    const double keep = 1.0 - spec.csv_test_fraction;
    const double lab = keep * spec.csv_lab_share;
    const double unlab = keep - lab;

    std::vector<MethodSpec> methods{{"supervised", "-", true, {}}};
    for (auto k : spec.csv_plabelers)
        for (bool with : {false, true})
            methods.push_back({to_string(k), with ? "dips" : "vanilla", false, [k, with](PipelineConfig& c) {
                                   c.plabeler.kind = k;
                                   c.selector.kind = SelectorKind::dips;
                                   c.dips_at_init = c.dips_at_iters = with;
                               }});
    std::vector<Job> jobs;
    for (const auto& m : methods)
        for (int s = 0; s < spec.seeds; ++s)
            jobs.push_back([&spec, &csv, m, s, lab, unlab] {
                const Split split = split_lab_unlab_test(csv.dataset, lab, unlab, data_seed(spec, s));
                return run_method(split, spec, m, detail::base_row(spec, "lab_fraction", lab, s));
            });
    auto r = detail::finish(spec, jobs);

    // variance of accuracy (in percentage points squared) across seeds
    auto var_of = [&](const std::string& method, const std::string& variant) {
        auto acc = r.accuracies(method, variant, lab);
        for (auto& a : acc) a *= 100.0;
        return stats::variance(acc);
    };
    double v_vanilla = 0.0, v_dips = 0.0;
    auto per = nlohmann::ordered_json::array();
    for (auto k : spec.csv_plabelers) {
        const double a = var_of(to_string(k), "vanilla"), b = var_of(to_string(k), "dips");
        v_vanilla += a;
        v_dips += b;
        per.push_back({{"method", to_string(k)}, {"variance_vanilla", a}, {"variance_dips", b}});
    }
    const auto m = static_cast<double>(spec.csv_plabelers.size());
    r.extras["variance"] = {{"per_method", per},
                            {"mean_variance_vanilla", m > 0 ? v_vanilla / m : 0.0},
                            {"mean_variance_dips", m > 0 ? v_dips / m : 0.0}};
    r.extras["class_count"] = csv.dataset.class_count;
    r.extras["samples"] = csv.dataset.size();
    return r;
}

inline RunResult run_experiment(const ExperimentSpec& spec) {
    switch (spec.kind) {
        case ExperimentKind::noise_sweep: return cmd_noise_sweep(spec);
        case ExperimentKind::ablation: return cmd_ablation(spec);
        case ExperimentKind::threshold_sweep: return cmd_threshold_sweep(spec);
        case ExperimentKind::percentile_sweep: return cmd_percentile_sweep(spec);
        case ExperimentKind::data_efficiency: return cmd_data_efficiency(spec);
        case ExperimentKind::version_compare: return cmd_version_compare(spec);
        case ExperimentKind::two_moons: return cmd_two_moons(spec);
        case ExperimentKind::custom_csv: return cmd_run_csv(spec);
    }
    throw ArgumentError("unknown experiment kind");
}

}  // namespace dips

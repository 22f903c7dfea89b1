// dips: experiment harness for pseudo-labeling with DIPS sample selection.

#include <cctype>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dips/experiments.hpp"

namespace {

struct Options {
    dips::ExperimentSpec spec;
    std::string plabeler = "greedy";
    std::string selector = "dips";
    std::string backbone = "gbdt";
    std::string version = "grow";
    std::string tau_al_mode = "adaptive";
    std::optional<double> tau_al;
    bool tau_al_offset = false;
    std::string tau_al_reference = "candidates";
    std::optional<double> tau_conf_percentile;
    bool no_dips_init = false;
    bool no_dips_iters = false;
    bool no_class_fallback = false;
    bool no_smoothing = false;
    std::string label_column = "label";
    bool no_header = false;
    std::vector<std::string> csv_plabelers;
    bool log = false;
};

std::string env_name(const std::string& flag) {
    std::string out = "DIPS_";
    for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

void add_options(CLI::App& app, Options& o) {
    auto& s = o.spec;
    auto& p = s.pipeline;
    auto opt = [&](const std::string& name, auto& target, const std::string& help) {
        return app.add_option("--" + name, target, help)->envname(env_name(name))->capture_default_str();
    };
    auto flag = [&](const std::string& name, bool& target, const std::string& help) {
        return app.add_flag("--" + name, target, help)->envname(env_name(name));
    };

    opt("seed", s.base_seed, "base seed")->group("Run");
    opt("seeds", s.seeds, "number of paired seeds (0: experiment default)")->group("Run");
    opt("out-dir", s.out_dir, "output directory")->group("Run");
    opt("jobs", s.jobs, "worker threads")->check(CLI::PositiveNumber)->group("Run");
    flag("histories", s.write_histories, "also write per-run iteration histories")->group("Run");
    flag("log", o.log, "structured event log on standard error")->group("Run");

    opt("p-corrupt", s.p_corrupt, "label-noise proportions")->delimiter(',')->group("Sweep");
    opt("fractions", s.fractions, "labeled-set fractions")->delimiter(',')->group("Sweep");
    opt("percentiles", s.percentiles, "confidence percentiles")->delimiter(',')->group("Sweep");

    opt("n-lab", s.n_lab, "labeled samples")->group("Data");
    opt("n-unlab", s.n_unlab, "unlabeled samples")->group("Data");
    opt("n-test", s.n_test, "test samples")->group("Data");
    flag("corrupt-unlabeled", s.corrupt_unlabeled, "also corrupt the hidden unlabeled labels")->group("Data");
    opt("moons-per-class", s.moons_per_class, "two moons: labeled samples per class")->group("Data");
    opt("moons-unlab", s.moons_unlab, "two moons: unlabeled samples")->group("Data");
    opt("moons-std", s.moons_std, "two moons: noise standard deviation")->group("Data");

    opt("T", p.T, "pseudo-labeling iterations")->group("Pipeline");
    opt("version", o.version, "grow | rebuild")->group("Pipeline");
    flag("no-dips-init", o.no_dips_init, "skip selection at initialization")->group("Pipeline");
    flag("no-dips-iters", o.no_dips_iters, "skip selection during iterations")->group("Pipeline");
    opt("skip-first", p.skip_first, "checkpoints ignored at the start of each window")->group("Pipeline");

    opt("plabeler", o.plabeler, "greedy | ups | flexmatch | sla_lite")->group("Pseudo-labeler");
    opt("tau-p", p.plabeler.tau_p, "positive confidence threshold")->group("Pseudo-labeler");
    opt("tau-n", p.plabeler.tau_n, "negative confidence threshold")->group("Pseudo-labeler");
    opt("kappa-p", p.plabeler.kappa_p, "UPS positive uncertainty threshold")->group("Pseudo-labeler");
    opt("kappa-n", p.plabeler.kappa_n, "UPS negative uncertainty threshold")->group("Pseudo-labeler");
    opt("ensemble-size", p.plabeler.ensemble_size, "UPS ensemble members")->group("Pseudo-labeler");
    opt("flex-base-tau", p.plabeler.flex_base_tau, "FlexMatch base threshold")->group("Pseudo-labeler");
    opt("sinkhorn-epsilon", p.plabeler.sinkhorn_epsilon, "entropic regularization")->group("Pseudo-labeler");
    opt("sinkhorn-iters", p.plabeler.sinkhorn_iters, "Sinkhorn iteration cap")->group("Pseudo-labeler");

    opt("selector", o.selector, "dips | identity | small_loss | fluctuation")->group("Selector");
    opt("tau-conf", p.selector.tau_conf, "confidence threshold")->group("Selector");
    app.add_option("--tau-conf-percentile", o.tau_conf_percentile, "replace tau-conf by this candidate quantile")
        ->envname(env_name("tau-conf-percentile"))
        ->group("Selector");
    opt("tau-al-mode", o.tau_al_mode, "adaptive | fixed")->group("Selector");
    app.add_option("--tau-al", o.tau_al, "fixed threshold, or range factor when adaptive (default 0.75)")
        ->envname(env_name("tau-al"))
        ->group("Selector");
    flag("tau-al-offset", o.tau_al_offset, "adaptive threshold measured from the minimum")->group("Selector");
    opt("tau-al-reference", o.tau_al_reference, "candidates | training_set")->group("Selector");
    flag("no-class-fallback", o.no_class_fallback, "disable the per-class confidence fallback")->group("Selector");
    opt("keep-fraction", p.selector.keep_fraction, "small-loss kept fraction")->group("Selector");
    opt("fluctuation-percentile", p.selector.fluctuation_percentile, "fluctuation rejection percentile")
        ->group("Selector");
    flag("no-smoothing", o.no_smoothing, "raw fluctuation counts")->group("Selector");

    opt("backbone", o.backbone, "gbdt | linear | mlp")->group("Backbone");
    opt("rounds", p.backbone.rounds_or_epochs, "boosting rounds or epochs")->group("Backbone");
    opt("learning-rate", p.backbone.learning_rate, "shrinkage or step size")->group("Backbone");
    opt("tree-depth", p.backbone.tree_depth, "maximum tree depth")->group("Backbone");
    opt("l2", p.backbone.l2, "leaf L2 penalty")->group("Backbone");
    opt("min-child-weight", p.backbone.min_child_weight, "minimum hessian per leaf")->group("Backbone");
    opt("hidden-width", p.backbone.hidden_width, "MLP hidden units")->group("Backbone");
    opt("batch-size", p.backbone.batch_size, "SGD minibatch size")->group("Backbone");
    opt("weight-decay", p.backbone.weight_decay, "SGD weight decay")->group("Backbone");
}

void finalize(Options& o) {
    auto& p = o.spec.pipeline;
    p.version = dips::parse_pipeline_version(o.version);
    p.plabeler.kind = dips::parse_plabeler_kind(o.plabeler);
    p.selector.kind = dips::parse_selector_kind(o.selector);
    p.backbone.kind = dips::parse_backbone_kind(o.backbone);
    p.tau_al_reference = dips::parse_aleatoric_reference(o.tau_al_reference);
    p.selector.tau_conf_percentile = o.tau_conf_percentile;
    p.dips_at_init = !o.no_dips_init;
    p.dips_at_iters = !o.no_dips_iters;
    p.selector.class_fallback = !o.no_class_fallback;
    p.selector.smoothing = !o.no_smoothing;
    if (o.tau_al_mode == "adaptive")
        p.selector.tau_al = dips::AleatoricThreshold::adaptive(o.tau_al.value_or(0.75), o.tau_al_offset);
    else if (o.tau_al_mode == "fixed") {
        if (!o.tau_al) throw dips::ArgumentError("--tau-al is required with --tau-al-mode fixed");
        p.selector.tau_al = dips::AleatoricThreshold::fixed(*o.tau_al);
    } else
        throw dips::ArgumentError("unknown tau-al mode: " + o.tau_al_mode);

    auto& s = o.spec;
    bool numeric = !o.label_column.empty();
    for (char c : o.label_column) numeric = numeric && std::isdigit(static_cast<unsigned char>(c));
    if (numeric && o.no_header) s.label_column = static_cast<std::size_t>(std::stoul(o.label_column));
    else s.label_column = o.label_column;
    s.has_header = !o.no_header;
    if (!o.csv_plabelers.empty()) {
        s.csv_plabelers.clear();
        for (const auto& k : o.csv_plabelers) s.csv_plabelers.push_back(dips::parse_plabeler_kind(k));
    }
    dips::EventLog::instance().enable(o.log);
}

void report(const dips::RunResult& r) {
    std::printf("%-16s %-16s %10s %4s %10s %10s\n", "method", "variant", "value", "n", "mean", "se");
    for (const auto& a : r.aggregates)
        std::printf("%-16s %-16s %10.4g %4zu %10.4f %10.4f\n", a.method.c_str(), a.variant.c_str(), a.value, a.n,
                    a.mean, a.standard_error);
    std::printf("wrote %s\n", r.spec.out_dir.string().c_str());
}

int fail(const char* kind, const std::string& message, int code) {
    nlohmann::json err = {{"error", kind}, {"message", message}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pseudo-labeling experiments with DIPS sample selection"};
    app.set_config("--config", "", "key = value configuration file using the flag names");
    app.require_subcommand(1);
    Options o;
    add_options(app, o);

    struct Command {
        const char* name;
        const char* help;
        dips::ExperimentKind kind;
    };
    const std::vector<Command> commands{
        {"noise_sweep", "supervised, PL and selectors across label-noise levels", dips::ExperimentKind::noise_sweep},
        {"ablation", "DIPS at init and/or iterations (A1, A2, A3)", dips::ExperimentKind::ablation},
        {"threshold_sweep", "fixed threshold configs and the percentile grid", dips::ExperimentKind::threshold_sweep},
        {"percentile_sweep", "confidence-percentile grid per noise level", dips::ExperimentKind::percentile_sweep},
        {"data_efficiency", "nested labeled subsets", dips::ExperimentKind::data_efficiency},
        {"version_compare", "growing vs rebuilt pseudo-label sets", dips::ExperimentKind::version_compare},
        {"two_moons", "clean-label two moons", dips::ExperimentKind::two_moons},
        {"run_csv", "every pseudo-labeler with and without DIPS on a CSV", dips::ExperimentKind::custom_csv},
    };
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->fallthrough();
        sub->callback([&o, kind = c.kind] { o.spec.kind = kind; });
        if (c.kind == dips::ExperimentKind::custom_csv) {
            sub->add_option("path", o.spec.csv_path, "CSV file")->required()->check(CLI::ExistingFile);
            sub->add_option("--label-column", o.label_column, "label column name (or index with --no-header)")
                ->envname(env_name("label-column"))
                ->capture_default_str();
            sub->add_flag("--no-header", o.no_header, "the first row holds data")->envname(env_name("no-header"));
            sub->add_option("--test-fraction", o.spec.csv_test_fraction, "held-out test fraction")
                ->envname(env_name("test-fraction"))
                ->capture_default_str();
            sub->add_option("--lab-share", o.spec.csv_lab_share, "labeled share of the remaining samples")
                ->envname(env_name("lab-share"))
                ->capture_default_str();
            sub->add_option("--plabelers", o.csv_plabelers, "pseudo-labelers to compare")
                ->delimiter(',')
                ->envname(env_name("plabelers"));
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage_error", e.what(), 2);
    }

    try {
        finalize(o);
        const auto result = dips::run_experiment(o.spec);
        dips::write_result(result);
        report(result);
    } catch (const dips::Error& e) {
        return fail(e.kind(), e.what(), 1);
    } catch (const std::exception& e) {
        return fail("error", e.what(), 1);
    }
    return 0;
}

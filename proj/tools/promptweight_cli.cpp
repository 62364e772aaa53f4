// promptweight: command-line front end.
//
//   promptweight optimize (--data DIR | --synthetic ...) [--mode dataset|single-sample]
//   promptweight prune    (--data DIR | --synthetic ...) [--cycles 4] [--prune-frac 0.15]
//   promptweight suite    (--data DIR | --synthetic ...) [--format text|json]
//   promptweight synth    --out DIR [synthetic flags]
//
// Exit codes: 0 success, 1 invalid flags, 2 data error, 3 no convergence (--strict).

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>

#include <promptweight/promptweight.hpp>

namespace pw = promptweight;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitData = 2;
constexpr int kExitNotConverged = 3;

struct SynthOptions {
    std::uint64_t seed = 42;
    std::size_t samples = 200;
    std::size_t templates = 5;
    std::size_t classes = 10;
    std::size_t dim = 64;
    std::size_t clean = 3;
    double sigma = 0.1;
    double audio_noise = 2.0;

    pw::SyntheticConfig config() const {
        pw::SyntheticConfig cfg;
        cfg.seed = seed;
        cfg.num_samples = samples;
        cfg.num_templates = templates;
        cfg.num_classes = classes;
        cfg.dim = dim;
        cfg.clean_template_count = clean;
        cfg.noise_sigma = sigma;
        cfg.audio_noise = audio_noise;
        return cfg;
    }
};

struct Options {
    std::string data;
    bool synthetic = false;
    SynthOptions synth;

    std::string mode = "dataset";
    double tau = pw::kDefaultTau;
    std::optional<double> lambda_zs;
    double lambda_zs_single = 100.0;
    double lambda_zs_dataset = 0.1;
    double lambda_beta = 0.01;
    double tol = 1e-6;
    int max_iters = 100;
    unsigned threads = 0;
    bool strict = false;

    int cycles = 4;
    double prune_frac = 0.15;

    std::string out;
    std::string format; ///< empty: json, or text for suite
    bool parallel_methods = false;
};

void add_synth_flags(CLI::App& app, SynthOptions& s) {
    app.add_option("--seed", s.seed, "PRNG seed for synthetic data")->capture_default_str();
    app.add_option("--samples", s.samples, "Synthetic sample count")->capture_default_str();
    app.add_option("--templates", s.templates, "Synthetic template count")->capture_default_str();
    app.add_option("--classes", s.classes, "Synthetic class count")->capture_default_str();
    app.add_option("--dim", s.dim, "Synthetic embedding dimension")->capture_default_str();
    app.add_option("--clean", s.clean, "Number of faithful templates")->capture_default_str();
    app.add_option("--sigma", s.sigma, "Per-template perturbation scale")->capture_default_str();
    app.add_option("--audio-noise", s.audio_noise, "Audio perturbation scale")->capture_default_str();
}

void add_source_flags(CLI::App& app, Options& o) {
    auto* data = app.add_option("--data", o.data, "Dataset bundle directory or manifest path");
    auto* synthetic = app.add_flag("--synthetic", o.synthetic, "Generate a synthetic dataset instead");
    data->excludes(synthetic);
    synthetic->excludes(data);
    add_synth_flags(app, o.synth);
}

void add_optimizer_flags(CLI::App& app, Options& o) {
    app.add_option("--tau", o.tau, "Softmax temperature")->capture_default_str();
    app.add_option("--lambda-beta", o.lambda_beta, "Weight-entropy regularization (> 0)")->capture_default_str();
    app.add_option("--tol", o.tol, "L1 convergence tolerance on beta")->capture_default_str();
    app.add_option("--max-iters", o.max_iters, "Iteration cap")->capture_default_str();
    app.add_option("--threads", o.threads, "Worker threads (0 = all cores, 1 = deterministic)")->capture_default_str();
}

void add_output_flags(CLI::App& app, Options& o, const std::string& default_format) {
    app.add_option("--out", o.out, "Output file (default: stdout)");
    app.add_option("--format", o.format, "Output format [default: " + default_format + "]")
        ->check(CLI::IsMember({"json", "text"}));
}

pw::OptimizerConfig optimizer_config(const Options& o, pw::OptimizerMode mode, double lambda_zs) {
    pw::OptimizerConfig cfg;
    cfg.mode = mode;
    cfg.lambda_zs = lambda_zs;
    cfg.lambda_beta = o.lambda_beta;
    cfg.tau = o.tau;
    cfg.tol = o.tol;
    cfg.max_iters = o.max_iters;
    cfg.parallelism = pw::Parallelism{o.threads};
    pw::validate(cfg);
    return cfg;
}

void require_source(const Options& o) {
    if (o.data.empty() == !o.synthetic) {
        throw pw::ValidationError("exactly one of --data or --synthetic is required");
    }
    if (o.synthetic) {
        pw::validate(o.synth.config());
    }
}

struct Loaded {
    pw::EmbeddingDataset dataset;
    std::string path;
};

Loaded load_source(const Options& o) {
    if (o.synthetic) {
        return {pw::generate_synthetic(o.synth.config()), "synthetic:seed=" + std::to_string(o.synth.seed)};
    }
    pw::LoadStats stats;
    auto ds = pw::load_dataset(o.data, stats);
    if (stats.rows_off_norm > 0) {
        std::cerr << "warning: " << stats.rows_off_norm << " embedding rows had norm off by more than 1e-3 "
                  << "and were renormalized\n";
    }
    return {std::move(ds), o.data};
}

void emit(const Options& o, const std::string& text) {
    if (o.out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(o.out, std::ios::trunc);
    if (!out) {
        throw pw::DataError("cannot write output file " + o.out);
    }
    out << text;
}

nlohmann::json dataset_json(const Loaded& loaded) {
    return {{"path", loaded.path}, {"dims", pw::to_json(loaded.dataset.dims)}};
}

void add_accuracy(nlohmann::json& j, const pw::EmbeddingDataset& ds, const pw::ProbMatrix& probs) {
    if (ds.labels) {
        j["accuracy"] = pw::accuracy(pw::argmax_rows(probs), *ds.labels);
    }
    j["mean_entropy"] = pw::mean_entropy(probs);
}

std::string render(const nlohmann::json& j, const std::string& format) {
    if (format == "json") {
        return j.dump(2) + "\n";
    }
    std::ostringstream out;
    for (const auto& [key, value] : j.items()) {
        if (key == "objective_trace" || key == "betas" || key == "config_echo") {
            continue;
        }
        out << key << ": " << value.dump() << "\n";
    }
    return out.str();
}

int cmd_optimize(const Options& o) {
    require_source(o);
    if (o.mode != "dataset" && o.mode != "single-sample") {
        throw pw::ValidationError("--mode must be 'dataset' or 'single-sample'");
    }
    const bool single = o.mode == "single-sample";
    const auto cfg = optimizer_config(o, single ? pw::OptimizerMode::single_sample : pw::OptimizerMode::dataset,
                                      o.lambda_zs.value_or(single ? 100.0 : 0.1));
    const Loaded loaded = load_source(o);
    const auto& ds = loaded.dataset;
    const auto logits = pw::compute_logit_tensor(ds);
    const auto p_hat = pw::zero_shot_predictions(logits, ds.zero_shot_template_index, cfg.tau);

    nlohmann::json j = {{"mode", pw::to_string(cfg.mode)}, {"dataset", dataset_json(loaded)}};
    bool converged = false;
    if (single) {
        const auto res = pw::optimize_per_sample(logits, p_hat, cfg);
        converged = res.converged_count == logits.samples();
        nlohmann::json betas = nlohmann::json::array();
        for (const auto& b : res.betas) {
            betas.push_back(b.beta);
        }
        j["converged"] = converged;
        j["converged_count"] = res.converged_count;
        j["iterations"] = res.iterations;
        j["betas"] = std::move(betas);
        add_accuracy(j, ds, res.predictions);
    } else {
        const auto res = pw::optimize(logits, p_hat, cfg);
        converged = res.converged;
        j["converged"] = res.converged;
        j["iterations_used"] = res.iterations_used;
        j["beta"] = res.beta.beta;
        j["objective_trace"] = res.objective_trace;
        add_accuracy(j, ds, res.predictions);
    }
    j["config_echo"] = pw::to_json(cfg);
    emit(o, render(j, o.format));
    return o.strict && !converged ? kExitNotConverged : 0;
}

int cmd_prune(const Options& o) {
    require_source(o);
    const auto cfg = optimizer_config(o, pw::OptimizerMode::dataset, o.lambda_zs.value_or(0.1));
    const pw::PruneSchedule schedule{o.cycles, o.prune_frac};
    pw::validate(schedule);
    const Loaded loaded = load_source(o);
    const auto& ds = loaded.dataset;
    (void)pw::survivor_counts(ds.dims.templates, schedule);

    const auto logits = pw::compute_logit_tensor(ds);
    const auto p_hat = pw::zero_shot_predictions(logits, ds.zero_shot_template_index, cfg.tau);
    const auto res = pw::prune_optimize(logits, p_hat, cfg, schedule);

    nlohmann::json j = {{"mode", "dataset-pruned"}, {"dataset", dataset_json(loaded)}};
    j["converged"] = res.result.converged;
    j["iterations_used"] = res.result.iterations_used;
    j["total_iterations"] = res.total_iterations;
    j["beta"] = res.result.beta.beta;
    j["active_mask"] = res.mask.flags();
    j["active_counts"] = res.active_counts;
    j["survivors"] = res.mask.active_count();
    j["objective_trace"] = res.result.objective_trace;
    add_accuracy(j, ds, res.result.predictions);
    j["config_echo"] = pw::to_json(cfg);
    j["config_echo"]["prune"] = {{"cycles", schedule.cycles}, {"fraction_per_cycle", schedule.fraction_per_cycle}};
    emit(o, render(j, o.format));
    return o.strict && !res.result.converged ? kExitNotConverged : 0;
}

int cmd_suite(const Options& o) {
    require_source(o);
    pw::SuiteConfig cfg;
    cfg.tau = o.tau;
    cfg.single_sample = optimizer_config(o, pw::OptimizerMode::single_sample, o.lambda_zs_single);
    cfg.dataset = optimizer_config(o, pw::OptimizerMode::dataset, o.lambda_zs_dataset);
    cfg.schedule = {o.cycles, o.prune_frac};
    cfg.parallel_methods = o.parallel_methods;
    pw::validate(cfg.schedule);
    const Loaded loaded = load_source(o);
    const auto report = pw::run_suite(loaded.dataset, cfg, loaded.path);
    const std::string json = pw::to_json(report).dump(2) + "\n";
    if (o.format == "json") {
        std::cout << json;
    } else {
        std::cout << pw::format_table(report);
    }
    if (!o.out.empty()) {
        emit(o, json);
    }
    bool all_converged = true;
    for (const auto& m : report.methods) {
        all_converged = all_converged && m.converged.value_or(true);
    }
    return o.strict && !all_converged ? kExitNotConverged : 0;
}

int cmd_synth(const Options& o) {
    if (o.out.empty()) {
        throw pw::ValidationError("synth requires --out DIR");
    }
    const auto cfg = o.synth.config();
    pw::validate(cfg);
    pw::save_dataset(pw::generate_synthetic(cfg), o.out);
    std::cout << "wrote bundle to " << o.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entropy-minimizing prompt-template weighting for zero-shot classification"};
    app.require_subcommand(1);
    Options o;

    auto* optimize = app.add_subcommand("optimize", "Optimize template weights (dataset or per-sample)");
    add_source_flags(*optimize, o);
    add_optimizer_flags(*optimize, o);
    add_output_flags(*optimize, o, "json");
    optimize->add_option("--mode", o.mode, "dataset | single-sample")
        ->check(CLI::IsMember({"dataset", "single-sample"}))
        ->capture_default_str();
    optimize->add_option("--lambda-zs", o.lambda_zs, "Anchor regularization (default 0.1 dataset, 100 single-sample)");
    optimize->add_flag("--strict", o.strict, "Exit 3 if the solver does not converge");

    auto* prune = app.add_subcommand("prune", "Optimize with multi-cycle template pruning");
    add_source_flags(*prune, o);
    add_optimizer_flags(*prune, o);
    add_output_flags(*prune, o, "json");
    prune->add_option("--lambda-zs", o.lambda_zs, "Anchor regularization (default 0.1)");
    prune->add_option("--cycles", o.cycles, "Pruning cycles")->capture_default_str();
    prune->add_option("--prune-frac", o.prune_frac, "Fraction of active templates removed per cycle")
        ->capture_default_str();
    prune->add_flag("--strict", o.strict, "Exit 3 if the final pass does not converge");

    auto* suite = app.add_subcommand("suite", "Compare all methods and baselines");
    add_source_flags(*suite, o);
    add_optimizer_flags(*suite, o);
    add_output_flags(*suite, o, "text");
    suite->add_option("--lambda-zs-single", o.lambda_zs_single, "Anchor regularization, per-sample beta")
        ->capture_default_str();
    suite->add_option("--lambda-zs-dataset", o.lambda_zs_dataset, "Anchor regularization, dataset beta")
        ->capture_default_str();
    suite->add_option("--cycles", o.cycles, "Pruning cycles")->capture_default_str();
    suite->add_option("--prune-frac", o.prune_frac, "Fraction pruned per cycle")->capture_default_str();
    suite->add_flag("--parallel-methods", o.parallel_methods, "Run methods concurrently");
    suite->add_flag("--strict", o.strict, "Exit 3 if any solver does not converge");

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset bundle");
    add_synth_flags(*synth, o.synth);
    synth->add_option("--out", o.out, "Bundle directory to create")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitValidation;
    }

    if (o.format.empty()) {
        o.format = suite->parsed() ? "text" : "json";
    }
    try {
        if (optimize->parsed()) {
            return cmd_optimize(o);
        }
        if (prune->parsed()) {
            return cmd_prune(o);
        }
        if (suite->parsed()) {
            return cmd_suite(o);
        }
        return cmd_synth(o);
    } catch (const pw::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const pw::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}

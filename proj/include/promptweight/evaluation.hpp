#pragma once

// Accuracy, per-template sweeps and the full method comparison suite, with
// JSON and aligned-text serialization of its report.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baselines.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "optimizer.hpp"
#include "prediction.hpp"
#include "pruning.hpp"

namespace promptweight {

/// Fraction of positions where `predictions` equals `labels`.
inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.empty()) {
        throw ValidationError("accuracy of an empty prediction vector is undefined");
    }
    detail::require(predictions.size() == labels.size(), "predictions and labels differ in length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        hits += predictions[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

struct TemplateSweep {
    std::vector<double> accuracies;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double stddev = 0.0; ///< population standard deviation
};

/// Accuracy of each template used alone. The argmax does not depend on tau;
/// it is accepted for symmetry with the other entry points.
inline TemplateSweep per_template_sweep(const LogitTensor& logits, std::span<const int> labels, double tau) {
    detail::require(tau > 0.0, "tau must be > 0");
    detail::require(labels.size() == logits.samples(), "labels must cover every sample");
    TemplateSweep sweep;
    for (std::size_t j = 0; j < logits.templates(); ++j) {
        sweep.accuracies.push_back(accuracy(argmax_rows(logits.template_slice(j)), labels));
    }
    const auto& a = sweep.accuracies;
    sweep.min = *std::min_element(a.begin(), a.end());
    sweep.max = *std::max_element(a.begin(), a.end());
    double sum = 0.0;
    for (double v : a) {
        sum += v;
    }
    sweep.mean = sum / static_cast<double>(a.size());
    double var = 0.0;
    for (double v : a) {
        var += (v - sweep.mean) * (v - sweep.mean);
    }
    sweep.stddev = std::sqrt(var / static_cast<double>(a.size()));
    return sweep;
}

struct MethodReport {
    std::string name;
    std::optional<double> accuracy{}; ///< only when labels are present
    double mean_entropy = 0.0;
    double seconds = 0.0;
    std::optional<std::vector<double>> beta{};
    std::optional<std::vector<bool>> active_mask{};
    std::optional<bool> converged{};
    std::vector<int> predictions{};
};

struct SuiteConfig {
    OptimizerConfig single_sample = OptimizerConfig::single_sample_defaults();
    OptimizerConfig dataset = OptimizerConfig::dataset_defaults();
    PruneSchedule schedule{};
    /// Temperature for the anchor prediction and all baselines.
    double tau = kDefaultTau;
    bool include_single_sample = true;
    /// Run methods concurrently (each with its own state) instead of one by one.
    bool parallel_methods = false;
};

struct SuiteReport {
    std::string dataset_path;
    Dims dims;
    double logit_seconds = 0.0;
    std::vector<MethodReport> methods;
    nlohmann::json config_echo;
};

inline nlohmann::json to_json(const OptimizerConfig& cfg) {
    return {{"lambda_zs", cfg.lambda_zs}, {"lambda_beta", cfg.lambda_beta}, {"tau", cfg.tau},
            {"max_iters", cfg.max_iters}, {"tol", cfg.tol},                 {"mode", to_string(cfg.mode)},
            {"threads", cfg.parallelism.threads}};
}

inline nlohmann::json to_json(const SuiteConfig& cfg) {
    return {{"tau", cfg.tau},
            {"single_sample", to_json(cfg.single_sample)},
            {"dataset", to_json(cfg.dataset)},
            {"prune", {{"cycles", cfg.schedule.cycles}, {"fraction_per_cycle", cfg.schedule.fraction_per_cycle}}},
            {"include_single_sample", cfg.include_single_sample},
            {"parallel_methods", cfg.parallel_methods}};
}

inline nlohmann::json to_json(const Dims& dims) {
    return {{"num_samples", dims.samples},
            {"num_templates", dims.templates},
            {"num_classes", dims.classes},
            {"dim", dims.dim}};
}

inline nlohmann::json to_json(const MethodReport& m) {
    nlohmann::json j = {{"name", m.name}, {"mean_entropy", m.mean_entropy}, {"seconds", m.seconds}};
    if (m.accuracy) {
        j["accuracy"] = *m.accuracy;
    }
    if (m.beta) {
        j["beta"] = *m.beta;
    }
    if (m.active_mask) {
        j["active_mask"] = *m.active_mask;
    }
    if (m.converged) {
        j["converged"] = *m.converged;
    }
    return j;
}

inline nlohmann::json to_json(const SuiteReport& report) {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : report.methods) {
        methods.push_back(to_json(m));
    }
    return {{"dataset", {{"path", report.dataset_path}, {"dims", to_json(report.dims)}}},
            {"methods", methods},
            {"logit_seconds", report.logit_seconds},
            {"config_echo", report.config_echo}};
}

/// Human-readable table, one row per method.
inline std::string format_table(const SuiteReport& report) {
    std::ostringstream out;
    out << "dataset: " << (report.dataset_path.empty() ? "<in-memory>" : report.dataset_path) << "  (N_S="
        << report.dims.samples << ", N_T=" << report.dims.templates << ", N_C=" << report.dims.classes
        << ", d=" << report.dims.dim << ")\n";
    out << std::left << std::setw(28) << "method" << std::right << std::setw(10) << "accuracy" << std::setw(14)
        << "mean_entropy" << std::setw(12) << "seconds" << "\n";
    out << std::string(64, '-') << "\n";
    for (const auto& m : report.methods) {
        out << std::left << std::setw(28) << m.name << std::right << std::fixed;
        if (m.accuracy) {
            out << std::setw(10) << std::setprecision(4) << *m.accuracy;
        } else {
            out << std::setw(10) << "-";
        }
        out << std::setw(14) << std::setprecision(4) << m.mean_entropy << std::setw(12) << std::setprecision(4)
            << m.seconds << "\n";
    }
    return out.str();
}

/// Runs the anchor prediction, the six baselines, per-sample beta, dataset
/// beta and pruned dataset beta. Timings exclude loading and the shared logit
/// tensor (reported separately as logit_seconds).
inline SuiteReport run_suite(const EmbeddingDataset& ds, const SuiteConfig& cfg, std::string dataset_path = {}) {
    validate(ds);
    validate(cfg.single_sample);
    validate(cfg.dataset);
    detail::require(cfg.tau > 0.0, "tau must be > 0");
    (void)survivor_counts(ds.dims.templates, cfg.schedule);
    for (const auto& b : standard_baselines()) {
        if (b.spec.prune_fraction > 0.0) {
            (void)entropy_prune_mask(std::vector<double>(ds.dims.templates, 0.0), b.spec.prune_fraction);
        }
    }

    using clock = std::chrono::steady_clock;
    SuiteReport report;
    report.dataset_path = std::move(dataset_path);
    report.dims = ds.dims;
    report.config_echo = to_json(cfg);

    const auto t0 = clock::now();
    const LogitTensor logits = compute_logit_tensor(ds);
    report.logit_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    const std::size_t j0 = ds.zero_shot_template_index;

    auto finish = [&](MethodReport m, const ProbMatrix& probs) {
        m.mean_entropy = mean_entropy(probs);
        if (ds.labels) {
            m.accuracy = accuracy(m.predictions, *ds.labels);
        }
        return m;
    };

    std::vector<std::function<MethodReport()>> methods;
    methods.emplace_back([&] {
        MethodReport m{.name = "zero_shot"};
        const auto probs = zero_shot_predictions(logits, j0, cfg.tau);
        m.predictions = argmax_rows(logits.template_slice(j0));
        return finish(std::move(m), probs);
    });
    for (const auto& baseline : standard_baselines()) {
        methods.emplace_back([&, baseline] {
            MethodReport m{.name = baseline.name};
            if (baseline.spec.family == BaselineFamily::majority_vote) {
                auto vote = majority_vote(logits, cfg.tau, baseline.spec);
                m.predictions = std::move(vote.classes);
                return finish(std::move(m), vote.shares);
            }
            auto pred = average_embedding_predict(ds, logits, cfg.tau, baseline.spec);
            m.predictions = std::move(pred.classes);
            return finish(std::move(m), pred.probs);
        });
    }
    if (cfg.include_single_sample) {
        methods.emplace_back([&] {
            MethodReport m{.name = "beta_single_sample"};
            const auto p_hat = zero_shot_predictions(logits, j0, cfg.single_sample.tau);
            auto res = optimize_per_sample(logits, p_hat, cfg.single_sample);
            m.converged = res.converged_count == logits.samples();
            m.predictions = argmax_rows(res.predictions);
            return finish(std::move(m), res.predictions);
        });
    }
    methods.emplace_back([&] {
        MethodReport m{.name = "beta_dataset"};
        const auto p_hat = zero_shot_predictions(logits, j0, cfg.dataset.tau);
        auto res = optimize(logits, p_hat, cfg.dataset);
        m.converged = res.converged;
        m.beta = res.beta.beta;
        m.predictions = argmax_rows(res.predictions);
        return finish(std::move(m), res.predictions);
    });
    methods.emplace_back([&] {
        MethodReport m{.name = "beta_dataset_pruned"};
        const auto p_hat = zero_shot_predictions(logits, j0, cfg.dataset.tau);
        auto res = prune_optimize(logits, p_hat, cfg.dataset, cfg.schedule);
        m.converged = res.result.converged;
        m.beta = res.result.beta.beta;
        m.active_mask = res.mask.flags();
        m.predictions = argmax_rows(res.result.predictions);
        return finish(std::move(m), res.result.predictions);
    });

    auto timed = [](const std::function<MethodReport()>& fn) {
        const auto start = clock::now();
        MethodReport m = fn();
        m.seconds = std::chrono::duration<double>(clock::now() - start).count();
        return m;
    };
    if (cfg.parallel_methods) {
        std::vector<std::future<MethodReport>> futures;
        for (const auto& fn : methods) {
            futures.push_back(std::async(std::launch::async, [&timed, &fn] { return timed(fn); }));
        }
        for (auto& f : futures) {
            report.methods.push_back(f.get());
        }
    } else {
        for (const auto& fn : methods) {
            report.methods.push_back(timed(fn));
        }
    }
    return report;
}

} // namespace promptweight

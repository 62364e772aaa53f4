#pragma once

// Entropy-regularized template weighting.
//
// Objective over beta on the simplex:
//
//   L(beta) = 1/N_S sum_i [ H(p_i) + lambda_zs H(p_i, p_hat_i) ] - lambda_beta H(beta)
//
// where p_i is the temperature softmax of the beta-weighted logits and p_hat
// the frozen anchor prediction. The solver iterates the closed-form map
//
//   beta_j <- softmax_j( R_j / (N_S tau lambda_beta) )
//
// with R_j the per-template contribution sum below. R_j equals
// -N_S tau dL_data/dbeta_j, so fixed points of the map are exactly the
// stationary points of L on the simplex interior.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "prediction.hpp"

namespace promptweight {

enum class OptimizerMode { single_sample, dataset };

inline const char* to_string(OptimizerMode mode) {
    return mode == OptimizerMode::dataset ? "dataset" : "single-sample";
}

struct OptimizerConfig {
    double lambda_zs = 0.1;
    double lambda_beta = 0.01;
    double tau = kDefaultTau;
    int max_iters = 100;
    /// Stop once the L1 change in beta between iterations falls below this.
    double tol = 1e-6;
    OptimizerMode mode = OptimizerMode::dataset;
    Parallelism parallelism{};

    /// Defaults used for a shared beta over a whole dataset.
    static OptimizerConfig dataset_defaults() { return {}; }

    /// Defaults used when every sample gets its own beta (N_S = 1): the anchor
    /// regularization is much stronger.
    static OptimizerConfig single_sample_defaults() {
        OptimizerConfig cfg;
        cfg.lambda_zs = 100.0;
        cfg.mode = OptimizerMode::single_sample;
        return cfg;
    }
};

inline void validate(const OptimizerConfig& cfg) {
    detail::require(cfg.lambda_zs >= 0.0 && std::isfinite(cfg.lambda_zs), "lambda_zs must be >= 0");
    detail::require(cfg.lambda_beta > 0.0 && std::isfinite(cfg.lambda_beta), "lambda_beta must be > 0");
    detail::require(cfg.tau > 0.0 && std::isfinite(cfg.tau), "tau must be > 0");
    detail::require(cfg.max_iters >= 1, "max_iters must be >= 1");
    detail::require(cfg.tol > 0.0 && std::isfinite(cfg.tol), "tol must be > 0");
}

struct OptimizationResult {
    WeightVector beta;
    int iterations_used = 0;
    /// L at beta^0, beta^1, ..., beta^iterations_used.
    std::vector<double> objective_trace;
    bool converged = false;
    ProbMatrix predictions;
};

namespace detail {

inline void check_shapes(const LogitTensor& logits, const ProbMatrix& p_hat) {
    require(logits.samples() >= 1 && logits.templates() >= 1 && logits.classes() >= 1, "empty logit tensor");
    require(p_hat.samples() == logits.samples() && p_hat.classes() == logits.classes(),
            "zero-shot predictions are " + std::to_string(p_hat.samples()) + "x" + std::to_string(p_hat.classes()) +
                ", logits imply " + std::to_string(logits.samples()) + "x" + std::to_string(logits.classes()));
}

inline void check_beta(const LogitTensor& logits, const WeightVector& beta) {
    require(beta.size() == logits.templates(), "weight vector has " + std::to_string(beta.size()) +
                                                   " entries, logits have " + std::to_string(logits.templates()) +
                                                   " templates");
}

/// Everything one pass over the samples yields at a given beta.
struct Evaluation {
    double data_term = 0.0; ///< sum_i [H(p_i) + lambda_zs H(p_i, p_hat_i)]
    std::vector<double> contributions; ///< R_j
    Matrix probs;
};

/// Single sweep computing p(beta), the data part of the objective and R.
/// Per-part partial sums are combined in part order.
inline Evaluation evaluate(const WeightVector& beta, const LogitTensor& logits, const ProbMatrix& p_hat,
                           double lambda_zs, double tau, Parallelism par, bool want_contributions) {
    const std::size_t n_t = logits.templates();
    const std::size_t n_c = logits.classes();
    const std::size_t parts = partition_count(logits.samples(), par);
    std::vector<double> part_data(parts, 0.0);
    std::vector<std::vector<double>> part_r(parts, std::vector<double>(want_contributions ? n_t : 0, 0.0));

    Evaluation ev;
    ev.probs = weighted_logits(logits, beta, par);

    for_each_range(logits.samples(), par, [&](std::size_t part, std::size_t begin, std::size_t end) {
        std::vector<double> log_p(n_c);
        std::vector<double> log_q(n_c);
        std::vector<double> weight(n_c);
        auto& r = part_r[part];
        double data = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            auto p = ev.probs.row(i);
            softmax_row(p, tau);
            const auto q = p_hat.row(i);
            double h = 0.0;
            double cross = 0.0;
            double expected_log_q = 0.0;
            for (std::size_t k = 0; k < n_c; ++k) {
                log_p[k] = std::log(std::max(p[k], kProbEpsilon));
                log_q[k] = std::log(std::max(q[k], kProbEpsilon));
                if (p[k] > kProbEpsilon) {
                    h -= p[k] * std::log(p[k]);
                }
                cross -= p[k] * log_q[k];
                expected_log_q += p[k] * log_q[k];
            }
            data += h + lambda_zs * cross;
            if (!want_contributions) {
                continue;
            }
            for (std::size_t k = 0; k < n_c; ++k) {
                weight[k] = p[k] * (log_p[k] + h) + lambda_zs * p[k] * (log_q[k] - expected_log_q);
            }
            for (std::size_t j = 0; j < n_t; ++j) {
                const auto l = logits.row(i, j);
                double acc = 0.0;
                for (std::size_t k = 0; k < n_c; ++k) {
                    acc += weight[k] * l[k];
                }
                r[j] += acc;
            }
        }
        part_data[part] = data;
    });

    for (std::size_t part = 0; part < parts; ++part) {
        ev.data_term += part_data[part];
        if (want_contributions) {
            if (ev.contributions.empty()) {
                ev.contributions = part_r[part];
            } else {
                for (std::size_t j = 0; j < n_t; ++j) {
                    ev.contributions[j] += part_r[part][j];
                }
            }
        }
    }
    return ev;
}

inline double objective_from(const Evaluation& ev, const WeightVector& beta, std::size_t samples,
                             double lambda_beta) {
    return ev.data_term / static_cast<double>(samples) - lambda_beta * entropy(beta.beta);
}

/// Softmax of scores/lambda_beta restricted to `active`; inactive entries are 0.
inline WeightVector masked_step(std::span<const double> scores, double lambda_beta, const std::vector<bool>& active) {
    WeightVector out{std::vector<double>(scores.size(), 0.0)};
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (active[j]) {
            peak = std::max(peak, scores[j] / lambda_beta);
        }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (active[j]) {
            out.beta[j] = std::exp(scores[j] / lambda_beta - peak);
            sum += out.beta[j];
        }
    }
    for (auto& b : out.beta) {
        b /= sum;
    }
    return out;
}

} // namespace detail

/// L(beta) evaluated directly.
inline double objective(const WeightVector& beta, const LogitTensor& logits, const ProbMatrix& p_hat,
                        const OptimizerConfig& cfg) {
    validate(cfg);
    detail::check_shapes(logits, p_hat);
    detail::check_beta(logits, beta);
    const auto ev = detail::evaluate(beta, logits, p_hat, cfg.lambda_zs, cfg.tau, cfg.parallelism, false);
    return detail::objective_from(ev, beta, logits.samples(), cfg.lambda_beta);
}

/// R_j = sum_i [ sum_k p_ik (ln p_ik + H(p_i)) l_ijk
///             + lambda_zs sum_k p_ik (ln p_hat_ik - E_{p_i}[ln p_hat_i]) l_ijk ]
inline std::vector<double> contributions_R(const WeightVector& beta, const LogitTensor& logits,
                                           const ProbMatrix& p_hat, const OptimizerConfig& cfg) {
    validate(cfg);
    detail::check_shapes(logits, p_hat);
    detail::check_beta(logits, beta);
    return detail::evaluate(beta, logits, p_hat, cfg.lambda_zs, cfg.tau, cfg.parallelism, true).contributions;
}

/// beta_j = exp(R_j / lambda_beta) / sum_l exp(R_l / lambda_beta).
inline WeightVector fixed_point_step(std::span<const double> contributions, double lambda_beta) {
    detail::require(lambda_beta > 0.0, "lambda_beta must be > 0");
    detail::require(!contributions.empty(), "fixed_point_step needs at least one contribution");
    return detail::masked_step(contributions, lambda_beta, std::vector<bool>(contributions.size(), true));
}

/// Converts raw contribution sums into fixed-point scores: R_j / (N_S tau).
inline std::vector<double> stationary_scores(std::span<const double> contributions, std::size_t samples, double tau) {
    std::vector<double> out(contributions.begin(), contributions.end());
    const double scale = 1.0 / (static_cast<double>(samples) * tau);
    for (auto& v : out) {
        v *= scale;
    }
    return out;
}

/// Fixed-point solve restricted to `active` templates, starting from `initial`
/// (which must be supported on `active`). Inactive weights stay exactly 0.
inline OptimizationResult optimize_from(const LogitTensor& logits, const ProbMatrix& p_hat,
                                        const OptimizerConfig& cfg, const std::vector<bool>& active,
                                        WeightVector initial) {
    validate(cfg);
    detail::check_shapes(logits, p_hat);
    detail::check_beta(logits, initial);
    detail::require(active.size() == logits.templates(), "active mask length mismatch");
    detail::require(std::find(active.begin(), active.end(), true) != active.end(), "no active templates");
    if (cfg.mode == OptimizerMode::single_sample) {
        detail::require(logits.samples() == 1, "single-sample mode expects a one-sample logit tensor");
    }

    OptimizationResult result;
    result.beta = std::move(initial);
    auto ev = detail::evaluate(result.beta, logits, p_hat, cfg.lambda_zs, cfg.tau, cfg.parallelism, true);
    result.objective_trace.push_back(detail::objective_from(ev, result.beta, logits.samples(), cfg.lambda_beta));

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        const auto scores = stationary_scores(ev.contributions, logits.samples(), cfg.tau);
        WeightVector next = detail::masked_step(scores, cfg.lambda_beta, active);
        double change = 0.0;
        for (std::size_t j = 0; j < next.size(); ++j) {
            change += std::abs(next.beta[j] - result.beta.beta[j]);
        }
        result.beta = std::move(next);
        result.iterations_used = iter;
        ev = detail::evaluate(result.beta, logits, p_hat, cfg.lambda_zs, cfg.tau, cfg.parallelism, true);
        result.objective_trace.push_back(detail::objective_from(ev, result.beta, logits.samples(), cfg.lambda_beta));
        if (change < cfg.tol) {
            result.converged = true;
            break;
        }
    }
    result.predictions = ProbMatrix{std::move(ev.probs), cfg.tau};
    return result;
}

/// Solves for beta from the uniform start over all templates.
inline OptimizationResult optimize(const LogitTensor& logits, const ProbMatrix& p_hat, const OptimizerConfig& cfg) {
    return optimize_from(logits, p_hat, cfg, std::vector<bool>(logits.templates(), true),
                         WeightVector::uniform(logits.templates()));
}

/// One independent beta per sample.
struct PerSampleResult {
    std::vector<WeightVector> betas;
    std::vector<int> iterations;
    std::size_t converged_count = 0;
    ProbMatrix predictions;
};

/// Runs the single-sample solve for each sample in turn; samples are
/// distributed over `cfg.parallelism` threads, each solve itself runs inline.
inline PerSampleResult optimize_per_sample(const LogitTensor& logits, const ProbMatrix& p_hat,
                                           OptimizerConfig cfg) {
    validate(cfg);
    detail::check_shapes(logits, p_hat);
    const auto par = cfg.parallelism;
    cfg.mode = OptimizerMode::single_sample;
    cfg.parallelism = Parallelism{1};

    PerSampleResult out;
    out.betas.resize(logits.samples());
    out.iterations.resize(logits.samples());
    out.predictions = ProbMatrix{Matrix(logits.samples(), logits.classes()), cfg.tau};
    std::vector<char> converged(logits.samples(), 0);
    for_each_range(logits.samples(), par, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            ProbMatrix anchor{Matrix(1, logits.classes()), p_hat.tau};
            std::copy_n(p_hat.row(i).begin(), logits.classes(), anchor.values.row(0).begin());
            auto res = optimize(logits.sample_slice(i), anchor, cfg);
            std::copy_n(res.predictions.row(0).begin(), logits.classes(), out.predictions.values.row(i).begin());
            out.betas[i] = std::move(res.beta);
            out.iterations[i] = res.iterations_used;
            converged[i] = res.converged ? 1 : 0;
        }
    });
    out.converged_count = static_cast<std::size_t>(std::count(converged.begin(), converged.end(), 1));
    return out;
}

/// Exhaustive grid search over the simplex for N_T in {2, 3}. Returns the grid
/// point with the lowest objective; ties keep the lexicographically smallest beta.
inline WeightVector brute_force_beta(const LogitTensor& logits, const ProbMatrix& p_hat, const OptimizerConfig& cfg,
                                     double grid_step) {
    validate(cfg);
    detail::check_shapes(logits, p_hat);
    const std::size_t n_t = logits.templates();
    if (n_t < 2 || n_t > 3) {
        throw ValidationError("brute_force_beta supports 2 or 3 templates, got " + std::to_string(n_t));
    }
    detail::require(grid_step > 0.0 && grid_step <= 1.0, "grid_step must be in (0, 1]");
    const auto steps = static_cast<long>(std::llround(1.0 / grid_step));
    detail::require(steps >= 1, "grid_step too large");
    const double h = 1.0 / static_cast<double>(steps);

    WeightVector best;
    double best_value = std::numeric_limits<double>::infinity();
    auto consider = [&](WeightVector candidate) {
        const double value = objective(candidate, logits, p_hat, cfg);
        if (value < best_value) {
            best_value = value;
            best = std::move(candidate);
        }
    };
    if (n_t == 2) {
        for (long a = 0; a <= steps; ++a) {
            consider(WeightVector{{a * h, static_cast<double>(steps - a) * h}});
        }
    } else {
        for (long a = 0; a <= steps; ++a) {
            for (long b = 0; a + b <= steps; ++b) {
                consider(WeightVector{{a * h, b * h, static_cast<double>(steps - a - b) * h}});
            }
        }
    }
    return best;
}

} // namespace promptweight

// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <promptweight/promptweight.hpp>

#include "test_support.hpp"

using namespace promptweight;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
    std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double l1(const WeightVector& a, const WeightVector& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        d += std::abs(a[j] - b[j]);
    }
    return d;
}

void stationarity() {
    const auto t0 = clock_type::now();
    Xoshiro256 rng(1001);
    const double lambdas[3] = {0.0, 0.1, 100.0};
    int ok = 0;
    int checked = 0;
    double worst_ratio = 0.0;
    for (int n = 0; n < 20; ++n) {
        const auto inst = pwtest::contractive_instance(rng, lambdas[n % 3]);
        const auto res = optimize(inst.logits, inst.p_hat, inst.cfg);
        const double min_beta = *std::min_element(res.beta.beta.begin(), res.beta.beta.end());
        if (!res.converged || !(min_beta > 1e-6)) {
            std::printf("       instance %d: converged=%d min_beta=%.3g\n", n, res.converged, min_beta);
            ++checked;
            continue;
        }
        const auto g = pwtest::fd_gradient(
            [&](const std::vector<double>& x) {
                return pwtest::oracle_objective(x, inst.logits, inst.p_hat, inst.cfg.lambda_zs, inst.cfg.lambda_beta,
                                                inst.cfg.tau);
            },
            res.beta.beta, 1e-6);
        const auto [resid, bound] = pwtest::kkt_residual(g);
        worst_ratio = std::max(worst_ratio, resid / bound);
        ok += resid < bound ? 1 : 0;
        ++checked;
    }
    const double secs = seconds_since(t0);
    report(1, "stationarity (KKT, h=1e-6)", ok == 20 && checked == 20 && secs < 10.0,
           fmt("%.0f/20 instances within 1e-3*(1+|g|inf), worst resid/bound %.3g, %.2f s (limit 10 s)", ok,
               worst_ratio, secs));
}

void grid_oracle() {
    const auto t0 = clock_type::now();
    Xoshiro256 rng(1002);
    const double lambdas[3] = {0.0, 0.1, 100.0};
    int ok = 0;
    double worst = 0.0;
    for (int n = 0; n < 10; ++n) {
        const auto inst = pwtest::contractive_instance(rng, lambdas[n % 3], 16, 2, 8);
        const auto res = optimize(inst.logits, inst.p_hat, inst.cfg);
        const auto grid = brute_force_beta(inst.logits, inst.p_hat, inst.cfg, 1e-3);
        const double d = l1(res.beta, grid);
        worst = std::max(worst, d);
        ok += d < 5e-3 ? 1 : 0;
    }
    const double secs = seconds_since(t0);
    report(2, "grid-oracle equivalence (N_T=2, step 1e-3)", ok == 10 && secs < 5.0,
           fmt("%.0f/10 within L1 5e-3, worst %.3g, %.2f s (limit 5 s)", ok, worst, secs));
}

void simplex_invariants() {
    Xoshiro256 rng(1003);
    int ok = 0;
    double worst_sum = 0.0;
    double worst_shift = 0.0;
    for (int n = 0; n < 1000; ++n) {
        std::vector<double> r(1 + rng() % 12);
        for (auto& v : r) {
            v = 40.0 * (rng.uniform() - 0.5);
        }
        const double lambda = std::pow(10.0, -3.0 + 6.0 * rng.uniform());
        const auto b = fixed_point_step(r, lambda);
        double sum = 0.0;
        bool nonneg = true;
        for (double v : b.beta) {
            nonneg = nonneg && v >= 0.0;
            sum += v;
        }
        const double c = 200.0 * (rng.uniform() - 0.5);
        auto shifted = r;
        for (auto& v : shifted) {
            v += c;
        }
        const auto bs = fixed_point_step(shifted, lambda);
        double shift = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            shift = std::max(shift, std::abs(b[j] - bs[j]));
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        worst_shift = std::max(worst_shift, shift);
        ok += nonneg && std::abs(sum - 1.0) <= 1e-9 && shift <= 1e-12 ? 1 : 0;
    }
    report(3, "fixed-point step simplex invariants", ok == 1000,
           fmt("%.0f/1000 ok, worst |sum-1| %.3g (tol 1e-9), worst shift delta %.3g (tol 1e-12)", ok, worst_sum,
               worst_shift));
}

void limits() {
    Xoshiro256 rng(1004);
    double worst = 0.0;
    for (int n = 0; n < 20; ++n) {
        const auto l = pwtest::random_logits(rng, 1 + rng() % 16, 2 + rng() % 7, 2 + rng() % 7, 1.0);
        auto cfg = OptimizerConfig::dataset_defaults();
        cfg.lambda_beta = 1e6;
        const auto res = optimize(l, zero_shot_predictions(l, 0, cfg.tau), cfg);
        for (double v : res.beta.beta) {
            worst = std::max(worst, std::abs(v - 1.0 / static_cast<double>(l.templates())));
        }
    }
    auto l = pwtest::random_logits(rng, 12, 6, 5, 0.3);
    for (std::size_t i = 0; i < l.samples(); ++i) {
        for (std::size_t j = 1; j < l.templates(); ++j) {
            for (std::size_t k = 0; k < l.classes(); ++k) {
                l(i, j, k) = l(i, 0, k);
            }
        }
    }
    const auto cfg = OptimizerConfig::dataset_defaults();
    const auto res = optimize(l, zero_shot_predictions(l, 0, cfg.tau), cfg);
    double dev = 0.0;
    for (double v : res.beta.beta) {
        dev = std::max(dev, std::abs(v - 1.0 / 6.0));
    }
    const bool ok = worst < 1e-4 && res.converged && res.iterations_used == 1 && dev < 1e-15;
    report(4, "limit behaviours", ok,
           fmt("lambda_beta=1e6 worst |beta-1/N_T| %.3g (tol 1e-4); identical templates: iterations %.0f, "
               "converged %.0f, |beta-uniform| %.3g",
               worst, res.iterations_used, res.converged ? 1.0 : 0.0, dev));
}

void objective_improvement() {
    const auto ds = generate_synthetic(SyntheticConfig{});
    const auto l = compute_logit_tensor(ds);
    bool ok = true;
    std::string detail;
    for (double lambda_zs : {0.1, 100.0}) {
        auto cfg = OptimizerConfig::dataset_defaults();
        cfg.lambda_zs = lambda_zs;
        const auto p_hat = zero_shot_predictions(l, ds.zero_shot_template_index, cfg.tau);
        const auto res = optimize(l, p_hat, cfg);
        const double uniform = pwtest::oracle_objective(WeightVector::uniform(5).beta, l, p_hat, lambda_zs,
                                                        cfg.lambda_beta, cfg.tau);
        const double final_value =
            pwtest::oracle_objective(res.beta.beta, l, p_hat, lambda_zs, cfg.lambda_beta, cfg.tau);
        ok = ok && final_value <= uniform + 1e-8;
        detail += fmt("lambda_zs=%g: L_uniform %.6f -> L_final %.6f (converged %.0f); ", lambda_zs, uniform,
                      final_value, res.converged ? 1.0 : 0.0);
    }
    report(5, "objective improvement on synthetic default", ok, detail + "tol 1e-8");
}

void pruning_arithmetic() {
    const auto counts = survivor_counts(35, PruneSchedule{});
    // Run the full loop too so the count is the one the optimizer produces.
    const auto ds = generate_synthetic(SyntheticConfig{.num_samples = 100, .num_templates = 35,
                                                       .clean_template_count = 30});
    const auto l = compute_logit_tensor(ds);
    const auto cfg = OptimizerConfig::dataset_defaults();
    const auto res = prune_optimize(l, zero_shot_predictions(l, 0, cfg.tau), cfg, PruneSchedule{});
    const bool ok = counts.back() == 17 && res.mask.active_count() == 17 && res.active_counts == counts;
    report(6, "pruning arithmetic (35 templates, 4 x 15%)", ok,
           fmt("survivors %.0f (schedule) / %.0f (prune_optimize), expected 17, pruned %.1f%%",
               static_cast<double>(counts.back()), static_cast<double>(res.mask.active_count()),
               100.0 * (35.0 - 17.0) / 35.0));
}

void synthetic_ordering() {
    const auto ds = generate_synthetic(SyntheticConfig{});
    const auto l = compute_logit_tensor(ds);
    const auto cfg = OptimizerConfig::dataset_defaults();
    const auto p_hat = zero_shot_predictions(l, ds.zero_shot_template_index, cfg.tau);
    const auto res = optimize(l, p_hat, cfg);
    const double beta_acc = accuracy(argmax_rows(res.predictions), *ds.labels);
    const auto avg = average_embedding_predict(ds, l, cfg.tau, BaselineSpec{BaselineFamily::average_embedding});
    const double avg_acc = accuracy(avg.classes, *ds.labels);
    const double noise_mass = res.beta[3] + res.beta[4];
    const auto pruned = prune_optimize(l, p_hat, cfg, PruneSchedule{});
    const bool a = beta_acc >= avg_acc;
    const bool b = noise_mass < 0.4;
    const bool c = !pruned.mask[3] && !pruned.mask[4];
    // Golden values from the first verified run.
    const bool golden = beta_acc == 0.975 && avg_acc == 0.945;
    report(7, "synthetic seed-42 ordering", a && b && c && golden,
           fmt("(a) beta acc %.3f >= avg-emb acc %.3f; (b) noise mass %.3g < 0.4; (c) noise pruned %.0f; ", beta_acc,
               avg_acc, noise_mass, c ? 1.0 : 0.0) +
               (golden ? "golden 0.975/0.945 matched" : "golden 0.975/0.945 MISMATCH"));
}

void baseline_sanity() {
    auto one = [](std::vector<std::vector<double>> rows) {
        LogitTensor l(1, 3, 2);
        for (std::size_t j = 0; j < 3; ++j) {
            l(0, j, 0) = rows[j][0];
            l(0, j, 1) = rows[j][1];
        }
        return l;
    };
    const double tau = kDefaultTau;
    using F = BaselineFamily;
    using W = BaselineWeighting;
    const BaselineSpec plain{F::majority_vote, W::uniform, 0.0};
    const BaselineSpec weighted{F::majority_vote, W::inverse_entropy, 0.0};
    const BaselineSpec pruned{F::majority_vote, W::uniform, 0.5};

    bool ok = true;
    std::string detail;
    // Case 1: three confident templates voting (0, 0, 1): every variant says 0.
    {
        const auto l = one({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}});
        const auto m = majority_vote(l, tau, plain);
        const bool c1 = m.classes[0] == 0 && m.shares.values(0, 0) == 2.0 / 3.0 &&
                        majority_vote(l, tau, weighted).classes[0] == 0 &&
                        majority_vote(l, tau, pruned).classes[0] == 0;
        ok = ok && c1;
        detail += c1 ? "case1 ok; " : "case1 wrong; ";
    }
    // Case 2: two unsure templates vote 0, one confident votes 1. Majority says
    // 0; weights 1/(H+1e-6) are about 1.5, 1.5, 1e6 so weighted says 1; pruning
    // ceil(0.5*3)=2 highest-entropy templates leaves only the confident one.
    {
        const auto l = one({{0.01, 0.0}, {0.01, 0.0}, {0.0, 1.0}});
        const bool c2 = majority_vote(l, tau, plain).classes[0] == 0 &&
                        majority_vote(l, tau, weighted).classes[0] == 1 &&
                        majority_vote(l, tau, pruned).classes[0] == 1;
        ok = ok && c2;
        detail += c2 ? "case2 ok; " : "case2 wrong; ";
    }
    // Case 3: majority says 0. Pruning drops the unsure template plus, of the two
    // confident ones (equal entropy), the larger index, so template 0 decides.
    {
        const auto l = one({{0.0, 1.0}, {1.0, 0.0}, {0.005, 0.0}});
        const bool c3 = majority_vote(l, tau, plain).classes[0] == 0 &&
                        majority_vote(l, tau, pruned).classes[0] == 1;
        ok = ok && c3;
        detail += c3 ? "case3 ok" : "case3 wrong";
    }
    report(8, "baseline sanity (3 templates, 2 classes)", ok, detail);
}

void performance() {
    const auto ds = generate_synthetic(SyntheticConfig{.num_samples = 2000, .num_templates = 35, .num_classes = 50,
                                                       .dim = 512, .clean_template_count = 30});
    const auto t0 = clock_type::now();
    const auto l = compute_logit_tensor(ds);
    const double logit_secs = seconds_since(t0);
    auto cfg = OptimizerConfig::dataset_defaults();
    cfg.parallelism = Parallelism{1};
    const auto p_hat = zero_shot_predictions(l, 0, cfg.tau);
    const auto t1 = clock_type::now();
    const auto res = optimize(l, p_hat, cfg);
    const double secs = seconds_since(t1);
    report(9, "performance at N_S=2000, N_T=35, N_C=50, d=512", secs < 2.0,
           fmt("optimize %.3f s over %.0f iterations (limit 2.0 s, single thread); logit tensor %.3f s", secs,
               res.iterations_used, logit_secs));
}

void real_data_path() {
    // Absolute accuracies on real audio embeddings cannot be reproduced without
    // exported bundles. Check that an exported bundle goes through the same path.
    const auto dir = std::filesystem::temp_directory_path() / ("pw_accept_" + std::to_string(::getpid()));
    const auto ds = generate_synthetic(SyntheticConfig{.num_samples = 60});
    save_dataset(ds, dir);
    LoadStats stats;
    const auto loaded = load_dataset(dir, stats);
    std::filesystem::remove_all(dir);
    SuiteConfig cfg;
    cfg.include_single_sample = false;
    const auto a = run_suite(ds, cfg);
    const auto b = run_suite(loaded, cfg);
    bool same = loaded == ds && stats.rows_off_norm == 0 && a.methods.size() == b.methods.size();
    for (std::size_t n = 0; same && n < a.methods.size(); ++n) {
        same = a.methods[n].predictions == b.methods[n].predictions;
    }
    report(10, "real-embedding accuracies declared non-reproducible", same,
           "not reproduced at desk scale; bundle export/load path round-trips and gives identical suite results");
}

} // namespace

int main() {
    const std::vector<std::function<void()>> criteria{stationarity,       grid_oracle,      simplex_invariants,
                                                      limits,             objective_improvement, pruning_arithmetic,
                                                      synthetic_ordering, baseline_sanity,  performance,
                                                      real_data_path};
    for (const auto& c : criteria) {
        try {
            c();
        } catch (const std::exception& e) {
            std::printf("[FAIL] criterion threw: %s\n", e.what());
            ++failures;
        }
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

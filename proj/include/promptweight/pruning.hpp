#pragma once

// Multi-cycle optimize-then-prune over the template set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "optimizer.hpp"

namespace promptweight {

struct PruneSchedule {
    int cycles = 4;
    double fraction_per_cycle = 0.15;
};

inline void validate(const PruneSchedule& schedule) {
    detail::require(schedule.cycles >= 1, "prune schedule needs cycles >= 1");
    detail::require(schedule.fraction_per_cycle > 0.0 && schedule.fraction_per_cycle < 1.0,
                    "prune fraction must lie in (0, 1)");
}

class ActiveMask {
public:
    ActiveMask() = default;
    explicit ActiveMask(std::size_t n) : active_(n, true), count_(n) {}
    explicit ActiveMask(std::vector<bool> active) : active_(std::move(active)) {
        count_ = static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
    }

    std::size_t size() const { return active_.size(); }
    std::size_t active_count() const { return count_; }
    bool operator[](std::size_t j) const { return active_[j]; }
    const std::vector<bool>& flags() const { return active_; }

    void deactivate(std::size_t j) {
        if (active_[j]) {
            active_[j] = false;
            --count_;
        }
    }

    friend bool operator==(const ActiveMask&, const ActiveMask&) = default;

private:
    std::vector<bool> active_;
    std::size_t count_ = 0;
};

/// ceil(fraction * count), with a small slack so products such as 0.15 * 20
/// that land a hair above an integer in binary are not rounded up.
inline std::size_t prune_count(double fraction, std::size_t count) {
    const double raw = fraction * static_cast<double>(count);
    return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

/// Active template count after each cycle, starting with `num_templates`.
/// Depends only on the schedule; throws if any cycle would empty the set.
inline std::vector<std::size_t> survivor_counts(std::size_t num_templates, const PruneSchedule& schedule) {
    validate(schedule);
    std::vector<std::size_t> counts{num_templates};
    for (int c = 0; c < schedule.cycles; ++c) {
        const std::size_t current = counts.back();
        const std::size_t removed = prune_count(schedule.fraction_per_cycle, current);
        if (removed >= current) {
            throw ValidationError("pruning cycle " + std::to_string(c + 1) + " would remove all " +
                                  std::to_string(current) + " remaining templates");
        }
        counts.push_back(current - removed);
    }
    return counts;
}

/// Drops the ceil(fraction * active) active templates with the smallest
/// weight (ties drop the larger index first) and renormalizes the survivors.
inline std::pair<ActiveMask, WeightVector> prune_beta(const WeightVector& beta, const ActiveMask& mask,
                                                      double fraction) {
    detail::require(beta.size() == mask.size(), "beta and mask lengths differ");
    detail::require(fraction > 0.0 && fraction < 1.0, "prune fraction must lie in (0, 1)");
    const std::size_t removed = prune_count(fraction, mask.active_count());
    if (removed >= mask.active_count()) {
        throw ValidationError("pruning " + std::to_string(removed) + " of " + std::to_string(mask.active_count()) +
                              " active templates would leave none");
    }

    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < mask.size(); ++j) {
        if (mask[j]) {
            order.push_back(j);
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (beta[a] != beta[b]) {
            return beta[a] < beta[b];
        }
        return a > b;
    });

    ActiveMask next = mask;
    for (std::size_t r = 0; r < removed; ++r) {
        next.deactivate(order[r]);
    }
    WeightVector out{std::vector<double>(beta.size(), 0.0)};
    double mass = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) {
        if (next[j]) {
            mass += beta[j];
        }
    }
    for (std::size_t j = 0; j < beta.size(); ++j) {
        if (next[j]) {
            out.beta[j] = mass > 0.0 ? beta[j] / mass : 1.0 / static_cast<double>(next.active_count());
        }
    }
    return {std::move(next), std::move(out)};
}

struct PruneResult {
    OptimizationResult result; ///< final optimize pass over the survivors
    ActiveMask mask;
    /// Active count before the first cycle and after each prune.
    std::vector<std::size_t> active_counts;
    /// Renormalized beta right after each prune.
    std::vector<WeightVector> cycle_betas;
    int total_iterations = 0;
};

/// Each cycle optimizes over the active templates (warm-started from the
/// previous pruned beta) and then prunes; a final optimize pass follows the
/// last prune so the returned beta is always an optimized one.
inline PruneResult prune_optimize(const LogitTensor& logits, const ProbMatrix& p_hat, const OptimizerConfig& cfg,
                                  const PruneSchedule& schedule) {
    validate(cfg);
    detail::require(cfg.mode == OptimizerMode::dataset, "prune_optimize runs in dataset mode");
    (void)survivor_counts(logits.templates(), schedule);

    PruneResult out;
    out.mask = ActiveMask(logits.templates());
    out.active_counts.push_back(out.mask.active_count());
    WeightVector beta = WeightVector::uniform(logits.templates());
    for (int c = 0; c < schedule.cycles; ++c) {
        auto cycle = optimize_from(logits, p_hat, cfg, out.mask.flags(), std::move(beta));
        out.total_iterations += cycle.iterations_used;
        auto [mask, pruned] = prune_beta(cycle.beta, out.mask, schedule.fraction_per_cycle);
        out.mask = std::move(mask);
        out.cycle_betas.push_back(pruned);
        beta = std::move(pruned);
        out.active_counts.push_back(out.mask.active_count());
    }
    out.result = optimize_from(logits, p_hat, cfg, out.mask.flags(), std::move(beta));
    out.total_iterations += out.result.iterations_used;
    return out;
}

} // namespace promptweight

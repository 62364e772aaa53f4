#pragma once

// Reference prompt-ensembling methods: majority voting over per-template
// predictions and classification against an averaged class embedding, each
// with uniform weights, inverse-entropy weights, or highest-entropy pruning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"
#include "prediction.hpp"
#include "pruning.hpp"

namespace promptweight {

/// Offset keeping inverse-entropy weights finite for one-hot predictions.
inline constexpr double kInverseEntropyEpsilon = 1e-6;

enum class BaselineFamily { majority_vote, average_embedding };
enum class BaselineWeighting { uniform, inverse_entropy };

/// Whether template entropies used for pruning/weighting are averaged over the
/// dataset or taken from each sample alone.
enum class EntropyScope { dataset, per_sample };

struct BaselineSpec {
    BaselineFamily family = BaselineFamily::majority_vote;
    BaselineWeighting weighting = BaselineWeighting::uniform;
    /// Fraction of highest-entropy templates removed first; 0 disables pruning.
    double prune_fraction = 0.0;
    EntropyScope scope = EntropyScope::dataset;
};

struct NamedBaseline {
    std::string name;
    BaselineSpec spec;
};

/// The six standard variants: {vote, embedding} x {uniform, inverse entropy, 50% pruned}.
inline std::vector<NamedBaseline> standard_baselines() {
    using F = BaselineFamily;
    using W = BaselineWeighting;
    return {
        {"majority_vote", {F::majority_vote, W::uniform, 0.0}},
        {"majority_vote_entropy", {F::majority_vote, W::inverse_entropy, 0.0}},
        {"majority_vote_pruned", {F::majority_vote, W::uniform, 0.5}},
        {"average_embedding", {F::average_embedding, W::uniform, 0.0}},
        {"average_embedding_entropy", {F::average_embedding, W::inverse_entropy, 0.0}},
        {"average_embedding_pruned", {F::average_embedding, W::uniform, 0.5}},
    };
}

/// H of template j's own prediction for sample i, as an N_S x N_T matrix.
inline Matrix template_sample_entropies(const LogitTensor& logits, double tau) {
    detail::require(tau > 0.0, "tau must be > 0");
    Matrix out(logits.samples(), logits.templates());
    std::vector<double> row(logits.classes());
    for (std::size_t i = 0; i < logits.samples(); ++i) {
        for (std::size_t j = 0; j < logits.templates(); ++j) {
            const auto src = logits.row(i, j);
            std::copy(src.begin(), src.end(), row.begin());
            softmax_row(row, tau);
            out(i, j) = entropy(row);
        }
    }
    return out;
}

/// Mean over samples of each template's prediction entropy.
inline std::vector<double> template_entropy_scores(const LogitTensor& logits, double tau) {
    const Matrix per_sample = template_sample_entropies(logits, tau);
    std::vector<double> scores(logits.templates(), 0.0);
    for (std::size_t i = 0; i < per_sample.rows; ++i) {
        for (std::size_t j = 0; j < per_sample.cols; ++j) {
            scores[j] += per_sample(i, j);
        }
    }
    for (auto& s : scores) {
        s /= static_cast<double>(logits.samples());
    }
    return scores;
}

/// Keeps all but the ceil(fraction * N) highest-entropy templates; ties drop
/// the larger index first.
inline ActiveMask entropy_prune_mask(std::span<const double> entropies, double fraction) {
    detail::require(fraction >= 0.0 && fraction < 1.0, "baseline prune fraction must lie in [0, 1)");
    ActiveMask mask(entropies.size());
    if (fraction == 0.0) {
        return mask;
    }
    const std::size_t removed = prune_count(fraction, entropies.size());
    if (removed >= entropies.size()) {
        throw ValidationError("baseline pruning would remove all " + std::to_string(entropies.size()) +
                              " templates");
    }
    std::vector<std::size_t> order(entropies.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (entropies[a] != entropies[b]) {
            return entropies[a] > entropies[b];
        }
        return a > b;
    });
    for (std::size_t r = 0; r < removed; ++r) {
        mask.deactivate(order[r]);
    }
    return mask;
}

namespace detail {

/// Template weights for one group of samples (one sample, or the whole
/// dataset): 0 for pruned templates, otherwise 1 or 1/(H + eps).
inline std::vector<double> baseline_weights(std::span<const double> entropies, const BaselineSpec& spec) {
    const ActiveMask mask = entropy_prune_mask(entropies, spec.prune_fraction);
    std::vector<double> w(entropies.size(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (mask[j]) {
            w[j] = spec.weighting == BaselineWeighting::uniform ? 1.0 : 1.0 / (entropies[j] + kInverseEntropyEpsilon);
        }
    }
    return w;
}

} // namespace detail

struct VoteResult {
    std::vector<int> classes;
    /// Normalized vote mass per class; used for entropy reporting.
    ProbMatrix shares;
};

/// Each template votes for argmax_k l_ijk. Pruning (if any) removes templates
/// by entropy rank; inverse-entropy voting weights a vote by 1/(H_ij + eps)
/// using that template's entropy on that sample. Class ties go to the lowest index.
inline VoteResult majority_vote(const LogitTensor& logits, double tau, const BaselineSpec& spec) {
    detail::require(spec.family == BaselineFamily::majority_vote, "majority_vote needs a majority_vote spec");
    const Matrix sample_h = template_sample_entropies(logits, tau);
    const std::vector<double> mean_h = template_entropy_scores(logits, tau);
    const ActiveMask dataset_mask = entropy_prune_mask(mean_h, spec.prune_fraction);

    VoteResult out;
    out.classes.resize(logits.samples());
    out.shares = ProbMatrix{Matrix(logits.samples(), logits.classes()), tau};
    for (std::size_t i = 0; i < logits.samples(); ++i) {
        const ActiveMask mask =
            spec.scope == EntropyScope::dataset ? dataset_mask : entropy_prune_mask(sample_h.row(i), spec.prune_fraction);
        auto votes = out.shares.values.row(i);
        double total = 0.0;
        for (std::size_t j = 0; j < logits.templates(); ++j) {
            if (!mask[j]) {
                continue;
            }
            const double w = spec.weighting == BaselineWeighting::uniform
                                 ? 1.0
                                 : 1.0 / (sample_h(i, j) + kInverseEntropyEpsilon);
            votes[static_cast<std::size_t>(argmax(logits.row(i, j)))] += w;
            total += w;
        }
        out.classes[i] = argmax(votes);
        for (auto& v : votes) {
            v /= total;
        }
    }
    return out;
}

struct EmbeddingPrediction {
    std::vector<int> classes;
    ProbMatrix probs;
};

namespace detail {

/// normalize(sum_j w_j t_jk) for every class, as a classes x dim matrix.
inline Matrix averaged_class_embeddings(const EmbeddingDataset& ds, std::span<const double> weights) {
    const auto& d = ds.dims;
    Matrix out(d.classes, d.dim);
    for (std::size_t k = 0; k < d.classes; ++k) {
        auto dst = out.row(k);
        for (std::size_t j = 0; j < d.templates; ++j) {
            if (weights[j] == 0.0) {
                continue;
            }
            const auto t = ds.text_row(j, k);
            for (std::size_t c = 0; c < d.dim; ++c) {
                dst[c] += weights[j] * static_cast<double>(t[c]);
            }
        }
        double sq = 0.0;
        for (double v : dst) {
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (!(norm > 1e-12)) {
            throw DataError("degenerate class '" + ds.class_names[k] +
                            "': averaged text embedding has zero norm");
        }
        for (auto& v : dst) {
            v /= norm;
        }
    }
    return out;
}

inline void cosine_logits_row(const EmbeddingDataset& ds, std::size_t sample, const Matrix& class_emb,
                              std::span<double> out) {
    const auto f = ds.audio_row(sample);
    for (std::size_t k = 0; k < class_emb.rows; ++k) {
        const auto t = class_emb.row(k);
        double acc = 0.0;
        for (std::size_t c = 0; c < f.size(); ++c) {
            acc += static_cast<double>(f[c]) * t[c];
        }
        out[k] = acc;
    }
}

} // namespace detail

/// Classifies every sample against averaged class embeddings. `logits` must be
/// the tensor of `ds`; it supplies the template entropies.
inline EmbeddingPrediction average_embedding_predict(const EmbeddingDataset& ds, const LogitTensor& logits, double tau,
                                                     const BaselineSpec& spec) {
    detail::require(spec.family == BaselineFamily::average_embedding,
                    "average_embedding_predict needs an average_embedding spec");
    detail::require(tau > 0.0, "tau must be > 0");
    detail::require(logits.samples() == ds.dims.samples && logits.templates() == ds.dims.templates &&
                        logits.classes() == ds.dims.classes,
                    "logit tensor does not match dataset");

    Matrix bar(ds.dims.samples, ds.dims.classes);
    if (spec.scope == EntropyScope::dataset) {
        const auto weights = detail::baseline_weights(template_entropy_scores(logits, tau), spec);
        const Matrix class_emb = detail::averaged_class_embeddings(ds, weights);
        for (std::size_t i = 0; i < ds.dims.samples; ++i) {
            detail::cosine_logits_row(ds, i, class_emb, bar.row(i));
        }
    } else {
        const Matrix sample_h = template_sample_entropies(logits, tau);
        for (std::size_t i = 0; i < ds.dims.samples; ++i) {
            const auto weights = detail::baseline_weights(sample_h.row(i), spec);
            const Matrix class_emb = detail::averaged_class_embeddings(ds, weights);
            detail::cosine_logits_row(ds, i, class_emb, bar.row(i));
        }
    }
    EmbeddingPrediction out;
    out.classes = argmax_rows(bar);
    out.probs = predict(bar, tau);
    return out;
}

inline EmbeddingPrediction average_embedding_predict(const EmbeddingDataset& ds, double tau, const BaselineSpec& spec) {
    return average_embedding_predict(ds, compute_logit_tensor(ds), tau, spec);
}

} // namespace promptweight

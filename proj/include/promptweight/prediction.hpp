#pragma once

// Cosine logits, template-weighted logits, temperature softmax and the
// entropy functionals shared by the optimizer and the baselines.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dataset.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace promptweight {

/// Clamp applied to probabilities before taking logarithms.
inline constexpr double kProbEpsilon = 1e-12;

/// Default softmax temperature: the inverse of a logit scale of 33.3.
inline constexpr double kDefaultTau = 1.0 / 33.3;

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// l[i][j][k]: similarity of sample i with the text embedding of class k
/// under template j.
class LogitTensor {
public:
    LogitTensor() = default;
    LogitTensor(std::size_t samples, std::size_t templates, std::size_t classes, double fill = 0.0)
        : samples_(samples), templates_(templates), classes_(classes), values_(samples * templates * classes, fill) {}
    LogitTensor(std::size_t samples, std::size_t templates, std::size_t classes, std::vector<double> values)
        : samples_(samples), templates_(templates), classes_(classes), values_(std::move(values)) {
        detail::require(values_.size() == samples_ * templates_ * classes_, "logit tensor size mismatch");
    }

    std::size_t samples() const { return samples_; }
    std::size_t templates() const { return templates_; }
    std::size_t classes() const { return classes_; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) { return values_[index(i, j, k)]; }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const { return values_[index(i, j, k)]; }

    /// Class logits of sample i under template j.
    std::span<const double> row(std::size_t i, std::size_t j) const {
        return {values_.data() + index(i, j, 0), classes_};
    }
    std::span<double> row(std::size_t i, std::size_t j) { return {values_.data() + index(i, j, 0), classes_}; }

    const std::vector<double>& values() const { return values_; }

    /// Single-sample view copied out as its own tensor (N_S = 1).
    LogitTensor sample_slice(std::size_t i) const {
        detail::require(i < samples_, "sample index out of range");
        const auto first = values_.begin() + static_cast<std::ptrdiff_t>(index(i, 0, 0));
        return {1, templates_, classes_,
                std::vector<double>(first, first + static_cast<std::ptrdiff_t>(templates_ * classes_))};
    }

    /// N_S x N_C logits of template j alone.
    Matrix template_slice(std::size_t j) const {
        detail::require(j < templates_, "template index " + std::to_string(j) + " out of range for " +
                                            std::to_string(templates_) + " templates");
        Matrix out(samples_, classes_);
        for (std::size_t i = 0; i < samples_; ++i) {
            std::copy_n(row(i, j).begin(), classes_, out.row(i).begin());
        }
        return out;
    }

    friend bool operator==(const LogitTensor&, const LogitTensor&) = default;

private:
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * templates_ + j) * classes_ + k;
    }

    std::size_t samples_ = 0;
    std::size_t templates_ = 0;
    std::size_t classes_ = 0;
    std::vector<double> values_;
};

/// Per-sample class distributions together with the temperature that produced them.
struct ProbMatrix {
    Matrix values;
    double tau = kDefaultTau;

    std::size_t samples() const { return values.rows; }
    std::size_t classes() const { return values.cols; }
    std::span<const double> row(std::size_t i) const { return values.row(i); }
};

/// Template weights on the probability simplex.
struct WeightVector {
    std::vector<double> beta;

    static WeightVector uniform(std::size_t n) {
        detail::require(n >= 1, "weight vector needs at least one template");
        return {std::vector<double>(n, 1.0 / static_cast<double>(n))};
    }
    static WeightVector one_hot(std::size_t n, std::size_t at) {
        detail::require(at < n, "one-hot index out of range");
        WeightVector w{std::vector<double>(n, 0.0)};
        w.beta[at] = 1.0;
        return w;
    }

    std::size_t size() const { return beta.size(); }
    double operator[](std::size_t j) const { return beta[j]; }

    bool on_simplex(double tol = 1e-9) const {
        double sum = 0.0;
        for (double b : beta) {
            if (!(b >= 0.0)) {
                return false;
            }
            sum += b;
        }
        return std::abs(sum - 1.0) <= tol;
    }

    friend bool operator==(const WeightVector&, const WeightVector&) = default;
};

inline LogitTensor compute_logit_tensor(const EmbeddingDataset& ds) {
    validate(ds);
    const auto& d = ds.dims;
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMajorF> audio(ds.audio.data(), static_cast<Eigen::Index>(d.samples),
                                            static_cast<Eigen::Index>(d.dim));
    const Eigen::Map<const RowMajorF> text(ds.text.data(), static_cast<Eigen::Index>(d.templates * d.classes),
                                           static_cast<Eigen::Index>(d.dim));
    // Row i of the product is laid out [template][class], matching the tensor.
    const RowMajorF product = audio * text.transpose();
    std::vector<double> values(product.data(), product.data() + product.size());
    return {d.samples, d.templates, d.classes, std::move(values)};
}

/// Largest deviation of any logit from [-1, 1]; zero when all are in range.
inline double logit_range_violation(const LogitTensor& logits) {
    double worst = 0.0;
    for (double v : logits.values()) {
        worst = std::max(worst, std::abs(v) - 1.0);
    }
    return worst;
}

/// bar_l[i][k] = sum_j beta_j * l[i][j][k].
inline Matrix weighted_logits(const LogitTensor& logits, const WeightVector& beta, Parallelism par = {}) {
    detail::require(beta.size() == logits.templates(),
                    "weight vector has " + std::to_string(beta.size()) + " entries, logits have " +
                        std::to_string(logits.templates()) + " templates");
    Matrix out(logits.samples(), logits.classes());
    for_each_range(logits.samples(), par, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto dst = out.row(i);
            for (std::size_t j = 0; j < logits.templates(); ++j) {
                const double b = beta[j];
                if (b == 0.0) {
                    continue;
                }
                const auto src = logits.row(i, j);
                for (std::size_t k = 0; k < dst.size(); ++k) {
                    dst[k] += b * src[k];
                }
            }
        }
    });
    return out;
}

/// In-place temperature softmax of one row with max subtraction.
inline void softmax_row(std::span<double> row, double tau) {
    const double peak = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (auto& v : row) {
        v = std::exp((v - peak) / tau);
        sum += v;
    }
    for (auto& v : row) {
        v /= sum;
    }
}

/// p[i][k] = softmax_k(bar_l[i][k] / tau).
inline ProbMatrix predict(const Matrix& bar_logits, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw ValidationError("temperature tau must be > 0");
    }
    detail::require(bar_logits.cols >= 1, "need at least one class");
    ProbMatrix out{bar_logits, tau};
    for (std::size_t i = 0; i < out.values.rows; ++i) {
        softmax_row(out.values.row(i), tau);
    }
    return out;
}

/// Shannon entropy in nats; entries at or below 1e-12 contribute nothing.
inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > kProbEpsilon) {
            h -= v * std::log(v);
        }
    }
    return h;
}

/// H(p, q) = -sum_k p_k ln max(q_k, 1e-12).
inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
    detail::require(p.size() == q.size(), "cross_entropy: rows differ in length");
    double h = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        h -= p[k] * std::log(std::max(q[k], kProbEpsilon));
    }
    return h;
}

inline double mean_entropy(const ProbMatrix& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.samples(); ++i) {
        total += entropy(p.row(i));
    }
    return p.samples() == 0 ? 0.0 : total / static_cast<double>(p.samples());
}

/// Prediction of the single anchor template j0; used as the regularization target.
inline ProbMatrix zero_shot_predictions(const LogitTensor& logits, std::size_t j0, double tau) {
    return predict(logits.template_slice(j0), tau);
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const double> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        out[i] = argmax(m.row(i));
    }
    return out;
}

inline std::vector<int> argmax_rows(const ProbMatrix& p) { return argmax_rows(p.values); }

} // namespace promptweight

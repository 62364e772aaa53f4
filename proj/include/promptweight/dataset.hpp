#pragma once

// Embedding bundles: an on-disk directory holding a JSON manifest and two raw
// little-endian float32 payloads (audio features and text embeddings), plus a
// deterministic synthetic generator used by the tests and the CLI.
//
//   manifest.json  {format_version: 1, dim, num_samples, num_templates,
//                   num_classes, audio_file, text_file, labels | null,
//                   class_names, template_strings, zero_shot_template_index}
//   audio_file     float32 [sample][dim]
//   text_file      float32 [template][class][dim]

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace promptweight {

struct Dims {
    std::size_t samples = 0;
    std::size_t templates = 0;
    std::size_t classes = 0;
    std::size_t dim = 0;

    friend bool operator==(const Dims&, const Dims&) = default;
};

struct EmbeddingDataset {
    Dims dims;
    std::vector<float> audio; ///< samples x dim
    std::vector<float> text;  ///< templates x classes x dim
    std::optional<std::vector<int>> labels;
    std::vector<std::string> class_names;
    std::vector<std::string> template_strings;
    std::size_t zero_shot_template_index = 0;

    std::span<const float> audio_row(std::size_t sample) const {
        return {audio.data() + sample * dims.dim, dims.dim};
    }
    std::span<const float> text_row(std::size_t tmpl, std::size_t cls) const {
        return {text.data() + (tmpl * dims.classes + cls) * dims.dim, dims.dim};
    }

    bool has_labels() const { return labels.has_value(); }

    friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

/// Throws DataError if the structural invariants of a dataset do not hold.
inline void validate(const EmbeddingDataset& ds) {
    const auto& d = ds.dims;
    if (d.samples == 0 || d.templates == 0 || d.classes == 0 || d.dim == 0) {
        throw DataError("all dataset dimensions must be >= 1");
    }
    if (ds.audio.size() != d.samples * d.dim) {
        throw DataError("audio payload has " + std::to_string(ds.audio.size()) + " values, expected " +
                        std::to_string(d.samples * d.dim));
    }
    if (ds.text.size() != d.templates * d.classes * d.dim) {
        throw DataError("text payload has " + std::to_string(ds.text.size()) + " values, expected " +
                        std::to_string(d.templates * d.classes * d.dim));
    }
    if (ds.class_names.size() != d.classes) {
        throw DataError("class_names must have num_classes entries");
    }
    if (ds.template_strings.size() != d.templates) {
        throw DataError("template_strings must have num_templates entries");
    }
    if (ds.zero_shot_template_index >= d.templates) {
        throw DataError("zero_shot_template_index " + std::to_string(ds.zero_shot_template_index) +
                        " out of range for " + std::to_string(d.templates) + " templates");
    }
    if (ds.labels) {
        if (ds.labels->size() != d.samples) {
            throw DataError("labels must have num_samples entries");
        }
        for (int label : *ds.labels) {
            if (label < 0 || static_cast<std::size_t>(label) >= d.classes) {
                throw DataError("label " + std::to_string(label) + " out of range [0, " +
                                std::to_string(d.classes) + ")");
            }
        }
    }
}

namespace detail {

// Rows are rescaled only when their norm is off by more than this, so rows
// that are already unit length keep their exact bits.
inline constexpr double kRenormalizeThreshold = 1e-6;
inline constexpr double kNormWarningThreshold = 1e-3;

struct NormalizeStats {
    std::size_t rows_rescaled = 0;
    std::size_t rows_off_norm = 0;
};

inline void normalize_rows(std::vector<float>& values, std::size_t dim, const char* what, NormalizeStats& stats) {
    const std::size_t rows = values.size() / dim;
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = values.data() + r * dim;
        double sq = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            sq += static_cast<double>(row[c]) * row[c];
        }
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw DataError(std::string("cannot normalize zero-norm or non-finite ") + what + " row " +
                            std::to_string(r));
        }
        if (std::abs(norm - 1.0) > kNormWarningThreshold) {
            ++stats.rows_off_norm;
        }
        if (std::abs(norm - 1.0) > kRenormalizeThreshold) {
            for (std::size_t c = 0; c < dim; ++c) {
                row[c] = static_cast<float>(row[c] / norm);
            }
            ++stats.rows_rescaled;
        }
    }
}

inline std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw DataError("missing payload file: " + path.string());
    }
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) {
        throw DataError("cannot stat payload file: " + path.string());
    }
    if (bytes != expected_count * sizeof(float)) {
        throw DataError("dimension mismatch: " + path.string() + " has " + std::to_string(bytes) +
                        " bytes, manifest implies " + std::to_string(expected_count * sizeof(float)));
    }
    std::vector<float> out(expected_count);
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
    if (!in) {
        throw DataError("failed reading payload file: " + path.string());
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : out) {
            v = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(v)));
        }
    }
    return out;
}

inline void write_f32(const std::filesystem::path& path, std::span<const float> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open for writing: " + path.string());
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (float v : values) {
            const std::uint32_t le = byteswap32(std::bit_cast<std::uint32_t>(v));
            out.write(reinterpret_cast<const char*>(&le), sizeof(le));
        }
    } else {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
    }
    if (!out) {
        throw DataError("failed writing payload file: " + path.string());
    }
}

template <typename T>
T manifest_field(const nlohmann::json& manifest, const char* key) {
    if (!manifest.contains(key)) {
        throw DataError(std::string("manifest is missing field '") + key + "'");
    }
    try {
        return manifest.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest field '") + key + "' has the wrong type: " + e.what());
    }
}

inline std::size_t manifest_count(const nlohmann::json& manifest, const char* key) {
    const auto value = manifest_field<long long>(manifest, key);
    if (value < 1) {
        throw DataError(std::string("manifest field '") + key + "' must be >= 1");
    }
    return static_cast<std::size_t>(value);
}

} // namespace detail

struct LoadStats {
    /// Rows whose stored norm differed from 1 by more than 1e-3.
    std::size_t rows_off_norm = 0;
    /// Rows that were rescaled at all (norm off by more than 1e-6).
    std::size_t rows_rescaled = 0;
};

/// Loads a bundle. `path` may be the bundle directory or its manifest file.
/// Every audio and text row is brought to unit L2 norm.
inline EmbeddingDataset load_dataset(const std::filesystem::path& path, LoadStats& stats) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
    if (!fs::is_regular_file(manifest_path)) {
        throw DataError("missing manifest: " + manifest_path.string());
    }
    nlohmann::json manifest;
    try {
        std::ifstream in(manifest_path);
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse manifest " + manifest_path.string() + ": " + e.what());
    }
    if (detail::manifest_field<int>(manifest, "format_version") != 1) {
        throw DataError("unsupported format_version (expected 1)");
    }

    EmbeddingDataset ds;
    ds.dims.dim = detail::manifest_count(manifest, "dim");
    ds.dims.samples = detail::manifest_count(manifest, "num_samples");
    ds.dims.templates = detail::manifest_count(manifest, "num_templates");
    ds.dims.classes = detail::manifest_count(manifest, "num_classes");
    ds.class_names = detail::manifest_field<std::vector<std::string>>(manifest, "class_names");
    ds.template_strings = detail::manifest_field<std::vector<std::string>>(manifest, "template_strings");
    if (manifest.contains("zero_shot_template_index") && !manifest["zero_shot_template_index"].is_null()) {
        const auto j0 = detail::manifest_field<long long>(manifest, "zero_shot_template_index");
        if (j0 < 0) {
            throw DataError("zero_shot_template_index must be >= 0");
        }
        ds.zero_shot_template_index = static_cast<std::size_t>(j0);
    }
    if (manifest.contains("labels") && !manifest["labels"].is_null()) {
        ds.labels = detail::manifest_field<std::vector<int>>(manifest, "labels");
    }

    const fs::path base = manifest_path.parent_path();
    const auto audio_file = detail::manifest_field<std::string>(manifest, "audio_file");
    const auto text_file = detail::manifest_field<std::string>(manifest, "text_file");
    ds.audio = detail::read_f32(base / audio_file, ds.dims.samples * ds.dims.dim);
    ds.text = detail::read_f32(base / text_file, ds.dims.templates * ds.dims.classes * ds.dims.dim);

    validate(ds);

    detail::NormalizeStats norm;
    detail::normalize_rows(ds.audio, ds.dims.dim, "audio", norm);
    detail::normalize_rows(ds.text, ds.dims.dim, "text", norm);
    stats.rows_off_norm = norm.rows_off_norm;
    stats.rows_rescaled = norm.rows_rescaled;
    return ds;
}

inline EmbeddingDataset load_dataset(const std::filesystem::path& path) {
    LoadStats ignored;
    return load_dataset(path, ignored);
}

/// Writes `ds` as a bundle directory (created if needed).
inline void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& dir) {
    validate(ds);
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {
        {"format_version", 1},
        {"dim", ds.dims.dim},
        {"num_samples", ds.dims.samples},
        {"num_templates", ds.dims.templates},
        {"num_classes", ds.dims.classes},
        {"audio_file", "audio.f32"},
        {"text_file", "text.f32"},
        {"labels", ds.labels ? nlohmann::json(*ds.labels) : nlohmann::json(nullptr)},
        {"class_names", ds.class_names},
        {"template_strings", ds.template_strings},
        {"zero_shot_template_index", ds.zero_shot_template_index},
    };
    {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        if (!out) {
            throw DataError("cannot write manifest in " + dir.string());
        }
        out << manifest.dump(2) << '\n';
    }
    detail::write_f32(dir / "audio.f32", ds.audio);
    detail::write_f32(dir / "text.f32", ds.text);
}

struct SyntheticConfig {
    std::size_t num_samples = 200;
    std::size_t num_templates = 5;
    std::size_t num_classes = 10;
    std::size_t dim = 64;
    /// Templates [0, clean_template_count) are faithful; the rest are noise.
    std::size_t clean_template_count = 3;
    /// Expected norm of the per-template offset added to each class prototype.
    double noise_sigma = 0.1;
    /// Expected norm of the isotropic perturbation added to each audio sample.
    double audio_noise = 2.0;
    std::uint64_t seed = 42;
};

inline void validate(const SyntheticConfig& cfg) {
    detail::require(cfg.num_samples >= 1 && cfg.num_templates >= 1 && cfg.num_classes >= 1,
                    "synthetic counts must all be >= 1");
    detail::require(cfg.dim >= 2, "synthetic dim must be >= 2");
    detail::require(cfg.clean_template_count <= cfg.num_templates,
                    "clean_template_count must not exceed num_templates");
    detail::require(cfg.noise_sigma >= 0.0 && std::isfinite(cfg.noise_sigma), "noise_sigma must be >= 0");
    detail::require(cfg.audio_noise >= 0.0 && std::isfinite(cfg.audio_noise), "audio_noise must be >= 0");
}

/// Deterministic synthetic bundle. Class prototypes are uniform on the unit
/// sphere; audio sample i (label i mod C) is its prototype plus isotropic
/// noise. A clean template's class embedding is the prototype plus its own
/// Gaussian offset; a noise template's class embeddings are drawn uniformly on
/// the sphere, unrelated to the prototypes.
inline EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg) {
    validate(cfg);
    Xoshiro256 rng(cfg.seed);
    const std::size_t d = cfg.dim;
    const double per_coord = 1.0 / std::sqrt(static_cast<double>(d));

    auto normalize_into = [d](const std::vector<double>& v, float* out) {
        double sq = 0.0;
        for (double x : v) {
            sq += x * x;
        }
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0)) {
            throw DataError("synthetic generator produced a zero vector");
        }
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = static_cast<float>(v[c] / norm);
        }
    };
    auto sphere = [&](std::vector<double>& v) {
        rng.normal_vector(v);
        double sq = 0.0;
        for (double x : v) {
            sq += x * x;
        }
        const double norm = std::sqrt(sq);
        for (auto& x : v) {
            x /= norm;
        }
    };

    EmbeddingDataset ds;
    ds.dims = {cfg.num_samples, cfg.num_templates, cfg.num_classes, d};
    ds.audio.resize(cfg.num_samples * d);
    ds.text.resize(cfg.num_templates * cfg.num_classes * d);

    std::vector<std::vector<double>> prototypes(cfg.num_classes, std::vector<double>(d));
    for (auto& p : prototypes) {
        sphere(p);
    }

    std::vector<double> work(d);
    std::vector<int> labels(cfg.num_samples);
    for (std::size_t i = 0; i < cfg.num_samples; ++i) {
        labels[i] = static_cast<int>(i % cfg.num_classes);
        const auto& proto = prototypes[static_cast<std::size_t>(labels[i])];
        for (std::size_t c = 0; c < d; ++c) {
            work[c] = proto[c] + cfg.audio_noise * per_coord * rng.normal();
        }
        normalize_into(work, ds.audio.data() + i * d);
    }

    for (std::size_t j = 0; j < cfg.num_templates; ++j) {
        const bool clean = j < cfg.clean_template_count;
        std::vector<double> offset(d);
        for (std::size_t k = 0; k < cfg.num_classes; ++k) {
            float* out = ds.text.data() + (j * cfg.num_classes + k) * d;
            if (clean) {
                rng.normal_vector(offset);
                for (std::size_t c = 0; c < d; ++c) {
                    work[c] = prototypes[k][c] + cfg.noise_sigma * per_coord * offset[c];
                }
            } else {
                sphere(work);
            }
            normalize_into(work, out);
        }
        ds.template_strings.push_back((clean ? "clean template " : "noise template ") + std::to_string(j) +
                                      " {class}");
    }
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        ds.class_names.push_back("class_" + std::to_string(k));
    }
    ds.labels = std::move(labels);
    ds.zero_shot_template_index = 0;
    return ds;
}

} // namespace promptweight

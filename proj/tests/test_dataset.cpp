#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <promptweight/dataset.hpp>
#include <promptweight/prediction.hpp>

namespace fs = std::filesystem;
using namespace promptweight;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("pw_dataset_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

void write_floats(const fs::path& p, const std::vector<float>& v) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

/// Writes a 2-sample, 1-template, 2-class, d=3 bundle with the given audio rows.
nlohmann::json write_small_bundle(const fs::path& dir, const std::vector<float>& audio) {
    nlohmann::json manifest = {
        {"format_version", 1},       {"dim", 3},
        {"num_samples", 2},          {"num_templates", 1},
        {"num_classes", 2},          {"audio_file", "audio.bin"},
        {"text_file", "text.bin"},   {"labels", {0, 1}},
        {"class_names", {"a", "b"}}, {"template_strings", {"This is a sound of {class}"}},
        {"zero_shot_template_index", 0},
    };
    std::ofstream(dir / "manifest.json") << manifest.dump();
    write_floats(dir / "audio.bin", audio);
    write_floats(dir / "text.bin", {1, 0, 0, 0, 1, 0});
    return manifest;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double row_norm(std::span<const float> row) {
    double sq = 0.0;
    for (float v : row) {
        sq += static_cast<double>(v) * v;
    }
    return std::sqrt(sq);
}

} // namespace

TEST(LoadDataset, UnitRowsLoadUnchanged) {
    TempDir tmp;
    write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    LoadStats stats;
    const auto ds = load_dataset(tmp.path(), stats);
    EXPECT_EQ(ds.audio, (std::vector<float>{1, 0, 0, 0, 1, 0}));
    EXPECT_EQ(stats.rows_off_norm, 0u);
    EXPECT_EQ(stats.rows_rescaled, 0u);
    EXPECT_EQ(ds.dims, (Dims{2, 1, 2, 3}));
    ASSERT_TRUE(ds.labels.has_value());
    EXPECT_EQ(*ds.labels, (std::vector<int>{0, 1}));
    EXPECT_EQ(ds.template_strings[0], "This is a sound of {class}");
}

TEST(LoadDataset, AcceptsManifestPathDirectly) {
    TempDir tmp;
    write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    EXPECT_NO_THROW(load_dataset(tmp.path() / "manifest.json"));
}

TEST(LoadDataset, OffNormRowIsRenormalizedAndCounted) {
    TempDir tmp;
    write_small_bundle(tmp.path(), {2, 0, 0, 0, 1, 0});
    LoadStats stats;
    const auto ds = load_dataset(tmp.path(), stats);
    EXPECT_EQ(ds.audio, (std::vector<float>{1, 0, 0, 0, 1, 0}));
    EXPECT_EQ(stats.rows_off_norm, 1u);
}

TEST(LoadDataset, PayloadSizeMismatchIsDataError) {
    TempDir tmp;
    auto manifest = write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    manifest["dim"] = 512;
    std::ofstream(tmp.path() / "manifest.json") << manifest.dump();
    write_floats(tmp.path() / "audio.bin", std::vector<float>(511 * 2, 0.1f));
    EXPECT_THROW(load_dataset(tmp.path()), DataError);
}

TEST(LoadDataset, MissingFilesAreDataErrors) {
    TempDir tmp;
    EXPECT_THROW(load_dataset(tmp.path()), DataError);
    write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    fs::remove(tmp.path() / "text.bin");
    EXPECT_THROW(load_dataset(tmp.path()), DataError);
}

TEST(LoadDataset, ZeroNormRowIsDataError) {
    TempDir tmp;
    write_small_bundle(tmp.path(), {0, 0, 0, 0, 1, 0});
    EXPECT_THROW(load_dataset(tmp.path()), DataError);
}

TEST(LoadDataset, LabelOutOfRangeIsDataError) {
    TempDir tmp;
    auto manifest = write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    manifest["labels"] = {0, 2};
    std::ofstream(tmp.path() / "manifest.json") << manifest.dump();
    EXPECT_THROW(load_dataset(tmp.path()), DataError);
}

TEST(LoadDataset, AnchorIndexOutOfRangeIsDataError) {
    TempDir tmp;
    auto manifest = write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    manifest["zero_shot_template_index"] = 1;
    std::ofstream(tmp.path() / "manifest.json") << manifest.dump();
    EXPECT_THROW(load_dataset(tmp.path()), DataError);
}

TEST(LoadDataset, NullLabelsAndDefaultAnchor) {
    TempDir tmp;
    auto manifest = write_small_bundle(tmp.path(), {1, 0, 0, 0, 1, 0});
    manifest["labels"] = nullptr;
    manifest.erase("zero_shot_template_index");
    std::ofstream(tmp.path() / "manifest.json") << manifest.dump();
    const auto ds = load_dataset(tmp.path());
    EXPECT_FALSE(ds.labels.has_value());
    EXPECT_EQ(ds.zero_shot_template_index, 0u);
}

TEST(Rng, SplitMixReferenceValue) {
    SplitMix64 sm(0);
    EXPECT_EQ(sm.next(), 0xe220a8397b1dcdafULL);
}

TEST(Rng, XoshiroGoldenStream) {
    // Frozen from the first verified run; changing these breaks every
    // synthetic golden value downstream.
    // Cross-checked against a separate splitmix64 + xoshiro256** script.
    Xoshiro256 rng(42);
    EXPECT_EQ(rng(), 0x15780b2e0c2ec716ULL);
    EXPECT_EQ(rng(), 0x6104d9866d113a7eULL);
    EXPECT_EQ(rng(), 0xae17533239e499a1ULL);
    double sum = 0.0;
    double sq = 0.0;
    Xoshiro256 normals(7);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = normals.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.01);
}

TEST(Synthetic, RoundTripIsBitExact) {
    for (std::uint64_t seed : {1u, 2u, 3u, 99u}) {
        SyntheticConfig cfg;
        cfg.seed = seed;
        cfg.num_samples = 5 + seed % 7;
        cfg.num_templates = 2 + seed % 4;
        cfg.num_classes = 3 + seed % 3;
        cfg.dim = 4 + seed % 9;
        cfg.clean_template_count = 1;
        auto ds = generate_synthetic(cfg);
        if (seed % 2 == 0) {
            ds.labels.reset();
        }
        TempDir tmp;
        save_dataset(ds, tmp.path());
        LoadStats stats;
        const auto back = load_dataset(tmp.path(), stats);
        EXPECT_EQ(back, ds) << "seed " << seed;
        EXPECT_EQ(stats.rows_rescaled, 0u);
    }
}

TEST(Synthetic, RowsAreUnitNorm) {
    SyntheticConfig cfg;
    cfg.dim = 37;
    cfg.noise_sigma = 0.7;
    const auto ds = generate_synthetic(cfg);
    for (std::size_t i = 0; i < ds.dims.samples; ++i) {
        EXPECT_NEAR(row_norm(ds.audio_row(i)), 1.0, 1e-6);
    }
    for (std::size_t j = 0; j < ds.dims.templates; ++j) {
        for (std::size_t k = 0; k < ds.dims.classes; ++k) {
            EXPECT_NEAR(row_norm(ds.text_row(j, k)), 1.0, 1e-6);
        }
    }
}

TEST(Synthetic, ZeroSigmaAllCleanGivesIdenticalSlices) {
    SyntheticConfig cfg;
    cfg.num_templates = 4;
    cfg.clean_template_count = 4;
    cfg.noise_sigma = 0.0;
    const auto logits = compute_logit_tensor(generate_synthetic(cfg));
    for (std::size_t i = 0; i < logits.samples(); ++i) {
        for (std::size_t j = 1; j < logits.templates(); ++j) {
            for (std::size_t k = 0; k < logits.classes(); ++k) {
                ASSERT_EQ(logits(i, j, k), logits(i, 0, k));
            }
        }
    }
}

TEST(Synthetic, SameSeedGivesIdenticalBundles) {
    SyntheticConfig cfg;
    cfg.seed = 7;
    TempDir a;
    TempDir b;
    save_dataset(generate_synthetic(cfg), a.path());
    save_dataset(generate_synthetic(cfg), b.path());
    for (const char* name : {"manifest.json", "audio.f32", "text.f32"}) {
        EXPECT_EQ(slurp(a.path() / name), slurp(b.path() / name)) << name;
    }
    cfg.seed = 8;
    EXPECT_NE(generate_synthetic(cfg).audio, generate_synthetic(SyntheticConfig{.seed = 7}).audio);
}

TEST(Synthetic, InvalidConfigsRejected) {
    EXPECT_THROW(generate_synthetic(SyntheticConfig{.dim = 1}), ValidationError);
    EXPECT_THROW(generate_synthetic(SyntheticConfig{.num_templates = 2, .clean_template_count = 3}), ValidationError);
    EXPECT_THROW(generate_synthetic(SyntheticConfig{.noise_sigma = -0.1}), ValidationError);
    EXPECT_THROW(generate_synthetic(SyntheticConfig{.num_samples = 0}), ValidationError);
}

TEST(Synthetic, LabelsAreRoundRobin) {
    const auto ds = generate_synthetic(SyntheticConfig{.num_samples = 23, .num_classes = 4});
    for (std::size_t i = 0; i < 23; ++i) {
        EXPECT_EQ((*ds.labels)[i], static_cast<int>(i % 4));
    }
}

namespace {

double accuracy_with_beta(const LogitTensor& l, const std::vector<int>& labels, const WeightVector& beta) {
    const auto pred = argmax_rows(weighted_logits(l, beta));
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += pred[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

} // namespace

TEST(Synthetic, UniformAccuracyBetweenNoiseOnlyAndCleanOnly) {
    // 3 clean + 2 noise templates, N_S=200, N_C=10, d=64, sigma=0.1, seed 42.
    const auto ds = generate_synthetic(SyntheticConfig{});
    const auto logits = compute_logit_tensor(ds);
    const auto& labels = *ds.labels;
    const double clean_only = accuracy_with_beta(logits, labels, WeightVector{{1.0 / 3, 1.0 / 3, 1.0 / 3, 0, 0}});
    const double noise_only = accuracy_with_beta(logits, labels, WeightVector{{0, 0, 0, 0.5, 0.5}});
    const double uniform = accuracy_with_beta(logits, labels, WeightVector::uniform(5));
    EXPECT_LT(noise_only, uniform);
    EXPECT_LT(uniform, clean_only);
    // Golden values, seed 42.
    EXPECT_DOUBLE_EQ(clean_only, 0.975);
    EXPECT_DOUBLE_EQ(uniform, 0.94);
    EXPECT_DOUBLE_EQ(noise_only, 0.07);
}

#pragma once

// Shared synthetic fixtures for the test suites.

#include <filesystem>

#include "camseg/image.hpp"
#include "camseg/mock_vit.hpp"
#include "camseg/textbank.hpp"

namespace fixtures {

/// Smooth deterministic RGB image built from a seeded set of color blobs.
inline camseg::Image synthetic_image(int rows, int cols, uint64_t seed) {
    camseg::SplitMix64 rng(seed ^ 0xABCDEF1234567890ULL);
    camseg::Image img(rows, cols);
    const int blobs = 3 + int(rng.next() % 3);
    std::vector<std::array<double, 6>> params;  // cy, cx, radius, r, g, b
    for (int b = 0; b < blobs; ++b)
        params.push_back({rng.uniform01() * rows, rng.uniform01() * cols,
                          (0.15 + 0.3 * rng.uniform01()) * std::min(rows, cols),
                          rng.uniform01(), rng.uniform01(), rng.uniform01()});
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double rgb[3] = {0.1, 0.1, 0.1};
            for (const auto& p : params) {
                const double d2 = (r - p[0]) * (r - p[0]) + (c - p[1]) * (c - p[1]);
                const double w = std::exp(-d2 / (2.0 * p[2] * p[2]));
                rgb[0] += w * p[3];
                rgb[1] += w * p[4];
                rgb[2] += w * p[5];
            }
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = std::min(1.0, rgb[ch]);
        }
    }
    return img;
}

/// Small vocabulary: 4 foreground classes (person carries synonyms) and 3
/// background names.
inline camseg::ClassVocabulary small_vocab() {
    camseg::ClassVocabulary vocab;
    vocab.foreground = {
        {0, "cat", {"cat"}},
        {1, "dog", {"dog"}},
        {2, "person", {"person with clothes", "people", "human"}},
        {3, "boat", {"boat"}},
    };
    vocab.background = {"grass", "sky", "water"};
    vocab.prompt_template = "a clean origami of {}.";
    vocab.validate();
    return vocab;
}

/// Mock backbone with a small grid so gradient probes stay fast. Moderate
/// logit scales keep the softmax away from saturation, where double-precision
/// finite differences stop resolving anything.
inline std::unique_ptr<camseg::MockVit> small_backbone(
    uint64_t seed, camseg::PoolingMode pooling = camseg::PoolingMode::avg_token,
    double logit_scale = 100.0) {
    camseg::BackboneConfig config;
    config.weights = "mock:" + std::to_string(seed);
    config.pooling_mode = pooling;
    config.logit_scale = logit_scale;
    camseg::MockVitParams params;
    params.patch = 8;
    params.d_model = 12;
    params.heads = 2;
    params.mlp_hidden = 24;
    params.embed = 12;
    params.base_grid = 4;
    return std::make_unique<camseg::MockVit>(seed, config, params);
}

/// Unique scratch directory under the system temp root.
inline std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("camseg_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures

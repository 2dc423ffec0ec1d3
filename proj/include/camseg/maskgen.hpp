#pragma once

// Converts refined CAMs into final pseudo masks: implicit background channel,
// dense CRF post-processing, per-pixel confidence and ignore-region stamping.

#include "camseg/camgen.hpp"
#include "camseg/densecrf.hpp"

namespace camseg {

/// Per-pixel class probabilities. Channel 0 is the background, channels
/// 1..K the foreground classes in `channel_ids` order. Every pixel sums to 1.
struct ProbabilityStack {
    std::vector<int> channel_ids;  // foreground class ids, size K
    std::vector<MapD> values;      // size K+1, values[0] = background

    int rows() const { return values.empty() ? 0 : values.front().rows; }
    int cols() const { return values.empty() ? 0 : values.front().cols; }
    int num_foreground() const { return int(channel_ids.size()); }
};

/// Integer label map plus per-pixel confidence. Labels: 0 background,
/// 1..C foreground class id + 1, 255 ignore.
struct PseudoMask {
    LabelImage labels;
    MapD confidence;
};

constexpr uint8_t kIgnoreLabel = 255;

/// Background score is 1 - max over class activations; the augmented stack is
/// renormalized per pixel to sum 1.
inline ProbabilityStack to_probabilities(const CamStack& cams) {
    if (!cams.normalized) throw std::invalid_argument("to_probabilities: stack must be normalized");
    if (cams.maps.empty()) throw std::invalid_argument("to_probabilities: empty stack");
    const int h = cams.maps.front().rows, w = cams.maps.front().cols;
    ProbabilityStack stack;
    stack.channel_ids = cams.class_ids;
    stack.values.assign(cams.maps.size() + 1, MapD(h, w));
    for (size_t c = 0; c < cams.maps.size(); ++c) stack.values[c + 1] = cams.maps[c];
    for (int i = 0; i < h * w; ++i) {
        double mx = 0.0;
        for (size_t c = 1; c < stack.values.size(); ++c) mx = std::max(mx, stack.values[c].data[i]);
        stack.values[0].data[i] = 1.0 - mx;
        double sum = 0.0;
        for (const auto& m : stack.values) sum += m.data[i];
        for (auto& m : stack.values) m.data[i] /= sum;
    }
    return stack;
}

struct CrfParams {
    int iterations = 10;
    double smooth_weight = 3.0;
    double smooth_sigma = 3.0;
    double appear_weight = 4.0;
    double appear_sigma_spatial = 121.0;
    double appear_sigma_color = 5.0;  // on the 0..255 color scale
};

/// Dense CRF over the full image: a spatial smoothness kernel plus a joint
/// spatial/color appearance kernel. Unaries are the negative log of the
/// incoming probabilities clamped to 1e-8.
inline ProbabilityStack dense_crf(const Image& image, const ProbabilityStack& probs,
                                  const CrfParams& params) {
    const int h = probs.rows(), w = probs.cols();
    if (image.rows != h || image.cols != w)
        throw std::invalid_argument("dense_crf: image and probability shapes differ");
    const int n = h * w, labels = int(probs.values.size());

    Eigen::MatrixXd unary(n, labels);
    for (int l = 0; l < labels; ++l)
        for (int i = 0; i < n; ++i)
            unary(i, l) = -std::log(std::max(probs.values[l].data[i], 1e-8));

    std::vector<GaussianKernel> kernels;
    if (params.smooth_weight != 0.0) {
        GaussianKernel k;
        k.weight = params.smooth_weight;
        k.features.resize(n, 2);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                k.features(r * w + c, 0) = c / params.smooth_sigma;
                k.features(r * w + c, 1) = r / params.smooth_sigma;
            }
        kernels.push_back(std::move(k));
    }
    if (params.appear_weight != 0.0) {
        GaussianKernel k;
        k.weight = params.appear_weight;
        k.features.resize(n, 5);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const int i = r * w + c;
                k.features(i, 0) = c / params.appear_sigma_spatial;
                k.features(i, 1) = r / params.appear_sigma_spatial;
                for (int ch = 0; ch < 3; ++ch)
                    k.features(i, 2 + ch) = image.at(r, c, ch) * 255.0 / params.appear_sigma_color;
            }
        kernels.push_back(std::move(k));
    }

    Eigen::MatrixXd q = crf_mean_field(unary, kernels, params.iterations);

    ProbabilityStack out;
    out.channel_ids = probs.channel_ids;
    out.values.assign(labels, MapD(h, w));
    for (int l = 0; l < labels; ++l)
        for (int i = 0; i < n; ++i) out.values[l].data[i] = q(i, l);
    return out;
}

/// Conf(i,j) = max(1 - m, m) with m the strongest foreground probability.
/// Never below 0.5 by construction.
inline MapD confidence_map(const ProbabilityStack& probs) {
    if (probs.values.size() < 2)
        throw std::invalid_argument("confidence_map: stack has no foreground channels");
    const int h = probs.rows(), w = probs.cols();
    MapD conf(h, w);
    for (int i = 0; i < h * w; ++i) {
        double m = 0.0;
        for (size_t c = 1; c < probs.values.size(); ++c) m = std::max(m, probs.values[c].data[i]);
        conf.data[i] = std::max(1.0 - m, m);
    }
    return conf;
}

/// Argmax labels with low-confidence pixels stamped to the ignore index.
inline PseudoMask finalize(const ProbabilityStack& probs, double mu) {
    if (mu < 0.5 || mu > 1.0) throw std::invalid_argument("finalize: mu must be in [0.5, 1]");
    const int h = probs.rows(), w = probs.cols();
    PseudoMask mask;
    mask.labels = LabelImage(h, w);
    mask.confidence = confidence_map(probs);
    for (int i = 0; i < h * w; ++i) {
        int best = 0;
        double best_p = probs.values[0].data[i];
        for (size_t c = 1; c < probs.values.size(); ++c) {
            if (probs.values[c].data[i] > best_p) {
                best_p = probs.values[c].data[i];
                best = int(c);
            }
        }
        uint8_t label = best == 0 ? 0 : uint8_t(probs.channel_ids[best - 1] + 1);
        if (mask.confidence.data[i] < mu) label = kIgnoreLabel;
        mask.labels.labels[i] = label;
    }
    return mask;
}

}  // namespace camseg

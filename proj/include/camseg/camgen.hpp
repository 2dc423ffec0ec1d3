#pragma once

// Softmax GradCAM: class activation maps driven by the gradient of the
// post-softmax class probability, with a background category set joined into
// the softmax so class-correlated background pixels suppress the targets.

#include "camseg/backbone.hpp"
#include "camseg/textbank.hpp"

namespace camseg {

enum class CamResolution { grid, image };

/// Per-class spatial activation maps for one image.
struct CamStack {
    std::vector<int> class_ids;
    std::vector<MapD> maps;
    bool normalized = false;
    CamResolution resolution = CamResolution::grid;

    int num_classes() const { return int(maps.size()); }
};

struct CamGenOptions {
    FusionMode fusion = FusionMode::sentence;
    // Differentiates the raw logit instead of the softmax probability.
    // Only useful for ablation runs; the softmax is what makes classes
    // mutually exclusive.
    bool use_softmax = true;
};

namespace detail {

/// Turns the gradient of one class score into its activation map:
/// channel weights are the spatial means of the gradient, the map is the
/// ReLU of the weighted channel sum.
inline MapD gradcam_map(const FeatureMap& features, const FeatureMap& grad) {
    const int z = features.positions(), ch = features.channels();
    Eigen::VectorXd w = grad.values.colwise().sum().transpose() / double(z);
    Eigen::VectorXd cam = features.values * w;
    MapD map(features.grid_h, features.grid_w);
    for (int i = 0; i < z; ++i) map.data[i] = std::max(0.0, cam[i]);
    return map;
}

struct TextSetup {
    Eigen::MatrixXd embeddings;                        // (K+M) x e, one row per softmax slot
    std::vector<Eigen::MatrixXd> per_synonym;          // only filled in cam mode, per target
};

inline TextSetup prepare_texts(const ClassVocabulary& vocab, const std::vector<int>& target_ids,
                               const Backbone& backbone, FusionMode fusion) {
    TextSetup setup;
    const int k = int(target_ids.size());

    // Per-class sentence-level fusion gives the softmax slot for each class;
    // feature mode averages synonym embeddings instead, cam mode additionally
    // keeps every synonym embedding around for per-synonym runs.
    auto fused_sentences = build_sentences(vocab, FusionMode::sentence, target_ids);
    std::vector<std::string> all;
    for (auto& [id, sents] : fused_sentences) all.push_back(sents.front());
    auto bg = background_sentences(vocab);
    all.insert(all.end(), bg.begin(), bg.end());
    Eigen::MatrixXd base = backbone.encode_texts(all);

    setup.embeddings = base;
    if (fusion == FusionMode::feature || fusion == FusionMode::cam) {
        auto per_syn_sentences = build_sentences(vocab, fusion, target_ids);
        setup.per_synonym.resize(k);
        for (int c = 0; c < k; ++c) {
            setup.per_synonym[c] = backbone.encode_texts(per_syn_sentences[c].second);
            if (fusion == FusionMode::feature)
                setup.embeddings.row(c) = fuse_class_embeddings(setup.per_synonym[c]).transpose();
        }
        if (fusion == FusionMode::feature) setup.per_synonym.clear();
    }
    return setup;
}

}  // namespace detail

/// Runs one image through the backbone and produces raw grid-resolution CAMs
/// for the K target classes. The softmax spans the K targets plus the M
/// background categories; background classes shape the competition but get no
/// CAM of their own.
inline CamStack softmax_gradcam(const Image& image, const std::vector<int>& target_ids,
                                const ClassVocabulary& vocab, const Backbone& backbone,
                                const CamGenOptions& options = {},
                                ForwardPass* forward_out = nullptr) {
    if (target_ids.empty()) throw std::invalid_argument("softmax_gradcam: empty target list");
    for (int id : target_ids) vocab.entry(id);  // throws on unknown ids

    detail::TextSetup texts = detail::prepare_texts(vocab, target_ids, backbone, options.fusion);
    ForwardPass fp = backbone.forward(image);
    const int k = int(target_ids.size());

    CamStack stack;
    stack.class_ids = target_ids;
    stack.resolution = CamResolution::grid;
    stack.maps.reserve(k);

    if (options.fusion == FusionMode::cam) {
        // one GradCAM run per synonym, slot c swapped to that synonym,
        // per-class maps averaged afterwards
        for (int c = 0; c < k; ++c) {
            std::vector<MapD> synonym_maps;
            for (int s = 0; s < texts.per_synonym[c].rows(); ++s) {
                Eigen::MatrixXd embs = texts.embeddings;
                embs.row(c) = texts.per_synonym[c].row(s);
                ClassScores scores = class_logits(fp.pooled, embs, backbone.logit_scale());
                FeatureMap grad = options.use_softmax
                                      ? backbone.grad_wrt_features(fp, embs, scores, c)
                                      : backbone.grad_wrt_features_logit(fp, embs, c);
                synonym_maps.push_back(detail::gradcam_map(fp.features, grad));
            }
            stack.maps.push_back(fuse_class_cams(synonym_maps));
        }
    } else {
        ClassScores scores = class_logits(fp.pooled, texts.embeddings, backbone.logit_scale());
        for (int c = 0; c < k; ++c) {
            FeatureMap grad = options.use_softmax
                                  ? backbone.grad_wrt_features(fp, texts.embeddings, scores, c)
                                  : backbone.grad_wrt_features_logit(fp, texts.embeddings, c);
            stack.maps.push_back(detail::gradcam_map(fp.features, grad));
        }
    }
    if (forward_out) *forward_out = std::move(fp);
    return stack;
}

/// Per-class min-max normalization to [0, 1] with the minimum clamped at 0
/// (maps are non-negative already); an all-zero map stays all-zero.
inline CamStack normalize(CamStack cams) {
    for (auto& m : cams.maps) {
        const double mx = max_value(m);
        if (mx > 0)
            for (auto& v : m.data) v /= mx;
    }
    cams.normalized = true;
    return cams;
}

/// Bilinear upsampling of every class map to image resolution.
inline CamStack upsample_to_image(const CamStack& cams, int image_h, int image_w) {
    if (cams.resolution != CamResolution::grid)
        throw std::invalid_argument("upsample_to_image: stack already at image resolution");
    for (const auto& m : cams.maps)
        if (image_h < m.rows || image_w < m.cols)
            throw std::invalid_argument("upsample_to_image: target smaller than grid");
    CamStack out;
    out.class_ids = cams.class_ids;
    out.normalized = cams.normalized;
    out.resolution = CamResolution::image;
    out.maps.reserve(cams.maps.size());
    for (const auto& m : cams.maps) out.maps.push_back(resize_bilinear(m, image_h, image_w));
    return out;
}

}  // namespace camseg

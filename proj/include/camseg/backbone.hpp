#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "camseg/image.hpp"
#include "camseg/tensor.hpp"

namespace camseg {

/// Patch-token feature map at the gradient tap point. `values` holds one row
/// per spatial position (row-major over the grid), one column per channel.
struct FeatureMap {
    int grid_h = 0;
    int grid_w = 0;
    Eigen::MatrixXd values;  // (grid_h*grid_w) x channels

    int positions() const { return grid_h * grid_w; }
    int channels() const { return int(values.cols()); }
    double at(int i, int j, int k) const { return values(i * grid_w + j, k); }
};

/// Patch-to-patch attention of one block, head-averaged, class token removed
/// and rows renormalized to sum 1.
struct AttentionWeights {
    Eigen::MatrixXd values;  // hw x hw, row-stochastic
    int source_block = -1;
};

struct ClassScores {
    Eigen::VectorXd logits;
    Eigen::VectorXd probabilities;
    std::vector<int> class_ids;
    double logit_scale = 100.0;

    int count() const { return int(logits.size()); }
};

enum class PoolingMode { avg_token, cls_token };

/// Per-image forward results. `cache` keeps whatever the implementation needs
/// to answer gradient queries for this image later.
struct ForwardPass {
    FeatureMap features;
    AttentionWeights attention;
    Eigen::VectorXd pooled;  // unit-normalized embedding
    std::shared_ptr<const void> cache;
};

/// Cosine-similarity classifier head shared by all backbones: logits are
/// logit_scale * cos(pooled, text_c), probabilities their softmax.
inline ClassScores class_logits(const Eigen::VectorXd& pooled, const Eigen::MatrixXd& texts,
                                double logit_scale, std::vector<int> class_ids = {}) {
    if (texts.rows() == 0) throw std::invalid_argument("class_logits: no text embeddings");
    if (texts.cols() != pooled.size())
        throw std::invalid_argument("class_logits: embedding dimension mismatch");
    const int n = int(texts.rows());
    Eigen::VectorXd logits(n);
    const double pn = pooled.norm();
    for (int c = 0; c < n; ++c) {
        const double tn = texts.row(c).norm();
        logits[c] = logit_scale * pooled.dot(texts.row(c)) / (pn * tn);
    }
    // softmax with max-shift for stability
    const double m = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - m).exp();
    p /= p.sum();
    ClassScores s;
    s.logits = std::move(logits);
    s.probabilities = std::move(p);
    s.logit_scale = logit_scale;
    if (class_ids.empty()) {
        s.class_ids.resize(n);
        for (int c = 0; c < n; ++c) s.class_ids[c] = c;
    } else {
        if (int(class_ids.size()) != n)
            throw std::invalid_argument("class_logits: class_ids size mismatch");
        s.class_ids = std::move(class_ids);
    }
    return s;
}

/// Row i of the softmax Jacobian: d s_i / d Y_j = s_i (delta_ij - s_j).
inline Eigen::VectorXd softmax_jacobian_row(const Eigen::VectorXd& probs, int i) {
    Eigen::VectorXd row = -probs[i] * probs;
    row[i] += probs[i];
    return row;
}

struct BackboneConfig {
    std::string weights = "mock:1";
    PoolingMode pooling_mode = PoolingMode::avg_token;
    double logit_scale = 100.0;
    int attention_block = -1;  // -1 = last
};

/// Minimal capability set the pipeline needs from a contrastive
/// vision-language model. Implementations are immutable after construction
/// and safe for concurrent read-only use.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual int patch_size() const = 0;
    virtual int channels() const = 0;
    virtual int embed_dim() const = 0;
    virtual PoolingMode pooling_mode() const = 0;
    virtual double logit_scale() const = 0;

    /// One unit-normalized row per sentence.
    virtual Eigen::MatrixXd encode_texts(const std::vector<std::string>& sentences) const = 0;

    virtual ForwardPass forward(const Image& image) const = 0;

    /// Gradient of the post-softmax probability of class `class_index` with
    /// respect to every feature-map entry.
    virtual FeatureMap grad_wrt_features(const ForwardPass& fp, const Eigen::MatrixXd& texts,
                                         const ClassScores& scores, int class_index) const = 0;

    /// Gradient of the raw logit (pre-softmax) of class `class_index`.
    virtual FeatureMap grad_wrt_features_logit(const ForwardPass& fp, const Eigen::MatrixXd& texts,
                                               int class_index) const = 0;

    /// Recompute class scores from a (possibly perturbed) feature map using
    /// the cached per-image state. This is what finite-difference probes use.
    virtual ClassScores scores_from_features(const ForwardPass& fp,
                                             const Eigen::MatrixXd& feature_values,
                                             const Eigen::MatrixXd& texts) const = 0;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config);

}  // namespace camseg

#pragma once

// Deterministic stand-in for a pretrained contrastive vision-language model.
// A small pre-LN vision transformer with seeded random weights provides every
// capability the pipeline needs (feature tap, attention, pooled embedding,
// analytic feature gradients) without downloaded weights. All arithmetic is
// double precision and seeded through splitmix64, so outputs are bit-identical
// across runs and platforms.

#include <cstring>
#include <fstream>
#include <unordered_map>

#include "camseg/backbone.hpp"

namespace camseg {

struct MockVitParams {
    int patch = 16;
    int d_model = 16;
    int heads = 2;
    int mlp_hidden = 32;
    int embed = 16;
    int blocks = 2;
    int base_grid = 8;  // native positional-embedding grid, interpolated per image
};

namespace detail {

struct LnParams {
    Eigen::VectorXd gamma, beta;
};

struct BlockParams {
    LnParams ln1, ln2;
    Eigen::MatrixXd wq, wk, wv, wo;  // d x d
    Eigen::VectorXd bq, bk, bv, bo;
    Eigen::MatrixXd w1, w2;  // m x d, d x m
    Eigen::VectorXd b1, b2;
};

struct VitWeights {
    Eigen::MatrixXd w_patch;  // d x 3p^2
    Eigen::VectorXd b_patch;
    Eigen::VectorXd cls_token;
    Eigen::VectorXd pos_cls;
    Eigen::MatrixXd pos_grid;  // base^2 x d
    std::vector<BlockParams> blocks;
    LnParams ln_post;
    Eigen::MatrixXd w_proj;  // e x d
};

constexpr double kLnEps = 1e-5;

struct LnCache {
    Eigen::MatrixXd xhat;     // normalized pre-scale input
    Eigen::VectorXd inv_std;  // per row
};

inline Eigen::MatrixXd ln_forward(const LnParams& p, const Eigen::MatrixXd& x, LnCache& cache) {
    const int n = int(x.rows()), d = int(x.cols());
    cache.xhat.resize(n, d);
    cache.inv_std.resize(n);
    Eigen::MatrixXd y(n, d);
    for (int r = 0; r < n; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std[r] = inv;
        cache.xhat.row(r) = ((x.row(r).array() - mu) * inv).matrix();
        y.row(r) = cache.xhat.row(r).cwiseProduct(p.gamma.transpose()) + p.beta.transpose();
    }
    return y;
}

inline Eigen::MatrixXd ln_backward(const LnParams& p, const LnCache& cache,
                                   const Eigen::MatrixXd& dy) {
    const int n = int(dy.rows()), d = int(dy.cols());
    Eigen::MatrixXd dx(n, d);
    for (int r = 0; r < n; ++r) {
        Eigen::RowVectorXd g = dy.row(r).cwiseProduct(p.gamma.transpose());
        const double mg = g.mean();
        const double mgx = g.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) =
            (cache.inv_std[r] * (g.array() - mg - cache.xhat.row(r).array() * mgx)).matrix();
    }
    return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return cdf + x * pdf;
}

struct BlockCache {
    LnCache ln1c, ln2c;
    Eigen::MatrixXd q, k, v;            // N x d
    std::vector<Eigen::MatrixXd> attn;  // per head, N x N row-stochastic
    Eigen::MatrixXd mlp_pre;            // N x m
};

// Everything needed to answer gradient queries and feature-perturbation
// probes for one image.
struct VitCache {
    int gh = 0, gw = 0;
    Eigen::MatrixXd x_tap;           // tokens entering the tapped block, N x d
    std::vector<BlockCache> blocks;  // tapped block onward
    LnCache lnpc;
    Eigen::VectorXd v_raw;  // pooled embedding before normalization
};

}  // namespace detail

/// Lookup table mapping exact sentences to precomputed text embeddings,
/// used when the vision weights come from a file.
class TextTable {
public:
    void insert(const std::string& sentence, const Eigen::VectorXd& emb) { table_[sentence] = emb; }
    bool empty() const { return table_.empty(); }

    const Eigen::VectorXd* find(const std::string& sentence) const {
        auto it = table_.find(sentence);
        return it == table_.end() ? nullptr : &it->second;
    }

private:
    std::unordered_map<std::string, Eigen::VectorXd> table_;
};

class MockVit final : public Backbone {
public:
    MockVit(uint64_t seed, const BackboneConfig& config, MockVitParams params = {})
        : seed_(seed), config_(config), params_(params) {
        init_weights(seed);
        resolve_indices();
    }

    MockVit(const std::string& weights_path, const BackboneConfig& config)
        : seed_(0), config_(config) {
        load_weights(weights_path);
        std::ifstream texts(weights_path + ".texts", std::ios::binary);
        if (texts.good()) load_text_table(texts);
        resolve_indices();
    }

    int patch_size() const override { return params_.patch; }
    int channels() const override { return params_.d_model; }
    int embed_dim() const override { return params_.embed; }
    PoolingMode pooling_mode() const override { return config_.pooling_mode; }
    double logit_scale() const override { return config_.logit_scale; }
    uint64_t seed() const { return seed_; }
    const MockVitParams& arch() const { return params_; }

    /// Hash-to-vector rule (reproducible by construction):
    ///   state = fnv1a64(sentence) XOR (0x9E3779B97F4A7C15 * (seed + 1))
    ///   x[i]  = i-th splitmix64 draw from `state`, mapped to [-1, 1)
    ///   row   = x / |x|
    /// When a text table was loaded alongside file-based weights, sentences
    /// are resolved through it instead.
    Eigen::MatrixXd encode_texts(const std::vector<std::string>& sentences) const override {
        if (sentences.empty()) throw std::invalid_argument("encode_texts: empty sentence list");
        Eigen::MatrixXd out(sentences.size(), params_.embed);
        for (size_t s = 0; s < sentences.size(); ++s) {
            if (!text_table_.empty()) {
                const Eigen::VectorXd* emb = text_table_.find(sentences[s]);
                if (!emb)
                    throw std::runtime_error("encode_texts: sentence missing from text table: \"" +
                                             sentences[s] + "\"");
                out.row(s) = emb->transpose();
                continue;
            }
            SplitMix64 rng(fnv1a64(sentences[s]) ^ (0x9E3779B97F4A7C15ULL * (seed_ + 1)));
            Eigen::VectorXd x(params_.embed);
            for (int i = 0; i < params_.embed; ++i) x[i] = rng.uniform_pm1();
            const double n = x.norm();
            if (n > 0) x /= n;
            out.row(s) = x.transpose();
        }
        return out;
    }

    ForwardPass forward(const Image& image) const override {
        if (image.rows < params_.patch || image.cols < params_.patch)
            throw std::invalid_argument("forward: image smaller than one patch");
        auto cache = std::make_shared<detail::VitCache>();

        Eigen::MatrixXd x = embed_image(image, cache->gh, cache->gw);
        Eigen::MatrixXd attn_avg;
        for (int b = 0; b < feature_tap_; ++b) {
            Eigen::MatrixXd* want = (b == attention_block_) ? &attn_avg : nullptr;
            x = block_forward(w_.blocks[b], x, nullptr, want);
        }
        cache->x_tap = std::move(x);
        Eigen::VectorXd pooled = tail_forward(cache->x_tap, cache.get(), &attn_avg);

        // class token removed, rows renormalized
        const int hw = cache->gh * cache->gw;
        Eigen::MatrixXd attn = attn_avg.bottomRightCorner(hw, hw);
        for (int r = 0; r < hw; ++r) attn.row(r) /= attn.row(r).sum();

        ForwardPass fp;
        fp.features.grid_h = cache->gh;
        fp.features.grid_w = cache->gw;
        fp.features.values = cache->x_tap.bottomRows(hw);
        fp.attention.values = std::move(attn);
        fp.attention.source_block = attention_block_;
        fp.pooled = std::move(pooled);
        fp.cache = std::move(cache);
        return fp;
    }

    FeatureMap grad_wrt_features(const ForwardPass& fp, const Eigen::MatrixXd& texts,
                                 const ClassScores& scores, int class_index) const override {
        if (class_index < 0 || class_index >= scores.count())
            throw std::invalid_argument("grad_wrt_features: class index out of range");
        return backward_logit_grads(fp, texts,
                                    softmax_jacobian_row(scores.probabilities, class_index));
    }

    FeatureMap grad_wrt_features_logit(const ForwardPass& fp, const Eigen::MatrixXd& texts,
                                       int class_index) const override {
        if (class_index < 0 || class_index >= texts.rows())
            throw std::invalid_argument("grad_wrt_features_logit: class index out of range");
        Eigen::VectorXd gy = Eigen::VectorXd::Zero(texts.rows());
        gy[class_index] = 1.0;
        return backward_logit_grads(fp, texts, gy);
    }

    ClassScores scores_from_features(const ForwardPass& fp, const Eigen::MatrixXd& feature_values,
                                     const Eigen::MatrixXd& texts) const override {
        const auto& cache = vit_cache(fp);
        if (feature_values.rows() != cache.gh * cache.gw ||
            feature_values.cols() != params_.d_model)
            throw std::invalid_argument("scores_from_features: feature shape mismatch");
        Eigen::MatrixXd x = cache.x_tap;
        x.bottomRows(feature_values.rows()) = feature_values;
        Eigen::VectorXd pooled = tail_forward(x, nullptr, nullptr);
        return class_logits(pooled, texts, config_.logit_scale);
    }

    void save_weights(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("save_weights: cannot open " + path);
        f.write("VITW", 4);
        const uint8_t version = 1;
        f.write(reinterpret_cast<const char*>(&version), 1);
        const int32_t dims[7] = {params_.patch, params_.d_model, params_.heads,
                                 params_.mlp_hidden, params_.embed, params_.blocks,
                                 params_.base_grid};
        f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        auto put = [&f](const Eigen::MatrixXd& m) {
            f.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
        };
        auto putv = [&f](const Eigen::VectorXd& v) {
            f.write(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
        };
        put(w_.w_patch);
        putv(w_.b_patch);
        putv(w_.cls_token);
        putv(w_.pos_cls);
        put(w_.pos_grid);
        for (const auto& b : w_.blocks) {
            putv(b.ln1.gamma); putv(b.ln1.beta);
            put(b.wq); putv(b.bq);
            put(b.wk); putv(b.bk);
            put(b.wv); putv(b.bv);
            put(b.wo); putv(b.bo);
            putv(b.ln2.gamma); putv(b.ln2.beta);
            put(b.w1); putv(b.b1);
            put(b.w2); putv(b.b2);
        }
        putv(w_.ln_post.gamma);
        putv(w_.ln_post.beta);
        put(w_.w_proj);
        if (!f) throw std::runtime_error("save_weights: write failed for " + path);
    }

private:
    uint64_t seed_;
    BackboneConfig config_;
    MockVitParams params_;
    detail::VitWeights w_;
    TextTable text_table_;
    int feature_tap_ = 0;      // block whose input is the feature map
    int attention_block_ = 0;  // block whose attention is exposed

    static const detail::VitCache& vit_cache(const ForwardPass& fp) {
        if (!fp.cache) throw std::invalid_argument("forward pass has no cache");
        return *static_cast<const detail::VitCache*>(fp.cache.get());
    }

    void resolve_indices() {
        feature_tap_ = params_.blocks - 1;
        attention_block_ = config_.attention_block < 0 ? params_.blocks + config_.attention_block
                                                       : config_.attention_block;
        if (attention_block_ < 0 || attention_block_ >= params_.blocks)
            throw config_error("backbone.attention_block out of range");
    }

    void init_weights(uint64_t seed) {
        SplitMix64 rng(seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
        auto mat = [&rng](int r, int c, double scale) {
            Eigen::MatrixXd m(r, c);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) m(i, j) = rng.gaussian() * scale;
            return m;
        };
        auto vec = [&rng](int n, double scale) {
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i) v[i] = rng.gaussian() * scale;
            return v;
        };
        const int d = params_.d_model, m = params_.mlp_hidden, e = params_.embed;
        const int pv = 3 * params_.patch * params_.patch;
        w_.w_patch = mat(d, pv, 1.0 / std::sqrt(double(pv)));
        w_.b_patch = vec(d, 0.05);
        w_.cls_token = vec(d, 0.5);
        w_.pos_cls = vec(d, 0.5);
        w_.pos_grid = mat(params_.base_grid * params_.base_grid, d, 0.5);
        w_.blocks.resize(params_.blocks);
        const double ws = 1.0 / std::sqrt(double(d));
        for (auto& b : w_.blocks) {
            b.ln1.gamma = Eigen::VectorXd::Ones(d);
            b.ln1.beta = Eigen::VectorXd::Zero(d);
            b.wq = mat(d, d, ws); b.bq = vec(d, 0.05);
            b.wk = mat(d, d, ws); b.bk = vec(d, 0.05);
            b.wv = mat(d, d, ws); b.bv = vec(d, 0.05);
            b.wo = mat(d, d, ws); b.bo = vec(d, 0.05);
            b.ln2.gamma = Eigen::VectorXd::Ones(d);
            b.ln2.beta = Eigen::VectorXd::Zero(d);
            b.w1 = mat(m, d, ws); b.b1 = vec(m, 0.05);
            b.w2 = mat(d, m, 1.0 / std::sqrt(double(m))); b.b2 = vec(d, 0.05);
        }
        w_.ln_post.gamma = Eigen::VectorXd::Ones(d);
        w_.ln_post.beta = Eigen::VectorXd::Zero(d);
        w_.w_proj = mat(e, d, ws);
    }

    // --- forward ---------------------------------------------------------

    Eigen::MatrixXd embed_image(const Image& image, int& gh, int& gw) const {
        const int p = params_.patch;
        auto nearest_multiple = [p](int v) {
            const int m = std::max<int>(1, int(std::llround(double(v) / p)));
            return m * p;
        };
        const int th = nearest_multiple(image.rows), tw = nearest_multiple(image.cols);
        const Image* src = &image;
        Image resized;
        if (th != image.rows || tw != image.cols) {
            resized = resize_bilinear(image, th, tw);
            src = &resized;
        }
        gh = th / p;
        gw = tw / p;
        const int n_patches = gh * gw, d = params_.d_model;

        Eigen::MatrixXd tokens(1 + n_patches, d);
        tokens.row(0) = (w_.cls_token + w_.pos_cls).transpose();

        // interpolate positional embeddings from the native grid
        Eigen::MatrixXd pos(n_patches, d);
        if (gh == params_.base_grid && gw == params_.base_grid) {
            pos = w_.pos_grid;
        } else {
            for (int k = 0; k < d; ++k) {
                MapD plane(params_.base_grid, params_.base_grid);
                for (int i = 0; i < params_.base_grid; ++i)
                    for (int j = 0; j < params_.base_grid; ++j)
                        plane.at(i, j) = w_.pos_grid(i * params_.base_grid + j, k);
                MapD r = resize_bilinear(plane, gh, gw);
                for (int i = 0; i < gh; ++i)
                    for (int j = 0; j < gw; ++j) pos(i * gw + j, k) = r.at(i, j);
            }
        }

        Eigen::VectorXd patch_vec(3 * p * p);
        for (int gi = 0; gi < gh; ++gi) {
            for (int gj = 0; gj < gw; ++gj) {
                int idx = 0;
                for (int pr = 0; pr < p; ++pr)
                    for (int pc = 0; pc < p; ++pc)
                        for (int ch = 0; ch < 3; ++ch)
                            patch_vec[idx++] = src->at(gi * p + pr, gj * p + pc, ch);
                tokens.row(1 + gi * gw + gj) =
                    (w_.w_patch * patch_vec + w_.b_patch).transpose() + pos.row(gi * gw + gj);
            }
        }
        return tokens;
    }

    Eigen::MatrixXd block_forward(const detail::BlockParams& bp, const Eigen::MatrixXd& x,
                                  detail::BlockCache* cache,
                                  Eigen::MatrixXd* attn_avg_out = nullptr) const {
        const int n = int(x.rows()), d = params_.d_model, nh = params_.heads, dh = d / nh;
        detail::BlockCache local;
        detail::BlockCache& c = cache ? *cache : local;

        Eigen::MatrixXd u = ln_forward(bp.ln1, x, c.ln1c);
        c.q = u * bp.wq.transpose();
        c.q.rowwise() += bp.bq.transpose();
        c.k = u * bp.wk.transpose();
        c.k.rowwise() += bp.bk.transpose();
        c.v = u * bp.wv.transpose();
        c.v.rowwise() += bp.bv.transpose();

        const double inv_sqrt = 1.0 / std::sqrt(double(dh));
        c.attn.assign(nh, Eigen::MatrixXd());
        Eigen::MatrixXd hcat(n, d);
        for (int a = 0; a < nh; ++a) {
            Eigen::MatrixXd s =
                c.q.middleCols(a * dh, dh) * c.k.middleCols(a * dh, dh).transpose() * inv_sqrt;
            Eigen::MatrixXd& pm = c.attn[a];
            pm.resize(n, n);
            for (int r = 0; r < n; ++r) {
                const double mx = s.row(r).maxCoeff();
                pm.row(r) = (s.row(r).array() - mx).exp().matrix();
                pm.row(r) /= pm.row(r).sum();
            }
            hcat.middleCols(a * dh, dh) = pm * c.v.middleCols(a * dh, dh);
        }
        if (attn_avg_out) {
            *attn_avg_out = c.attn[0];
            for (int a = 1; a < nh; ++a) *attn_avg_out += c.attn[a];
            *attn_avg_out /= double(nh);
        }

        Eigen::MatrixXd x1 = hcat * bp.wo.transpose();
        x1.rowwise() += bp.bo.transpose();
        x1 += x;

        Eigen::MatrixXd u2 = ln_forward(bp.ln2, x1, c.ln2c);
        c.mlp_pre = u2 * bp.w1.transpose();
        c.mlp_pre.rowwise() += bp.b1.transpose();
        Eigen::MatrixXd act = c.mlp_pre.unaryExpr([](double v) { return detail::gelu(v); });
        Eigen::MatrixXd x2 = act * bp.w2.transpose();
        x2.rowwise() += bp.b2.transpose();
        x2 += x1;
        return x2;
    }

    /// Runs the tapped block onward: remaining blocks, final layer norm,
    /// pooling, projection, normalization. Shared by the regular forward and
    /// by feature-perturbation probes.
    Eigen::VectorXd tail_forward(const Eigen::MatrixXd& x_tap, detail::VitCache* cache,
                                 Eigen::MatrixXd* attn_avg_out) const {
        Eigen::MatrixXd x = x_tap;
        if (cache) cache->blocks.resize(params_.blocks - feature_tap_);
        for (int b = feature_tap_; b < params_.blocks; ++b) {
            Eigen::MatrixXd* want = (attn_avg_out && b == attention_block_) ? attn_avg_out : nullptr;
            x = block_forward(w_.blocks[b], x, cache ? &cache->blocks[b - feature_tap_] : nullptr,
                              want);
        }
        detail::LnCache lnpc_local;
        detail::LnCache& lnpc = cache ? cache->lnpc : lnpc_local;
        Eigen::MatrixXd post = ln_forward(w_.ln_post, x, lnpc);
        Eigen::VectorXd pooled_pre;
        if (config_.pooling_mode == PoolingMode::avg_token)
            pooled_pre = post.bottomRows(post.rows() - 1).colwise().mean().transpose();
        else
            pooled_pre = post.row(0).transpose();
        Eigen::VectorXd v = w_.w_proj * pooled_pre;
        if (cache) cache->v_raw = v;
        const double n = v.norm();
        if (n > 0) v /= n;
        return v;
    }

    // --- backward ----------------------------------------------------------

    Eigen::MatrixXd block_backward(const detail::BlockParams& bp, const detail::BlockCache& c,
                                   const Eigen::MatrixXd& dx2) const {
        const int n = int(dx2.rows()), d = params_.d_model, nh = params_.heads, dh = d / nh;

        // MLP branch: x2 = x1 + gelu(ln2(x1) W1^T + b1) W2^T + b2
        Eigen::MatrixXd dact = dx2 * bp.w2;
        Eigen::MatrixXd dpre =
            dact.binaryExpr(c.mlp_pre, [](double g, double x) { return g * detail::gelu_grad(x); });
        Eigen::MatrixXd dx1 = dx2 + ln_backward(bp.ln2, c.ln2c, dpre * bp.w1);

        // attention branch: x1 = x0 + concat_heads(P_a V_a) Wo^T + bo
        Eigen::MatrixXd dhcat = dx1 * bp.wo;
        Eigen::MatrixXd dq(n, d), dk(n, d), dv(n, d);
        const double inv_sqrt = 1.0 / std::sqrt(double(dh));
        for (int a = 0; a < nh; ++a) {
            const Eigen::MatrixXd& pm = c.attn[a];
            Eigen::MatrixXd dhead = dhcat.middleCols(a * dh, dh);
            Eigen::MatrixXd dp = dhead * c.v.middleCols(a * dh, dh).transpose();
            dv.middleCols(a * dh, dh) = pm.transpose() * dhead;
            // softmax rows backward
            Eigen::MatrixXd ds(n, n);
            for (int r = 0; r < n; ++r) {
                const double dot = dp.row(r).dot(pm.row(r));
                ds.row(r) = (pm.row(r).array() * (dp.row(r).array() - dot)).matrix();
            }
            dq.middleCols(a * dh, dh) = ds * c.k.middleCols(a * dh, dh) * inv_sqrt;
            dk.middleCols(a * dh, dh) = ds.transpose() * c.q.middleCols(a * dh, dh) * inv_sqrt;
        }
        Eigen::MatrixXd du = dq * bp.wq + dk * bp.wk + dv * bp.wv;
        return dx1 + ln_backward(bp.ln1, c.ln1c, du);
    }

    /// Backpropagates d(target)/d(logits) through the classifier head, pooling
    /// and the tapped blocks down to the feature map.
    FeatureMap backward_logit_grads(const ForwardPass& fp, const Eigen::MatrixXd& texts,
                                    const Eigen::VectorXd& gy) const {
        const auto& cache = vit_cache(fp);
        if (texts.rows() != gy.size())
            throw std::invalid_argument("gradient: text/class count mismatch");
        if (texts.cols() != params_.embed)
            throw std::invalid_argument("gradient: embedding dimension mismatch");

        // logits: Y_c = scale * (v . t_c) / (|v| |t_c|)
        const Eigen::VectorXd& v = cache.v_raw;
        const double vn = v.norm();
        Eigen::VectorXd dv = Eigen::VectorXd::Zero(v.size());
        for (int c = 0; c < gy.size(); ++c) {
            if (gy[c] == 0.0) continue;
            const Eigen::VectorXd t = texts.row(c).transpose();
            const double tn = t.norm();
            dv += gy[c] * (config_.logit_scale / (vn * tn)) * (t - (v.dot(t) / (vn * vn)) * v);
        }

        Eigen::VectorXd dpooled_pre = w_.w_proj.transpose() * dv;
        const int n_tokens = int(cache.x_tap.rows());
        Eigen::MatrixXd dpost = Eigen::MatrixXd::Zero(n_tokens, params_.d_model);
        if (config_.pooling_mode == PoolingMode::avg_token) {
            const double inv = 1.0 / double(n_tokens - 1);
            for (int r = 1; r < n_tokens; ++r) dpost.row(r) = dpooled_pre.transpose() * inv;
        } else {
            dpost.row(0) = dpooled_pre.transpose();
        }

        Eigen::MatrixXd dx = ln_backward(w_.ln_post, cache.lnpc, dpost);
        for (int b = params_.blocks - 1; b >= feature_tap_; --b)
            dx = block_backward(w_.blocks[b], cache.blocks[b - feature_tap_], dx);

        FeatureMap grad;
        grad.grid_h = cache.gh;
        grad.grid_w = cache.gw;
        grad.values = dx.bottomRows(cache.gh * cache.gw);
        return grad;
    }

    // --- weight (de)serialization -----------------------------------------

    void load_weights(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw config_error("backbone.weights: cannot open " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, "VITW", 4) != 0)
            throw config_error("backbone.weights: " + path + " is not a weights file");
        uint8_t version = 0;
        f.read(reinterpret_cast<char*>(&version), 1);
        if (version != 1) throw config_error("backbone.weights: unsupported version");
        int32_t dims[7];
        f.read(reinterpret_cast<char*>(dims), sizeof(dims));
        params_.patch = dims[0];
        params_.d_model = dims[1];
        params_.heads = dims[2];
        params_.mlp_hidden = dims[3];
        params_.embed = dims[4];
        params_.blocks = dims[5];
        params_.base_grid = dims[6];
        if (params_.patch <= 0 || params_.d_model <= 0 || params_.heads <= 0 ||
            params_.d_model % params_.heads != 0 || params_.blocks <= 0 || params_.base_grid <= 0)
            throw config_error("backbone.weights: corrupt header in " + path);
        auto get = [&f, &path](Eigen::MatrixXd& m, int r, int c) {
            m.resize(r, c);
            f.read(reinterpret_cast<char*>(m.data()), sizeof(double) * m.size());
            if (!f) throw config_error("backbone.weights: truncated file " + path);
        };
        auto getv = [&f, &path](Eigen::VectorXd& v, int n) {
            v.resize(n);
            f.read(reinterpret_cast<char*>(v.data()), sizeof(double) * v.size());
            if (!f) throw config_error("backbone.weights: truncated file " + path);
        };
        const int d = params_.d_model, m = params_.mlp_hidden, e = params_.embed;
        get(w_.w_patch, d, 3 * params_.patch * params_.patch);
        getv(w_.b_patch, d);
        getv(w_.cls_token, d);
        getv(w_.pos_cls, d);
        get(w_.pos_grid, params_.base_grid * params_.base_grid, d);
        w_.blocks.resize(params_.blocks);
        for (auto& b : w_.blocks) {
            getv(b.ln1.gamma, d); getv(b.ln1.beta, d);
            get(b.wq, d, d); getv(b.bq, d);
            get(b.wk, d, d); getv(b.bk, d);
            get(b.wv, d, d); getv(b.bv, d);
            get(b.wo, d, d); getv(b.bo, d);
            getv(b.ln2.gamma, d); getv(b.ln2.beta, d);
            get(b.w1, m, d); getv(b.b1, m);
            get(b.w2, d, m); getv(b.b2, d);
        }
        getv(w_.ln_post.gamma, d);
        getv(w_.ln_post.beta, d);
        get(w_.w_proj, e, d);
    }

    void load_text_table(std::ifstream& f) {
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, "TXTB", 4) != 0) throw config_error("text table: bad magic");
        uint32_t count = 0;
        f.read(reinterpret_cast<char*>(&count), 4);
        for (uint32_t i = 0; i < count; ++i) {
            uint32_t len = 0;
            f.read(reinterpret_cast<char*>(&len), 4);
            std::string sentence(len, '\0');
            f.read(sentence.data(), len);
            Eigen::VectorXd emb(params_.embed);
            f.read(reinterpret_cast<char*>(emb.data()), sizeof(double) * params_.embed);
            if (!f) throw config_error("text table: truncated");
            text_table_.insert(sentence, emb);
        }
    }
};

/// Builds the backbone selected by `config.weights`: "mock:<seed>" for the
/// seeded mock, otherwise a path to a saved weights file.
inline std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config) {
    const std::string& spec = config.weights;
    if (spec.rfind("mock:", 0) == 0) {
        uint64_t seed = 0;
        try {
            seed = std::stoull(spec.substr(5));
        } catch (const std::exception&) {
            throw config_error("backbone.weights: bad mock seed in \"" + spec + "\"");
        }
        return std::make_unique<MockVit>(seed, config);
    }
    return std::make_unique<MockVit>(spec, config);
}

}  // namespace camseg

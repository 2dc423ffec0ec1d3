#pragma once

// Class-aware attention-based affinity. Attention from the backbone is
// symmetrized into a doubly stochastic affinity matrix via Sinkhorn
// normalization, then each class CAM is propagated through it, restricted to
// the bounding boxes of its own thresholded activations.

#include <array>
#include <deque>

#include "camseg/camgen.hpp"

namespace camseg {

struct SinkhornResult {
    Eigen::MatrixXd matrix;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> residual_history;  // residual after each full iteration
};

namespace detail {

inline double stochastic_residual(const Eigen::MatrixXd& m) {
    const double row = (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
    const double col = (m.colwise().sum().array() - 1.0).abs().maxCoeff();
    return std::max(row, col);
}

}  // namespace detail

/// Alternating row/column normalization until the matrix is doubly stochastic
/// within `tol` (max |row sum - 1| and |col sum - 1|) or `max_iters` is hit.
inline SinkhornResult sinkhorn(const Eigen::MatrixXd& w, double tol = 1e-4, int max_iters = 100) {
    if (w.rows() != w.cols() || w.rows() == 0)
        throw std::invalid_argument("sinkhorn: matrix must be square and non-empty");
    if ((w.array() < 0.0).any()) throw std::invalid_argument("sinkhorn: negative entries");
    for (int r = 0; r < w.rows(); ++r)
        if (w.row(r).sum() <= 0.0)
            throw degenerate_input_error("sinkhorn: zero row " + std::to_string(r));
    for (int c = 0; c < w.cols(); ++c)
        if (w.col(c).sum() <= 0.0)
            throw degenerate_input_error("sinkhorn: zero column " + std::to_string(c));

    SinkhornResult res;
    res.matrix = w;
    res.residual = detail::stochastic_residual(res.matrix);
    while (res.residual > tol && res.iterations < max_iters) {
        for (int r = 0; r < res.matrix.rows(); ++r) res.matrix.row(r) /= res.matrix.row(r).sum();
        for (int c = 0; c < res.matrix.cols(); ++c) res.matrix.col(c) /= res.matrix.col(c).sum();
        ++res.iterations;
        res.residual = detail::stochastic_residual(res.matrix);
        res.residual_history.push_back(res.residual);
    }
    return res;
}

/// Symmetric doubly stochastic patch-to-patch affinity: A = (D + D^T)/2 with
/// D = Sinkhorn(attention). Symmetry is exact by construction.
struct AffinityMatrix {
    Eigen::MatrixXd values;
    int sinkhorn_iters_used = 0;
    double residual = 0.0;

    int dim() const { return int(values.rows()); }
};

inline AffinityMatrix build_affinity(const AttentionWeights& attn, double tol = 1e-4,
                                     int max_iters = 100) {
    SinkhornResult ds = sinkhorn(attn.values, tol, max_iters);
    AffinityMatrix a;
    const int n = int(ds.matrix.rows());
    a.values.resize(n, n);
    for (int i = 0; i < n; ++i) {
        a.values(i, i) = ds.matrix(i, i);
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (ds.matrix(i, j) + ds.matrix(j, i));
            a.values(i, j) = v;
            a.values(j, i) = v;
        }
    }
    a.sinkhorn_iters_used = ds.iterations;
    a.residual = detail::stochastic_residual(a.values);
    return a;
}

/// Union of the minimal bounding boxes of the connected regions of a
/// thresholded CAM. `mask` is the flattened row-major box interior.
struct BoxMask {
    int class_id = -1;
    std::vector<uint8_t> mask;
    std::vector<std::array<int, 4>> boxes;  // row0, col0, row1, col1 inclusive
};

/// Thresholds a normalized CAM at `lambda`, labels connected regions under
/// 4-connectivity and covers each with its minimal axis-aligned rectangle.
/// When nothing passes the threshold the mask falls back to all-ones so the
/// class is refined rather than erased.
inline BoxMask box_mask(const MapD& cam, double lambda, int class_id = -1) {
    const int h = cam.rows, w = cam.cols;
    BoxMask out;
    out.class_id = class_id;
    out.mask.assign(size_t(h) * w, 0);

    std::vector<uint8_t> binary(size_t(h) * w, 0);
    bool any = false;
    for (size_t i = 0; i < binary.size(); ++i) {
        if (cam.data[i] >= lambda) {
            binary[i] = 1;
            any = true;
        }
    }
    if (!any) {
        out.mask.assign(size_t(h) * w, 1);
        return out;
    }

    std::vector<uint8_t> visited(size_t(h) * w, 0);
    std::deque<int> queue;
    for (int start = 0; start < h * w; ++start) {
        if (!binary[start] || visited[start]) continue;
        int r0 = h, c0 = w, r1 = -1, c1 = -1;
        visited[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const int cur = queue.front();
            queue.pop_front();
            const int r = cur / w, c = cur % w;
            r0 = std::min(r0, r); r1 = std::max(r1, r);
            c0 = std::min(c0, c); c1 = std::max(c1, c);
            const int neighbors[4] = {r > 0 ? cur - w : -1, r < h - 1 ? cur + w : -1,
                                      c > 0 ? cur - 1 : -1, c < w - 1 ? cur + 1 : -1};
            for (int nb : neighbors) {
                if (nb >= 0 && binary[nb] && !visited[nb]) {
                    visited[nb] = 1;
                    queue.push_back(nb);
                }
            }
        }
        out.boxes.push_back({r0, c0, r1, c1});
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) out.mask[size_t(r) * w + c] = 1;
    }
    return out;
}

/// Propagates each class map through the affinity: v <- A^t vec(M_c) by t
/// repeated matrix-vector products (A^t is never materialized), masked by the
/// class box mask, then re-normalized per class. Pass renormalize = false to
/// get the raw masked propagation (the doubly stochastic A conserves total
/// activation mass under an all-ones mask).
inline CamStack refine(const CamStack& cams, const AffinityMatrix& affinity, double lambda, int t,
                       bool renormalize = true) {
    if (!cams.normalized) throw std::invalid_argument("refine: stack must be normalized");
    if (t < 0) throw std::invalid_argument("refine: negative iteration count");
    CamStack out;
    out.class_ids = cams.class_ids;
    out.resolution = cams.resolution;
    for (const MapD& m : cams.maps) {
        const int hw = m.rows * m.cols;
        if (affinity.dim() != hw)
            throw std::invalid_argument("refine: affinity dimension does not match CAM grid");
        BoxMask bm = box_mask(m, lambda);
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(m.data.data(), hw);
        for (int i = 0; i < t; ++i) v = affinity.values * v;
        MapD refined(m.rows, m.cols);
        for (int i = 0; i < hw; ++i) refined.data[i] = bm.mask[i] ? v[i] : 0.0;
        if (renormalize) {
            const double mx = max_value(refined);
            if (mx > 0)
                for (auto& x : refined.data) x /= mx;
        }
        out.maps.push_back(std::move(refined));
    }
    out.normalized = renormalize;
    return out;
}

}  // namespace camseg

#pragma once

// Fully connected CRF with Gaussian pairwise potentials, solved by mean-field
// iteration. Message passing is Gaussian filtering on the permutohedral
// lattice with symmetric normalization:
//     message_i = n_i^{-1/2} * K * (n_j^{-1/2} q_j),   n = K * 1
// and the Potts update keeps the attraction form
//     Q_i(l) <- softmax_l( -U_i(l) + sum_m w_m message_i(l) )
// which matches the exclusion form up to a per-pixel constant that the
// softmax removes.

#include "camseg/permutohedral.hpp"

namespace camseg {

struct GaussianKernel {
    Eigen::MatrixXd features;  // n x d, already divided by sigma
    double weight = 1.0;
};

inline void softmax_rows_inplace(Eigen::MatrixXd& m) {
    for (int r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp().matrix();
        m.row(r) /= m.row(r).sum();
    }
}

/// Runs mean-field inference. `unary` is the negative log probability per
/// point and label (n x labels). Returns the marginals Q (rows on the
/// simplex). Kernels with zero weight are skipped entirely, so an all-zero
/// kernel set reduces to the unary softmax.
inline Eigen::MatrixXd crf_mean_field(const Eigen::MatrixXd& unary,
                                      const std::vector<GaussianKernel>& kernels,
                                      int iterations) {
    const int n = int(unary.rows());

    struct Active {
        PermutohedralLattice lattice;
        Eigen::VectorXd inv_sqrt_norm;
        double weight;
    };
    std::vector<Active> active;
    for (const auto& k : kernels) {
        if (k.weight == 0.0) continue;
        if (k.features.rows() != n)
            throw std::invalid_argument("crf_mean_field: kernel feature count mismatch");
        PermutohedralLattice lattice(k.features);
        Eigen::VectorXd norm = lattice.filter(Eigen::MatrixXd::Ones(n, 1)).col(0);
        Eigen::VectorXd inv = norm.unaryExpr(
            [](double v) { return v > 1e-20 ? 1.0 / std::sqrt(v) : 0.0; });
        active.push_back({std::move(lattice), std::move(inv), k.weight});
    }

    Eigen::MatrixXd q = -unary;
    softmax_rows_inplace(q);
    for (int it = 0; it < iterations; ++it) {
        Eigen::MatrixXd logits = -unary;
        for (const auto& a : active) {
            Eigen::MatrixXd scaled = a.inv_sqrt_norm.asDiagonal() * q;
            Eigen::MatrixXd filtered = a.lattice.filter(scaled);
            logits += a.weight * (a.inv_sqrt_norm.asDiagonal() * filtered);
        }
        q = std::move(logits);
        softmax_rows_inplace(q);
    }
    return q;
}

}  // namespace camseg

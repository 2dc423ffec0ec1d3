#pragma once

// Approximate high-dimensional Gaussian filtering on the permutohedral
// lattice. Points are embedded onto the hyperplane sum(x) = 0 in d+1
// dimensions, splatted onto the enclosing lattice simplex with barycentric
// weights, blurred with a [1 2 1] kernel along each lattice direction and
// sliced back. The result approximates
//     out_i = sum_j exp(-|f_i - f_j|^2 / 2) * in_j
// for features already divided by their standard deviation.

#include <Eigen/Dense>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace camseg {

class PermutohedralLattice {
public:
    /// `features`: one row per point, already scaled by 1/sigma.
    explicit PermutohedralLattice(const Eigen::MatrixXd& features)
        : n_(int(features.rows())), d_(int(features.cols())) {
        build(features);
    }

    int points() const { return n_; }
    int lattice_size() const { return m_; }

    /// Filters each column of `values` (n x channels).
    Eigen::MatrixXd filter(const Eigen::MatrixXd& values) const {
        if (values.rows() != n_) throw std::invalid_argument("lattice filter: row count mismatch");
        const int ch = int(values.cols());
        const int dp1 = d_ + 1;

        // splat
        Eigen::MatrixXd lattice = Eigen::MatrixXd::Zero(m_, ch);
        for (int i = 0; i < n_; ++i)
            for (int r = 0; r < dp1; ++r)
                lattice.row(offsets_[size_t(i) * dp1 + r]) +=
                    weights_[size_t(i) * dp1 + r] * values.row(i);

        // blur along each lattice direction
        Eigen::MatrixXd other(m_, ch);
        std::vector<int> nkey(d_);
        for (int j = 0; j <= d_; ++j) {
            for (int v = 0; v < m_; ++v) {
                const int* key = &keys_[size_t(v) * d_];
                for (int k = 0; k < d_; ++k) nkey[k] = key[k] + 1;
                if (j < d_) nkey[j] = key[j] - d_;
                const int up = find(nkey);
                for (int k = 0; k < d_; ++k) nkey[k] = key[k] - 1;
                if (j < d_) nkey[j] = key[j] + d_;
                const int down = find(nkey);
                other.row(v) = 0.5 * lattice.row(v);
                if (up >= 0) other.row(v) += 0.25 * lattice.row(up);
                if (down >= 0) other.row(v) += 0.25 * lattice.row(down);
            }
            lattice.swap(other);
        }

        // slice; the alpha factor undoes the amplitude loss of the blur
        const double alpha = 1.0 / (1.0 + std::pow(2.0, -d_));
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_, ch);
        for (int i = 0; i < n_; ++i)
            for (int r = 0; r < dp1; ++r)
                out.row(i) += weights_[size_t(i) * dp1 + r] * alpha *
                              lattice.row(offsets_[size_t(i) * dp1 + r]);
        return out;
    }

private:
    int n_ = 0;
    int d_ = 0;
    int m_ = 0;                    // number of occupied lattice points
    std::vector<int> offsets_;     // n * (d+1), lattice index per vertex
    std::vector<double> weights_;  // n * (d+1), barycentric weight per vertex
    std::vector<int> keys_;        // m * d, first d lattice coordinates

    struct KeyHash {
        size_t operator()(const std::vector<int>& k) const {
            uint64_t h = 0xCBF29CE484222325ULL;
            for (int v : k) {
                h ^= uint64_t(uint32_t(v));
                h *= 0x100000001B3ULL;
            }
            return size_t(h);
        }
    };
    std::unordered_map<std::vector<int>, int, KeyHash> table_;

    int find(const std::vector<int>& key) const {
        auto it = table_.find(key);
        return it == table_.end() ? -1 : it->second;
    }

    void build(const Eigen::MatrixXd& features) {
        const int dp1 = d_ + 1;
        offsets_.assign(size_t(n_) * dp1, 0);
        weights_.assign(size_t(n_) * dp1, 0.0);

        // scale so the blur stage realizes a unit Gaussian in feature space
        std::vector<double> scale(d_);
        const double inv_std = std::sqrt(2.0 / 3.0) * dp1;
        for (int i = 0; i < d_; ++i) scale[i] = inv_std / std::sqrt(double(i + 1) * (i + 2));

        std::vector<double> elevated(dp1);
        std::vector<int> greedy(dp1), rank(dp1);
        std::vector<double> barycentric(dp1 + 1);
        std::vector<int> key(d_);

        for (int idx = 0; idx < n_; ++idx) {
            // embed onto the hyperplane sum(x) = 0
            double sm = 0.0;
            for (int i = d_; i > 0; --i) {
                const double cf = features(idx, i - 1) * scale[i - 1];
                elevated[i] = sm - i * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // round to the nearest remainder-0 lattice point
            int sum = 0;
            for (int i = 0; i < dp1; ++i) {
                const double v = elevated[i] / dp1;
                const double up = std::ceil(v) * dp1;
                const double down = std::floor(v) * dp1;
                greedy[i] = int(up - elevated[i] < elevated[i] - down ? up : down);
                sum += greedy[i];
            }
            sum /= dp1;

            // rank the coordinates by their rounding differential
            std::fill(rank.begin(), rank.end(), 0);
            for (int i = 0; i < dp1; ++i)
                for (int j = i + 1; j < dp1; ++j) {
                    if (elevated[i] - greedy[i] < elevated[j] - greedy[j])
                        ++rank[i];
                    else
                        ++rank[j];
                }

            // walk back onto the hyperplane if the rounding left it
            if (sum > 0) {
                for (int i = 0; i < dp1; ++i) {
                    if (rank[i] >= dp1 - sum) {
                        greedy[i] -= dp1;
                        rank[i] += sum - dp1;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if (sum < 0) {
                for (int i = 0; i < dp1; ++i) {
                    if (rank[i] < -sum) {
                        greedy[i] += dp1;
                        rank[i] += sum + dp1;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            // barycentric coordinates inside the simplex
            std::fill(barycentric.begin(), barycentric.end(), 0.0);
            for (int i = 0; i < dp1; ++i) {
                const double v = (elevated[i] - greedy[i]) / dp1;
                barycentric[d_ - rank[i]] += v;
                barycentric[dp1 - rank[i]] -= v;
            }
            barycentric[0] += 1.0 + barycentric[dp1];

            // register the d+1 simplex vertices
            for (int r = 0; r < dp1; ++r) {
                for (int i = 0; i < d_; ++i)
                    key[i] = greedy[i] + (rank[i] <= d_ - r ? r : r - dp1);
                auto [it, inserted] = table_.try_emplace(std::vector<int>(key), m_);
                if (inserted) {
                    keys_.insert(keys_.end(), key.begin(), key.end());
                    ++m_;
                }
                offsets_[size_t(idx) * dp1 + r] = it->second;
                weights_[size_t(idx) * dp1 + r] = barycentric[r];
            }
        }
    }
};

}  // namespace camseg

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace camseg {

// Thrown when an input is structurally valid but numerically unusable
// (zero Sinkhorn row, all-zero sharpness denominator, ...).
class degenerate_input_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Configuration problems surface separately so the CLI can map them to exit code 2.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major 2D grid. Used for per-class activation maps, confidence
/// maps and label maps.
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
};

using MapD = Grid<double>;

inline double max_value(const MapD& m) {
    double v = 0.0;
    for (double x : m.data) v = std::max(v, x);
    return v;
}

inline bool all_finite(const MapD& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Bilinear resampling with the aligned-corners convention: the four grid
/// corners map exactly onto the output corners, so corner values survive
/// resizing unchanged.
inline MapD resize_bilinear(const MapD& src, int out_rows, int out_cols) {
    if (src.rows <= 0 || src.cols <= 0)
        throw std::invalid_argument("resize_bilinear: empty source grid");
    if (out_rows <= 0 || out_cols <= 0)
        throw std::invalid_argument("resize_bilinear: non-positive target size");
    MapD out(out_rows, out_cols);
    const double sr = out_rows > 1 ? double(src.rows - 1) / (out_rows - 1) : 0.0;
    const double sc = out_cols > 1 ? double(src.cols - 1) / (out_cols - 1) : 0.0;
    for (int r = 0; r < out_rows; ++r) {
        const double fr = r * sr;
        const int r0 = std::min(int(fr), src.rows - 1);
        const int r1 = std::min(r0 + 1, src.rows - 1);
        const double wr = fr - r0;
        for (int c = 0; c < out_cols; ++c) {
            const double fc = c * sc;
            const int c0 = std::min(int(fc), src.cols - 1);
            const int c1 = std::min(c0 + 1, src.cols - 1);
            const double wc = fc - c0;
            out.at(r, c) = (1 - wr) * ((1 - wc) * src.at(r0, c0) + wc * src.at(r0, c1)) +
                           wr * ((1 - wc) * src.at(r1, c0) + wc * src.at(r1, c1));
        }
    }
    return out;
}

// --- deterministic RNG -------------------------------------------------
//
// splitmix64 is used everywhere randomness is needed (mock weights, text
// hashing, test fixtures) so results are identical across platforms and
// standard libraries.

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() { return splitmix64(state); }

    /// Uniform in [0, 1).
    double uniform01() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }

    /// Uniform in [-1, 1).
    double uniform_pm1() { return 2.0 * uniform01() - 1.0; }

    /// Standard normal via Box-Muller (one draw per call, second discarded).
    double gaussian() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
};

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace camseg

#pragma once

#include <cstdint>
#include <string>

#include "camseg/tensor.hpp"

namespace camseg {

/// RGB image with channel values in [0, 1], row-major, 3 doubles per pixel.
struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int r, int c) : rows(r), cols(c), rgb(static_cast<size_t>(r) * c * 3, 0.0) {}

    double& at(int r, int c, int ch) { return rgb[(static_cast<size_t>(r) * cols + c) * 3 + ch]; }
    double at(int r, int c, int ch) const { return rgb[(static_cast<size_t>(r) * cols + c) * 3 + ch]; }
};

/// 8-bit label map. 0 = background, 1..C = foreground class id + 1, 255 = ignore.
struct LabelImage {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> labels;

    LabelImage() = default;
    LabelImage(int r, int c, uint8_t fill = 0)
        : rows(r), cols(c), labels(static_cast<size_t>(r) * c, fill) {}

    uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * cols + c]; }
    uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * cols + c]; }
};

inline Image resize_bilinear(const Image& src, int out_rows, int out_cols) {
    Image out(out_rows, out_cols);
    for (int ch = 0; ch < 3; ++ch) {
        MapD plane(src.rows, src.cols);
        for (int r = 0; r < src.rows; ++r)
            for (int c = 0; c < src.cols; ++c) plane.at(r, c) = src.at(r, c, ch);
        MapD resized = resize_bilinear(plane, out_rows, out_cols);
        for (int r = 0; r < out_rows; ++r)
            for (int c = 0; c < out_cols; ++c) out.at(r, c, ch) = resized.at(r, c);
    }
    return out;
}

}  // namespace camseg

#pragma once

// File I/O: PNG/JPEG images, indexed mask PNGs with the VOC palette, the CAM
// interchange format and float confidence maps.
//
// CAM interchange file (one per image, extension .cams):
//   magic "CAMS", u8 version (1), u16 class count,
//   then per class: u16 class_id, u32 h, u32 w, h*w row-major little-endian
//    32-bit floats.
// The patch-to-patch attention needed by the refinement stage travels in the
// same container as one extra entry with the reserved class id 0xFFFF and
// h = w = hw, so later stages need no access to the original images.

#include <jpeglib.h>
#include <png.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <optional>

#include "camseg/camgen.hpp"
#include "camseg/evalkit.hpp"

namespace camseg {

constexpr uint16_t kAttentionClassId = 0xFFFF;

using Palette = std::array<std::array<uint8_t, 3>, 256>;

/// Standard VOC colormap: each label's color comes from its bit pattern,
/// ignore (255) maps to (224, 224, 192).
inline Palette voc_palette() {
    Palette pal{};
    for (int i = 0; i < 256; ++i) {
        int id = i, r = 0, g = 0, b = 0;
        for (int bit = 7; bit >= 0 && id; --bit, id >>= 3) {
            r |= ((id >> 0) & 1) << bit;
            g |= ((id >> 1) & 1) << bit;
            b |= ((id >> 2) & 1) << bit;
        }
        pal[i] = {uint8_t(r), uint8_t(g), uint8_t(b)};
    }
    return pal;
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open " + path);
    return f;
}

}  // namespace detail

// --- PNG -------------------------------------------------------------------

/// Decodes a PNG into RGB [0,1]; palette, grayscale and alpha variants are
/// expanded/stripped as needed.
inline Image read_png_rgb(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int h = png_get_image_height(png, info), w = png_get_image_width(png, info);
    std::vector<uint8_t> row(png_get_rowbytes(png, info));
    Image img(h, w);
    for (int r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = row[c * 3 + ch] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// Reads raw 8-bit indices from a palette or grayscale PNG (VOC ground-truth
/// convention: the pixel value is the class label).
inline LabelImage read_png_labels(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png decode failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY)
        throw std::runtime_error("label png must be palette or grayscale: " + path);
    if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    png_read_update_info(png, info);

    const int h = png_get_image_height(png, info), w = png_get_image_width(png, info);
    LabelImage out(h, w);
    std::vector<uint8_t> row(png_get_rowbytes(png, info));
    for (int r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        std::copy(row.begin(), row.begin() + w, out.labels.begin() + size_t(r) * w);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

/// Writes an 8-bit indexed PNG with the given palette.
inline void write_png_indexed(const std::string& path, const LabelImage& labels,
                              const Palette& palette) {
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, labels.cols, labels.rows, 8, PNG_COLOR_TYPE_PALETTE,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::array<png_color, 256> pal;
    for (int i = 0; i < 256; ++i) pal[i] = {palette[i][0], palette[i][1], palette[i][2]};
    png_set_PLTE(png, info, pal.data(), 256);
    png_write_info(png, info);
    for (int r = 0; r < labels.rows; ++r)
        png_write_row(png, const_cast<png_bytep>(labels.labels.data() + size_t(r) * labels.cols));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

inline void write_png_rgb(const std::string& path, const Image& img) {
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encode failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.cols, img.rows, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<uint8_t> row(size_t(img.cols) * 3);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c)
            for (int ch = 0; ch < 3; ++ch)
                row[c * 3 + ch] =
                    uint8_t(std::clamp(img.at(r, c, ch), 0.0, 1.0) * 255.0 + 0.5);
        png_write_row(png, row.data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

// --- JPEG --------------------------------------------------------------

inline Image read_jpeg_rgb(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    jpeg_decompress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    if (jpeg_read_header(&cinfo, TRUE) != JPEG_HEADER_OK) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("jpeg decode failed: " + path);
    }
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    Image img(cinfo.output_height, cinfo.output_width);
    std::vector<uint8_t> row(size_t(cinfo.output_width) * 3);
    uint8_t* rowp = row.data();
    for (int r = 0; cinfo.output_scanline < cinfo.output_height; ++r) {
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int c = 0; c < img.cols; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = row[c * 3 + ch] / 255.0;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline void write_jpeg_rgb(const std::string& path, const Image& img, int quality = 92) {
    auto f = detail::open_file(path, "wb");
    jpeg_compress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f.get());
    cinfo.image_width = img.cols;
    cinfo.image_height = img.rows;
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<uint8_t> row(size_t(img.cols) * 3);
    uint8_t* rowp = row.data();
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c)
            for (int ch = 0; ch < 3; ++ch)
                row[c * 3 + ch] = uint8_t(std::clamp(img.at(r, c, ch), 0.0, 1.0) * 255.0 + 0.5);
        jpeg_write_scanlines(&cinfo, &rowp, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

/// Dispatches on the magic bytes; PNG and JPEG are supported.
inline Image read_image(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    uint8_t magic[2] = {0, 0};
    if (std::fread(magic, 1, 2, f.get()) != 2)
        throw std::runtime_error("cannot read " + path);
    f.reset();
    if (magic[0] == 0x89 && magic[1] == 'P') return read_png_rgb(path);
    if (magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_rgb(path);
    throw std::runtime_error("unsupported image format: " + path);
}

// --- CAM interchange files ---------------------------------------------

namespace detail {

inline void write_f32_map(std::FILE* f, const MapD& m) {
    std::vector<float> buf(m.data.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(m.data[i]);
    std::fwrite(buf.data(), sizeof(float), buf.size(), f);
}

inline MapD read_f32_map(std::FILE* f, int h, int w, const std::string& path) {
    std::vector<float> buf(size_t(h) * w);
    if (std::fread(buf.data(), sizeof(float), buf.size(), f) != buf.size())
        throw std::runtime_error("truncated cams file: " + path);
    MapD m(h, w);
    for (size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i];
    return m;
}

}  // namespace detail

/// Writes the per-class maps, optionally followed by the attention entry.
inline void write_cams(const std::string& path, const CamStack& cams,
                       const Eigen::MatrixXd* attention = nullptr) {
    auto f = detail::open_file(path, "wb");
    std::fwrite("CAMS", 1, 4, f.get());
    const uint8_t version = 1;
    std::fwrite(&version, 1, 1, f.get());
    const uint16_t count = uint16_t(cams.maps.size() + (attention ? 1 : 0));
    std::fwrite(&count, sizeof(count), 1, f.get());
    for (size_t c = 0; c < cams.maps.size(); ++c) {
        const uint16_t id = uint16_t(cams.class_ids[c]);
        const uint32_t h = cams.maps[c].rows, w = cams.maps[c].cols;
        std::fwrite(&id, sizeof(id), 1, f.get());
        std::fwrite(&h, sizeof(h), 1, f.get());
        std::fwrite(&w, sizeof(w), 1, f.get());
        detail::write_f32_map(f.get(), cams.maps[c]);
    }
    if (attention) {
        const uint16_t id = kAttentionClassId;
        const uint32_t hw = uint32_t(attention->rows());
        std::fwrite(&id, sizeof(id), 1, f.get());
        std::fwrite(&hw, sizeof(hw), 1, f.get());
        std::fwrite(&hw, sizeof(hw), 1, f.get());
        std::vector<float> buf(size_t(hw) * hw);
        for (uint32_t r = 0; r < hw; ++r)
            for (uint32_t c = 0; c < hw; ++c) buf[size_t(r) * hw + c] = float((*attention)(r, c));
        std::fwrite(buf.data(), sizeof(float), buf.size(), f.get());
    }
    if (std::ferror(f.get())) throw std::runtime_error("write failed: " + path);
}

struct CamFile {
    CamStack cams;
    std::optional<Eigen::MatrixXd> attention;
};

inline CamFile read_cams(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    char magic[4];
    uint8_t version = 0;
    uint16_t count = 0;
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "CAMS", 4) != 0)
        throw std::runtime_error("not a cams file: " + path);
    if (std::fread(&version, 1, 1, f.get()) != 1 || version != 1)
        throw std::runtime_error("unsupported cams version: " + path);
    if (std::fread(&count, sizeof(count), 1, f.get()) != 1)
        throw std::runtime_error("truncated cams file: " + path);
    CamFile out;
    out.cams.resolution = CamResolution::grid;
    out.cams.normalized = true;  // pipeline stages exchange normalized maps
    for (int e = 0; e < count; ++e) {
        uint16_t id;
        uint32_t h, w;
        if (std::fread(&id, sizeof(id), 1, f.get()) != 1 ||
            std::fread(&h, sizeof(h), 1, f.get()) != 1 ||
            std::fread(&w, sizeof(w), 1, f.get()) != 1)
            throw std::runtime_error("truncated cams file: " + path);
        MapD m = detail::read_f32_map(f.get(), int(h), int(w), path);
        if (id == kAttentionClassId) {
            Eigen::MatrixXd attn(h, w);
            for (uint32_t r = 0; r < h; ++r)
                for (uint32_t c = 0; c < w; ++c) attn(r, c) = m.at(int(r), int(c));
            out.attention = std::move(attn);
        } else {
            out.cams.class_ids.push_back(id);
            out.cams.maps.push_back(std::move(m));
        }
    }
    return out;
}

// --- confidence maps -----------------------------------------------------

inline void write_conf(const std::string& path, const MapD& conf) {
    auto f = detail::open_file(path, "wb");
    std::fwrite("CONF", 1, 4, f.get());
    const uint32_t h = conf.rows, w = conf.cols;
    std::fwrite(&h, sizeof(h), 1, f.get());
    std::fwrite(&w, sizeof(w), 1, f.get());
    detail::write_f32_map(f.get(), conf);
    if (std::ferror(f.get())) throw std::runtime_error("write failed: " + path);
}

inline MapD read_conf(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    char magic[4];
    uint32_t h = 0, w = 0;
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "CONF", 4) != 0)
        throw std::runtime_error("not a conf file: " + path);
    if (std::fread(&h, sizeof(h), 1, f.get()) != 1 || std::fread(&w, sizeof(w), 1, f.get()) != 1)
        throw std::runtime_error("truncated conf file: " + path);
    return detail::read_f32_map(f.get(), int(h), int(w), path);
}

// --- reports ---------------------------------------------------------------

/// Plain-text table plus machine-readable key-value lines (class_id=iou,
/// then miou=).
inline void write_iou_report(const std::string& txt_path, const std::string& kv_path,
                             const IoUReport& report,
                             const std::vector<std::string>& class_names = {}) {
    {
        std::ofstream txt(txt_path);
        if (!txt) throw std::runtime_error("cannot open " + txt_path);
        txt << "class                iou\n";
        for (const auto& [id, iou] : report.per_class) {
            std::string name = id < int(class_names.size()) ? class_names[id]
                                                            : "class_" + std::to_string(id);
            txt << name;
            for (size_t p = name.size(); p < 21; ++p) txt << ' ';
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.4f", iou);
            txt << buf << "\n";
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", report.miou);
        txt << "mean                 " << buf << "\n";
    }
    {
        std::ofstream kv(kv_path);
        if (!kv) throw std::runtime_error("cannot open " + kv_path);
        for (const auto& [id, iou] : report.per_class)
            kv << id << "=" << iou << "\n";
        kv << "miou=" << report.miou << "\n";
    }
}

}  // namespace camseg

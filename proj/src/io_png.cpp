// SPDX-License-Identifier: Apache-2.0
#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "gsdyn/io.hpp"

namespace gsdyn {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
    if (img.ch != 1 && img.ch != 3) throw IoError("png: only 1 or 3 channels supported");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    size_t stride = static_cast<size_t>(img.width) * static_cast<size_t>(img.ch);
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.px.data() + static_cast<size_t>(y) * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 read_png(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: read failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: unsupported channel count in " + path);
    }
    ImageU8 img(static_cast<int>(w), static_cast<int>(h), ch);
    std::vector<png_bytep> rows(h);
    size_t stride = static_cast<size_t>(w) * static_cast<size_t>(ch);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.px.data() + y * stride;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

ImageU8 to_u8_gamma(const ImageF& linear) {
    ImageU8 out(linear.width, linear.height, linear.ch);
    for (size_t i = 0; i < linear.px.size(); ++i)
        out.px[i] = static_cast<std::uint8_t>(std::lround(srgb_encode(linear.px[i]) * 255.0));
    return out;
}

ImageF to_linear(const ImageU8& stored) {
    ImageF out(stored.width, stored.height, stored.ch);
    for (size_t i = 0; i < stored.px.size(); ++i)
        out.px[i] = srgb_decode(stored.px[i] / 255.0);
    return out;
}

ImageF to_float(const ImageU8& img) {
    ImageF out(img.width, img.height, img.ch);
    for (size_t i = 0; i < img.px.size(); ++i) out.px[i] = img.px[i] / 255.0;
    return out;
}

}  // namespace gsdyn

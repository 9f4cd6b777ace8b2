// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gsdyn/common.hpp"

namespace gsdyn {

// Float image, row-major top-down, `ch` interleaved channels, values nominally [0, 1].
struct ImageF {
    int width = 0, height = 0, ch = 0;
    std::vector<double> px;

    ImageF() = default;
    ImageF(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), ch(c),
          px(static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(c), fill) {}

    double& at(int x, int y, int c) {
        return px[(static_cast<size_t>(y) * width + x) * ch + c];
    }
    double at(int x, int y, int c) const {
        return px[(static_cast<size_t>(y) * width + x) * ch + c];
    }
};

// 8-bit image, same layout.
struct ImageU8 {
    int width = 0, height = 0, ch = 0;
    std::vector<std::uint8_t> px;

    ImageU8() = default;
    ImageU8(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), ch(c),
          px(static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(c), fill) {}

    std::uint8_t& at(int x, int y, int c) {
        return px[(static_cast<size_t>(y) * width + x) * ch + c];
    }
    std::uint8_t at(int x, int y, int c) const {
        return px[(static_cast<size_t>(y) * width + x) * ch + c];
    }
};

// Storage gamma is plain 1/2.2 (documented simplification of sRGB).
inline double srgb_encode(double linear) {
    if (linear <= 0.0) return 0.0;
    if (linear >= 1.0) return 1.0;
    return std::pow(linear, 1.0 / 2.2);
}

inline double srgb_decode(double stored) { return std::pow(stored, 2.2); }

ImageU8 to_u8_gamma(const ImageF& linear);
ImageF to_linear(const ImageU8& stored);
// No gamma, just /255 (for metrics in the stored domain).
ImageF to_float(const ImageU8& img);

}  // namespace gsdyn

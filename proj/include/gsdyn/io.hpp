// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "gsdyn/gaussian.hpp"
#include "gsdyn/image.hpp"

namespace gsdyn {

// Binary little-endian PLY with float32 properties x, y, z, rot_0..rot_3 (w, x, y, z),
// scale_0..scale_2 (linear meters), red, green, blue (floats in [0,1]), opacity.
// Properties may appear in any order; unknown or missing properties are errors.
void write_gaussians_ply(const std::string& path, const GaussianFrame& frame);
GaussianFrame read_gaussians_ply(const std::string& path);

// PNG. Images are RGB8, masks single-channel gray8 (pixel value = object id, 0 background).
void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// PFM float32 grayscale (scale -1.0, little endian). Used for depth maps in meters;
// 0 marks missing depth.
void write_pfm(const std::string& path, const ImageF& img);
ImageF read_pfm(const std::string& path);

}  // namespace gsdyn

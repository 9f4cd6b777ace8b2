// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gsdyn/gaussian.hpp"
#include "gsdyn/image.hpp"

namespace gsdyn {

struct RenderParams {
    double alpha_max = 0.99;
    double lowpass = 0.3;           // px^2, added to the 2D covariance diagonal
    double near_plane = 0.05;       // meters; Gaussians at or behind are dropped
    double cutoff_sigma = 3.0;      // per-Gaussian footprint radius, in Mahalanobis sigmas
    double term_transmittance = 1e-4;  // stop compositing a pixel below this T
    double gamma_floor = 1e-4;      // contributions below this are not recorded
    Vec3 background = Vec3::Zero();
};

// Screen-space footprint of one Gaussian. `index` points into the source frame; the
// projected list is sorted by (depth, index) ascending.
struct ProjectedGaussian {
    Vec2 mean;
    Mat2 cov;
    double depth = 0;
    int index = 0;
};

// EWA projection of one Gaussian; returns false if culled by the near plane.
bool project_gaussian(const Vec3& center, const Mat3& cov3, const Camera& cam,
                      const RenderParams& params, ProjectedGaussian* out);

std::vector<ProjectedGaussian> project_frame(const GaussianFrame& frame, const Camera& cam,
                                             const RenderParams& params);

struct RenderOutput {
    ImageF image;          // linear RGB
    ImageF transmittance;  // final per-pixel T
};

RenderOutput render(const GaussianFrame& frame, const Camera& cam, const RenderParams& params);

// Per-pixel rendering contributions gamma = alpha * T_front, sparse above gamma_floor.
struct ContributionMap {
    int width = 0, height = 0;
    // per pixel, ordered front to back
    std::vector<std::vector<std::pair<int, double>>> pixels;

    const std::vector<std::pair<int, double>>& at(int x, int y) const {
        return pixels[static_cast<size_t>(y) * width + x];
    }
};

ContributionMap contribution(const GaussianFrame& frame, const Camera& cam,
                             const RenderParams& params);

// Gradients of a scalar image loss with respect to Gaussian centers and rotations, with
// the compositing order held fixed. d_rot chains through the quaternion; d_rotmat is the
// same gradient at the rotation-matrix level (for callers composing rotations directly).
struct RenderGrads {
    std::vector<Vec3> d_center;
    std::vector<Vec4> d_rot;
    std::vector<Mat3> d_rotmat;
};

RenderGrads render_backward(const GaussianFrame& frame, const Camera& cam,
                            const RenderParams& params, const ImageF& d_image);

// Mean-per-pixel L1 between two images (averaged over all pixels and channels). If
// d_pred is non-null it receives dL/dpred. An optional 0/1 weight image restricts the
// loss to its support (mean over selected pixels only).
double l1_image_loss(const ImageF& pred, const ImageF& target, ImageF* d_pred,
                     const ImageF* weight = nullptr);

// Instrumentation: number of render_backward calls since process start or reset.
std::int64_t render_backward_calls();
void reset_render_backward_calls();

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsdyn/camera.hpp"
#include "gsdyn/so3.hpp"

namespace gsdyn {

// Least-squares rigid transform (rotation + translation, no scale) mapping src onto dst,
// minimizing sum_i w_i |R s_i + t - d_i|^2 via the SVD of the weighted cross-covariance,
// with the determinant sign fixed to keep a proper rotation. Weights default to uniform.
// Throws NumericsError when fewer than 3 points are given or the point spread is rank
// deficient (collinear), since rotation is then unobservable.
SE3 fit_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
              const std::vector<double>& weights = {});

// Maps a 6-vector (two rows a1, a2) to a rotation matrix by Gram-Schmidt: first column
// a1 normalized, second the orthogonalized a2 normalized, third their cross product.
// Throws NumericsError when either normalization divides by less than 1e-8.
Mat3 decode_6d(const double r[6]);

// Pull-back of decode_6d: given dL/dR fills grad[6] with dL/dr. Gradients of the two
// normalizations are projected onto the tangent of the unit sphere, so perturbations along
// the input direction do not change the output.
void decode_6d_backward(const double r[6], const Mat3& d_rot, double grad[6]);

}  // namespace gsdyn

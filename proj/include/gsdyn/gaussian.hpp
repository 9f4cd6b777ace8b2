// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsdyn/camera.hpp"
#include "gsdyn/tensor.hpp"

namespace gsdyn {

// One frame of a Gaussian particle set, struct-of-arrays. Scales are per-axis standard
// deviations in meters (linear, not log). Rotations are unit quaternions (w, x, y, z).
struct GaussianFrame {
    std::vector<Vec3> center;
    std::vector<Vec4> rot;
    std::vector<Vec3> scale;
    std::vector<Vec3> color;    // [0, 1]
    std::vector<double> opacity;  // [0, 1]

    int size() const { return static_cast<int>(center.size()); }

    void resize(int n) {
        center.resize(static_cast<size_t>(n), Vec3::Zero());
        rot.resize(static_cast<size_t>(n), Vec4(1, 0, 0, 0));
        scale.resize(static_cast<size_t>(n), Vec3::Ones());
        color.resize(static_cast<size_t>(n), Vec3::Zero());
        opacity.resize(static_cast<size_t>(n), 1.0);
    }

    // 3x3 covariance of Gaussian i: R diag(s^2) R^T.
    Mat3 covariance(int i) const {
        Mat3 r = quat_to_mat(rot[static_cast<size_t>(i)]);
        const Vec3& s = scale[static_cast<size_t>(i)];
        return r * Vec3(s.x() * s.x(), s.y() * s.y(), s.z() * s.z()).asDiagonal() *
               r.transpose();
    }

    void normalize_rotations() {
        for (auto& q : rot) q.normalize();
    }

    // Consistency checks on attribute ranges; throws on violation.
    void validate() const;

    // Positions as an N x 3 tensor (for the network).
    ad::Tensor positions_tensor() const;
};

// Applies a rigid transform to the listed Gaussians in place: centers move, rotations are
// left-composed, scales/colors/opacities untouched.
void apply_pose(GaussianFrame& frame, const std::vector<int>& indices, const SE3& pose);
void apply_pose_all(GaussianFrame& frame, const SE3& pose);

// Motion features [v_{t-1}, v_t, z_{t-1}, z_t] per Gaussian, N x 8. Velocities are
// per-frame position differences in meters; heights are world z with the table at z = 0.
inline constexpr int kMotionFeatureDim = 8;

ad::Tensor motion_features(const std::vector<Vec3>& x_prev2, const std::vector<Vec3>& x_prev,
                           const std::vector<Vec3>& x_cur);

}  // namespace gsdyn

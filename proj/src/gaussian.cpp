// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/gaussian.hpp"

namespace gsdyn {

void GaussianFrame::validate() const {
    size_t n = center.size();
    if (rot.size() != n || scale.size() != n || color.size() != n || opacity.size() != n)
        throw NumericsError("gaussian frame: attribute arrays disagree in length");
    for (size_t i = 0; i < n; ++i) {
        if (!center[i].allFinite()) throw NumericsError("gaussian frame: non-finite center");
        if (std::abs(rot[i].norm() - 1.0) > 1e-9)
            throw NumericsError("gaussian frame: quaternion not unit norm");
        if (!(scale[i].array() > 0.0).all())
            throw NumericsError("gaussian frame: non-positive scale");
        if ((color[i].array() < 0.0).any() || (color[i].array() > 1.0).any())
            throw NumericsError("gaussian frame: color outside [0,1]");
        if (opacity[i] < 0.0 || opacity[i] > 1.0)
            throw NumericsError("gaussian frame: opacity outside [0,1]");
    }
}

ad::Tensor GaussianFrame::positions_tensor() const {
    ad::Tensor t({size(), 3});
    for (int i = 0; i < size(); ++i) {
        const Vec3& c = center[static_cast<size_t>(i)];
        t[i * 3 + 0] = c.x();
        t[i * 3 + 1] = c.y();
        t[i * 3 + 2] = c.z();
    }
    return t;
}

void apply_pose(GaussianFrame& frame, const std::vector<int>& indices, const SE3& pose) {
    Vec4 qr = mat_to_quat(pose.r);
    for (int i : indices) {
        size_t k = static_cast<size_t>(i);
        frame.center[k] = pose.apply(frame.center[k]);
        frame.rot[k] = quat_mul(qr, frame.rot[k]).normalized();
    }
}

void apply_pose_all(GaussianFrame& frame, const SE3& pose) {
    std::vector<int> all(static_cast<size_t>(frame.size()));
    for (int i = 0; i < frame.size(); ++i) all[static_cast<size_t>(i)] = i;
    apply_pose(frame, all, pose);
}

ad::Tensor motion_features(const std::vector<Vec3>& x_prev2, const std::vector<Vec3>& x_prev,
                           const std::vector<Vec3>& x_cur) {
    size_t n = x_cur.size();
    if (x_prev.size() != n || x_prev2.size() != n)
        throw NumericsError("motion_features: frame sizes disagree");
    ad::Tensor f({static_cast<int>(n), 8});
    for (size_t i = 0; i < n; ++i) {
        Vec3 v_prev = x_prev[i] - x_prev2[i];
        Vec3 v_cur = x_cur[i] - x_prev[i];
        double* row = f.data() + static_cast<std::int64_t>(i) * 8;
        row[0] = v_prev.x();
        row[1] = v_prev.y();
        row[2] = v_prev.z();
        row[3] = v_cur.x();
        row[4] = v_cur.y();
        row[5] = v_cur.z();
        row[6] = x_prev[i].z();
        row[7] = x_cur[i].z();
    }
    return f;
}

}  // namespace gsdyn

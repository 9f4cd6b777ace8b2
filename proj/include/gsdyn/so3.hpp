// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "gsdyn/common.hpp"

namespace gsdyn {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;  // quaternion storage order is always (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 so3_hat(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

// Rotation matrix of a (not necessarily unit) quaternion; normalizes internally.
inline Mat3 quat_to_mat(const Vec4& q) {
    double n = q.norm();
    if (n < 1e-12) throw NumericsError("quat_to_mat: zero quaternion");
    double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Shepperd's method; returns w >= 0.
inline Vec4 mat_to_quat(const Mat3& r) {
    Vec4 q;
    double tr = r.trace();
    if (tr > 0.0) {
        double s = std::sqrt(tr + 1.0) * 2.0;
        q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
            (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
            (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
            (r(1, 2) + r(2, 1)) / s;
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s,
            0.25 * s;
    }
    if (q[0] < 0.0) q = -q;
    return q.normalized();
}

// Hamilton product a*b.
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    Vec4 q;
    q[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3];
    q[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2];
    q[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1];
    q[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0];
    return q;
}

// Vector-Jacobian product dL/dq given dL/dR, for R = quat_to_mat(q). Includes the chain
// through the internal normalization, so q itself need not be unit.
inline Vec4 quat_rotation_vjp(const Vec4& q, const Mat3& g) {
    double n = q.norm();
    if (n < 1e-12) throw NumericsError("quat_rotation_vjp: zero quaternion");
    Vec4 u = q / n;
    double w = u[0], x = u[1], y = u[2], z = u[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    Vec4 gu;
    gu[0] = 2.0 * (g.array() * dw.array()).sum();
    gu[1] = 2.0 * (g.array() * dx.array()).sum();
    gu[2] = 2.0 * (g.array() * dy.array()).sum();
    gu[3] = 2.0 * (g.array() * dz.array()).sum();
    // project through the normalization: dq_hat/dq = (I - u u^T) / n
    return (gu - u * u.dot(gu)) / n;
}

// Angle in radians between two rotations.
inline double rotation_angle(const Mat3& a, const Mat3& b) {
    double c = ((a * b.transpose()).trace() - 1.0) * 0.5;
    c = std::max(-1.0, std::min(1.0, c));
    return std::acos(c);
}

}  // namespace gsdyn

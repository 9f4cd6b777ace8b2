// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/rigid.hpp"

#include <Eigen/SVD>

#include "gsdyn/common.hpp"

namespace gsdyn {

SE3 fit_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
              const std::vector<double>& weights) {
    const size_t n = src.size();
    if (dst.size() != n) throw ConfigError("fit_rigid: point count mismatch");
    if (n < 3) throw NumericsError("fit_rigid: need at least 3 points");
    if (!weights.empty() && weights.size() != n)
        throw ConfigError("fit_rigid: weight count mismatch");

    double wsum = 0.0;
    Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        double w = weights.empty() ? 1.0 : weights[i];
        if (w < 0) throw ConfigError("fit_rigid: negative weight");
        wsum += w;
        mu_s += w * src[i];
        mu_d += w * dst[i];
    }
    if (wsum <= 0) throw NumericsError("fit_rigid: zero total weight");
    mu_s /= wsum;
    mu_d /= wsum;

    Mat3 h = Mat3::Zero();
    for (size_t i = 0; i < n; ++i) {
        double w = weights.empty() ? 1.0 : weights[i];
        h += w * (dst[i] - mu_d) * (src[i] - mu_s).transpose();
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3& s = svd.singularValues();
    // Collinear (or coincident) point sets leave rotation about the axis unconstrained.
    if (s(1) <= 1e-9 * std::max(s(0), 1e-30))
        throw NumericsError("fit_rigid: degenerate point configuration");
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    SE3 out;
    out.r = svd.matrixU() * d * svd.matrixV().transpose();
    out.t = mu_d - out.r * mu_s;
    return out;
}

Mat3 decode_6d(const double r[6]) {
    Vec3 a1(r[0], r[1], r[2]), a2(r[3], r[4], r[5]);
    double n1 = a1.norm();
    if (n1 < 1e-8) throw NumericsError("decode_6d: first column near zero");
    Vec3 b1 = a1 / n1;
    Vec3 u = a2 - b1.dot(a2) * b1;
    double n2 = u.norm();
    if (n2 < 1e-8) throw NumericsError("decode_6d: columns near parallel");
    Vec3 b2 = u / n2;
    Mat3 out;
    out.col(0) = b1;
    out.col(1) = b2;
    out.col(2) = b1.cross(b2);
    return out;
}

void decode_6d_backward(const double r[6], const Mat3& d_rot, double grad[6]) {
    Vec3 a1(r[0], r[1], r[2]), a2(r[3], r[4], r[5]);
    double n1 = a1.norm();
    if (n1 < 1e-8) throw NumericsError("decode_6d_backward: first column near zero");
    Vec3 b1 = a1 / n1;
    Vec3 u = a2 - b1.dot(a2) * b1;
    double n2 = u.norm();
    if (n2 < 1e-8) throw NumericsError("decode_6d_backward: columns near parallel");
    Vec3 b2 = u / n2;
    Vec3 g1 = d_rot.col(0), g2 = d_rot.col(1), g3 = d_rot.col(2);
    // b3 = b1 x b2, so the triple-product identity routes g3 into both factors.
    g1 += b2.cross(g3);
    g2 += g3.cross(b1);
    // Through b2 = u / |u|: tangential projection scaled by 1 / |u|.
    Vec3 gu = (g2 - b2 * b2.dot(g2)) / n2;
    // Through u = a2 - (b1 . a2) b1.
    Vec3 ga2 = gu - b1 * b1.dot(gu);
    g1 += -b1.dot(gu) * a2 - b1.dot(a2) * gu;
    // Through b1 = a1 / |a1|.
    Vec3 ga1 = (g1 - b1 * b1.dot(g1)) / n1;
    grad[0] = ga1.x();
    grad[1] = ga1.y();
    grad[2] = ga1.z();
    grad[3] = ga2.x();
    grad[4] = ga2.y();
    grad[5] = ga2.z();
}

}  // namespace gsdyn

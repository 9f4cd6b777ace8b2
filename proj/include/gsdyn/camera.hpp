// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "gsdyn/so3.hpp"

namespace gsdyn {

// Pinhole camera. Extrinsics map world to camera: X_cam = r_wc * X_world + t_wc.
// Camera looks down +z; pixel (u, v) has u rightward, v downward, origin at the top-left
// pixel center.
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Mat3 r_wc = Mat3::Identity();
    Vec3 t_wc = Vec3::Zero();

    Vec3 to_camera(const Vec3& p_world) const { return r_wc * p_world + t_wc; }
    Vec3 to_world(const Vec3& p_cam) const { return r_wc.transpose() * (p_cam - t_wc); }
    Vec3 center_world() const { return -(r_wc.transpose() * t_wc); }

    // Projects a camera-space point; caller checks z > 0.
    Vec2 project(const Vec3& p_cam) const {
        return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
    }

    // Ray direction in camera space through pixel coordinates (u, v), z component 1.
    Vec3 pixel_dir(double u, double v) const {
        return {(u - cx) / fx, (v - cy) / fy, 1.0};
    }

    // Back-projects pixel + camera-space depth (z, not ray length) to world.
    Vec3 unproject(double u, double v, double depth) const {
        return to_world(pixel_dir(u, v) * depth);
    }

    // Builds a camera at `eye` looking at `target`, with world up as -v direction.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx,
                          double fy, int width, int height) {
        Camera c;
        c.fx = fx;
        c.fy = fy;
        c.cx = (width - 1) * 0.5;
        c.cy = (height - 1) * 0.5;
        c.width = width;
        c.height = height;
        Vec3 fwd = (target - eye).normalized();
        Vec3 right = fwd.cross(up).normalized();
        Vec3 down = fwd.cross(right).normalized();
        Mat3 r_cw;  // camera axes as world vectors, by rows: x=right, y=down, z=forward
        r_cw.row(0) = right.transpose();
        r_cw.row(1) = down.transpose();
        r_cw.row(2) = fwd.transpose();
        c.r_wc = r_cw;
        c.t_wc = -(r_cw * eye);
        return c;
    }
};

// Rigid transform x -> r x + t.
struct SE3 {
    Mat3 r = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return r * p + t; }
    SE3 inverse() const { return {r.transpose(), -(r.transpose() * t)}; }
    // this * other (apply other first)
    SE3 compose(const SE3& o) const { return {r * o.r, r * o.t + t}; }
};

}  // namespace gsdyn

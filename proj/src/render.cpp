// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/render.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace gsdyn {

namespace {

constexpr int kTile = 16;

std::atomic<std::int64_t> g_backward_calls{0};

struct PreparedView {
    std::vector<ProjectedGaussian> pg;  // sorted by (depth, index)
    std::vector<Mat2> inv_cov;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tile_lists;  // entries are positions in pg, depth order
};

PreparedView prepare(const GaussianFrame& frame, const Camera& cam,
                     const RenderParams& params) {
    PreparedView prep;
    prep.pg = project_frame(frame, cam, params);
    prep.inv_cov.resize(prep.pg.size());
    prep.tiles_x = (cam.width + kTile - 1) / kTile;
    prep.tiles_y = (cam.height + kTile - 1) / kTile;
    prep.tile_lists.assign(
        static_cast<size_t>(prep.tiles_x) * static_cast<size_t>(prep.tiles_y), {});
    double cut = params.cutoff_sigma;
    for (size_t s = 0; s < prep.pg.size(); ++s) {
        const ProjectedGaussian& g = prep.pg[s];
        double det = g.cov(0, 0) * g.cov(1, 1) - g.cov(0, 1) * g.cov(1, 0);
        if (det <= 0.0) {
            prep.inv_cov[s].setZero();  // degenerate; contributes nothing
            continue;
        }
        Mat2 inv;
        inv << g.cov(1, 1), -g.cov(0, 1), -g.cov(1, 0), g.cov(0, 0);
        prep.inv_cov[s] = inv / det;
        double hx = cut * std::sqrt(g.cov(0, 0));
        double hy = cut * std::sqrt(g.cov(1, 1));
        int x0 = std::max(0, static_cast<int>(std::floor((g.mean.x() - hx))) / kTile);
        int y0 = std::max(0, static_cast<int>(std::floor((g.mean.y() - hy))) / kTile);
        int x1 = std::min(prep.tiles_x - 1,
                          static_cast<int>(std::floor(g.mean.x() + hx)) / kTile);
        int y1 = std::min(prep.tiles_y - 1,
                          static_cast<int>(std::floor(g.mean.y() + hy)) / kTile);
        if (g.mean.x() + hx < 0 || g.mean.y() + hy < 0 || x0 >= prep.tiles_x ||
            y0 >= prep.tiles_y)
            continue;
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                prep.tile_lists[static_cast<size_t>(ty) * prep.tiles_x + tx].push_back(
                    static_cast<int>(s));
    }
    return prep;
}

// Composites one pixel. cb(slot, alpha, t_before) is invoked per accepted Gaussian in
// depth order; returns the final transmittance. This is the single definition of the
// forward semantics: 3-sigma elliptical footprint, alpha clamp, termination threshold.
template <class Cb>
double walk_pixel(const PreparedView& prep, const std::vector<int>& list,
                  const GaussianFrame& frame, const RenderParams& params, double px,
                  double py, Cb&& cb) {
    double t = 1.0;
    double cut2 = params.cutoff_sigma * params.cutoff_sigma;
    for (int s : list) {
        if (t < params.term_transmittance) break;
        const ProjectedGaussian& g = prep.pg[static_cast<size_t>(s)];
        double dx = px - g.mean.x();
        double dy = py - g.mean.y();
        const Mat2& ic = prep.inv_cov[static_cast<size_t>(s)];
        double q = dx * (ic(0, 0) * dx + ic(0, 1) * dy) +
                   dy * (ic(1, 0) * dx + ic(1, 1) * dy);
        if (q > cut2) continue;
        double a = frame.opacity[static_cast<size_t>(g.index)] * std::exp(-0.5 * q);
        if (a > params.alpha_max) a = params.alpha_max;
        if (a <= 0.0) continue;
        cb(s, a, t);
        t -= a * t;
    }
    return t;
}

}  // namespace

bool project_gaussian(const Vec3& center, const Mat3& cov3, const Camera& cam,
                      const RenderParams& params, ProjectedGaussian* out) {
    Vec3 p = cam.to_camera(center);
    if (p.z() <= params.near_plane) return false;
    double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx * iz, 0, -cam.fx * p.x() * iz * iz, 0, cam.fy * iz,
        -cam.fy * p.y() * iz * iz;
    Mat3 m3 = cam.r_wc * cov3 * cam.r_wc.transpose();
    out->mean = cam.project(p);
    out->cov = jac * m3 * jac.transpose();
    out->cov(0, 0) += params.lowpass;
    out->cov(1, 1) += params.lowpass;
    out->depth = p.z();
    return true;
}

std::vector<ProjectedGaussian> project_frame(const GaussianFrame& frame, const Camera& cam,
                                             const RenderParams& params) {
    std::vector<ProjectedGaussian> pg;
    pg.reserve(static_cast<size_t>(frame.size()));
    for (int i = 0; i < frame.size(); ++i) {
        ProjectedGaussian g;
        if (!project_gaussian(frame.center[static_cast<size_t>(i)], frame.covariance(i), cam,
                              params, &g))
            continue;
        g.index = i;
        pg.push_back(g);
    }
    std::sort(pg.begin(), pg.end(), [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    return pg;
}

RenderOutput render(const GaussianFrame& frame, const Camera& cam,
                    const RenderParams& params) {
    PreparedView prep = prepare(frame, cam, params);
    RenderOutput out;
    out.image = ImageF(cam.width, cam.height, 3);
    out.transmittance = ImageF(cam.width, cam.height, 1);
    for (int ty = 0; ty < prep.tiles_y; ++ty) {
        for (int tx = 0; tx < prep.tiles_x; ++tx) {
            const std::vector<int>& list =
                prep.tile_lists[static_cast<size_t>(ty) * prep.tiles_x + tx];
            int y1 = std::min(cam.height, (ty + 1) * kTile);
            int x1 = std::min(cam.width, (tx + 1) * kTile);
            for (int y = ty * kTile; y < y1; ++y) {
                for (int x = tx * kTile; x < x1; ++x) {
                    Vec3 c = Vec3::Zero();
                    double t_end = walk_pixel(
                        prep, list, frame, params, x, y, [&](int s, double a, double t) {
                            int i = prep.pg[static_cast<size_t>(s)].index;
                            c += (a * t) * frame.color[static_cast<size_t>(i)];
                        });
                    Vec3 rgb = c + t_end * params.background;
                    out.image.at(x, y, 0) = rgb.x();
                    out.image.at(x, y, 1) = rgb.y();
                    out.image.at(x, y, 2) = rgb.z();
                    out.transmittance.at(x, y, 0) = t_end;
                }
            }
        }
    }
    return out;
}

ContributionMap contribution(const GaussianFrame& frame, const Camera& cam,
                             const RenderParams& params) {
    PreparedView prep = prepare(frame, cam, params);
    ContributionMap map;
    map.width = cam.width;
    map.height = cam.height;
    map.pixels.resize(static_cast<size_t>(cam.width) * static_cast<size_t>(cam.height));
    for (int ty = 0; ty < prep.tiles_y; ++ty) {
        for (int tx = 0; tx < prep.tiles_x; ++tx) {
            const std::vector<int>& list =
                prep.tile_lists[static_cast<size_t>(ty) * prep.tiles_x + tx];
            int y1 = std::min(cam.height, (ty + 1) * kTile);
            int x1 = std::min(cam.width, (tx + 1) * kTile);
            for (int y = ty * kTile; y < y1; ++y) {
                for (int x = tx * kTile; x < x1; ++x) {
                    auto& px = map.pixels[static_cast<size_t>(y) * cam.width + x];
                    walk_pixel(prep, list, frame, params, x, y,
                               [&](int s, double a, double t) {
                                   double gamma = a * t;
                                   if (gamma > params.gamma_floor)
                                       px.emplace_back(prep.pg[static_cast<size_t>(s)].index,
                                                       gamma);
                               });
                }
            }
        }
    }
    return map;
}

RenderGrads render_backward(const GaussianFrame& frame, const Camera& cam,
                            const RenderParams& params, const ImageF& d_image) {
    g_backward_calls.fetch_add(1, std::memory_order_relaxed);
    if (d_image.width != cam.width || d_image.height != cam.height || d_image.ch != 3)
        throw NumericsError("render_backward: gradient image shape mismatch");
    PreparedView prep = prepare(frame, cam, params);
    size_t n = static_cast<size_t>(frame.size());
    std::vector<Vec2> g_mean(n, Vec2::Zero());
    std::vector<Mat2> g_cov(n, Mat2::Zero());
    std::vector<char> touched(n, 0);

    struct Entry {
        int slot;
        double alpha;
        double t_before;
    };
    std::vector<Entry> entries;
    entries.reserve(64);

    for (int ty = 0; ty < prep.tiles_y; ++ty) {
        for (int tx = 0; tx < prep.tiles_x; ++tx) {
            const std::vector<int>& list =
                prep.tile_lists[static_cast<size_t>(ty) * prep.tiles_x + tx];
            if (list.empty()) continue;
            int y1 = std::min(cam.height, (ty + 1) * kTile);
            int x1 = std::min(cam.width, (tx + 1) * kTile);
            for (int y = ty * kTile; y < y1; ++y) {
                for (int x = tx * kTile; x < x1; ++x) {
                    Vec3 gpix(d_image.at(x, y, 0), d_image.at(x, y, 1), d_image.at(x, y, 2));
                    if (gpix.isZero()) continue;
                    entries.clear();
                    double t_end =
                        walk_pixel(prep, list, frame, params, x, y,
                                   [&](int s, double a, double t) {
                                       entries.push_back({s, a, t});
                                   });
                    // suffix of the blended color below the current Gaussian, incl. bg
                    Vec3 suffix = t_end * params.background;
                    for (size_t e = entries.size(); e-- > 0;) {
                        const Entry& en = entries[e];
                        const ProjectedGaussian& g = prep.pg[static_cast<size_t>(en.slot)];
                        size_t i = static_cast<size_t>(g.index);
                        const Vec3& col = frame.color[i];
                        Vec3 dI_da = col * en.t_before - suffix / (1.0 - en.alpha);
                        double dL_da = gpix.dot(dI_da);
                        suffix += col * (en.alpha * en.t_before);
                        if (en.alpha >= params.alpha_max) continue;  // clamped: flat
                        const Mat2& ic = prep.inv_cov[static_cast<size_t>(en.slot)];
                        Vec2 d(x - g.mean.x(), y - g.mean.y());
                        Vec2 w2 = ic * d;
                        double ca = dL_da * en.alpha;
                        g_mean[i] += ca * w2;
                        g_cov[i] += (0.5 * ca) * (w2 * w2.transpose());
                        touched[i] = 1;
                    }
                }
            }
        }
    }

    RenderGrads out;
    out.d_center.assign(n, Vec3::Zero());
    out.d_rot.assign(n, Vec4::Zero());
    out.d_rotmat.assign(n, Mat3::Zero());
    const Mat3& w = cam.r_wc;
    for (size_t i = 0; i < n; ++i) {
        if (!touched[i]) continue;
        Vec3 p = cam.to_camera(frame.center[i]);
        double iz = 1.0 / p.z();
        Eigen::Matrix<double, 2, 3> jac;
        jac << cam.fx * iz, 0, -cam.fx * p.x() * iz * iz, 0, cam.fy * iz,
            -cam.fy * p.y() * iz * iz;
        Mat3 sigma = frame.covariance(static_cast<int>(i));
        Mat3 m3 = w * sigma * w.transpose();
        Eigen::Matrix<double, 3, 2> m3jt = m3 * jac.transpose();

        // d(cov2d)/d(p_cam) via the Jacobian's own dependence on the camera-space point
        Eigen::Matrix<double, 2, 3> dj[3];
        for (auto& m : dj) m.setZero();
        dj[0](0, 2) = -cam.fx * iz * iz;
        dj[1](1, 2) = -cam.fy * iz * iz;
        dj[2](0, 0) = -cam.fx * iz * iz;
        dj[2](1, 1) = -cam.fy * iz * iz;
        dj[2](0, 2) = 2.0 * cam.fx * p.x() * iz * iz * iz;
        dj[2](1, 2) = 2.0 * cam.fy * p.y() * iz * iz * iz;

        Vec3 d_pcam = jac.transpose() * g_mean[i];
        for (int k = 0; k < 3; ++k) {
            Mat2 dcov = dj[k] * m3jt;
            d_pcam[k] += 2.0 * (g_cov[i].array() * dcov.array()).sum();
        }
        out.d_center[i] = w.transpose() * d_pcam;

        Mat3 g_sigma = w.transpose() * (jac.transpose() * g_cov[i] * jac) * w;
        Mat3 rot = quat_to_mat(frame.rot[i]);
        const Vec3& s = frame.scale[i];
        Mat3 d_rot = 2.0 * g_sigma * rot *
                     Vec3(s.x() * s.x(), s.y() * s.y(), s.z() * s.z()).asDiagonal();
        out.d_rotmat[i] = d_rot;
        out.d_rot[i] = quat_rotation_vjp(frame.rot[i], d_rot);
    }
    return out;
}

double l1_image_loss(const ImageF& pred, const ImageF& target, ImageF* d_pred,
                     const ImageF* weight) {
    if (pred.width != target.width || pred.height != target.height || pred.ch != target.ch)
        throw NumericsError("l1_image_loss: image shapes disagree");
    if (weight && (weight->width != pred.width || weight->height != pred.height))
        throw NumericsError("l1_image_loss: weight shape mismatch");
    if (d_pred) *d_pred = ImageF(pred.width, pred.height, pred.ch);
    double denom = 0.0;
    if (weight) {
        for (double v : weight->px) denom += v > 0.0 ? 1.0 : 0.0;
        denom *= pred.ch;
    } else {
        denom = static_cast<double>(pred.px.size());
    }
    if (denom == 0.0) return 0.0;
    double total = 0.0;
    for (int y = 0; y < pred.height; ++y) {
        for (int x = 0; x < pred.width; ++x) {
            if (weight && weight->at(x, y, 0) <= 0.0) continue;
            for (int c = 0; c < pred.ch; ++c) {
                double diff = pred.at(x, y, c) - target.at(x, y, c);
                total += std::abs(diff);
                if (d_pred)
                    d_pred->at(x, y, c) = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / denom;
            }
        }
    }
    return total / denom;
}

std::int64_t render_backward_calls() { return g_backward_calls.load(); }
void reset_render_backward_calls() { g_backward_calls.store(0); }

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gsdyn/rigid.hpp"

namespace gsdyn {

namespace {
constexpr double kPadCost = 1e6;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
    const int nr = static_cast<int>(cost.rows());
    const int nc = static_cast<int>(cost.cols());
    if (nr == 0 || nc == 0) return std::vector<int>(static_cast<size_t>(nr), -1);
    const int n = std::max(nr, nc);
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, n, kPadCost);
    a.topLeftCorner(nr, nc) = cost;

    // Kuhn-Munkres with row/column potentials, one row inserted at a time.
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<size_t>(n) + 1, 0);  // match[j] = row occupying column j
    std::vector<int> way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = match[static_cast<size_t>(j0)];
            double delta = kInf;
            int j1 = -1;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur =
                    a(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> result(static_cast<size_t>(nr), -1);
    for (int j = 1; j <= nc; ++j) {
        const int i = match[static_cast<size_t>(j)];
        if (i >= 1 && i <= nr) result[static_cast<size_t>(i) - 1] = j - 1;
    }
    return result;
}

bool lift_point(const ImageF& depth, const Camera& cam, double u, double v, Vec3* out) {
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= depth.width || y0 + 1 >= depth.height) return false;
    const double d00 = depth.at(x0, y0, 0);
    const double d10 = depth.at(x0 + 1, y0, 0);
    const double d01 = depth.at(x0, y0 + 1, 0);
    const double d11 = depth.at(x0 + 1, y0 + 1, 0);
    if (d00 <= 0 || d10 <= 0 || d01 <= 0 || d11 <= 0) return false;
    const double fx = u - x0, fy = v - y0;
    // Inverse depth is an affine function of pixel coordinates on a plane, so this
    // interpolation reproduces planar surfaces exactly.
    const double inv = (1 - fx) * (1 - fy) / d00 + fx * (1 - fy) / d10 +
                       (1 - fx) * fy / d01 + fx * fy / d11;
    if (!(inv > 0) || !std::isfinite(inv)) return false;
    *out = cam.unproject(u, v, 1.0 / inv);
    return true;
}

IcpResult icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const SE3& init,
              const IcpParams& ip) {
    IcpResult res;
    res.pose = init;
    res.residual = kInf;
    if (src.size() < 3 || dst.size() < 3) return res;

    SE3 pose = init;
    double prev = kInf;
    int grow_streak = 0;
    std::vector<int> nn(src.size());
    std::vector<double> dist(src.size());
    std::vector<Vec3> src_in, dst_in;

    for (int it = 1; it <= ip.max_iters; ++it) {
        res.iters = it;
        for (size_t i = 0; i < src.size(); ++i) {
            const Vec3 p = pose.apply(src[i]);
            double best = kInf;
            int best_j = 0;
            for (size_t j = 0; j < dst.size(); ++j) {
                const double d = (dst[j] - p).squaredNorm();
                if (d < best) {
                    best = d;
                    best_j = static_cast<int>(j);
                }
            }
            nn[i] = best_j;
            dist[i] = std::sqrt(best);
        }
        std::vector<double> sorted = dist;
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2),
                         sorted.end());
        const double median = sorted[sorted.size() / 2];
        const double radius = std::max(ip.reject_factor * median, ip.reject_floor);

        src_in.clear();
        dst_in.clear();
        for (size_t i = 0; i < src.size(); ++i) {
            if (dist[i] <= radius) {
                src_in.push_back(src[i]);
                dst_in.push_back(dst[static_cast<size_t>(nn[i])]);
            }
        }
        if (src_in.size() < 3) break;

        SE3 cand;
        try {
            cand = fit_rigid(src_in, dst_in);
        } catch (const NumericsError&) {
            break;
        }
        double sum = 0.0;
        for (size_t i = 0; i < src_in.size(); ++i)
            sum += (cand.apply(src_in[i]) - dst_in[i]).norm();
        const double residual = sum / static_cast<double>(src_in.size());

        if (residual < res.residual) {
            res.residual = residual;
            res.pose = cand;
        }
        if (std::abs(prev - residual) < ip.tol) {
            res.converged = true;
            break;
        }
        if (residual > prev) {
            if (++grow_streak >= 3) {
                GSDYN_WARN("icp: diverging after %d iterations, keeping best pose", it);
                break;
            }
        } else {
            grow_streak = 0;
        }
        prev = residual;
        pose = cand;
    }
    if (!std::isfinite(res.residual)) res.residual = 0.0;
    return res;
}

namespace {

// World centroid of each mask id in one view, lifting every labeled pixel with depth.
// Index 0 of the result = mask id 1. Ids with no usable pixel stay unset (count 0).
void mask_centroids(const ImageU8& mask, const ImageF& depth, const Camera& cam,
                    std::vector<Vec3>* centroids, std::vector<int>* counts) {
    int max_id = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) max_id = std::max(max_id, static_cast<int>(mask.at(x, y, 0)));
    centroids->assign(static_cast<size_t>(max_id), Vec3::Zero());
    counts->assign(static_cast<size_t>(max_id), 0);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const int id = mask.at(x, y, 0);
            if (id <= 0) continue;
            const double z = depth.at(x, y, 0);
            if (z <= 0) continue;
            (*centroids)[static_cast<size_t>(id) - 1] += cam.unproject(x, y, z);
            (*counts)[static_cast<size_t>(id) - 1] += 1;
        }
    }
    for (size_t i = 0; i < centroids->size(); ++i)
        if ((*counts)[i] > 0) (*centroids)[i] /= static_cast<double>((*counts)[i]);
}

}  // namespace

ViewAssociation associate_views(const std::vector<ImageU8>& masks,
                                const std::vector<ImageF>& depths,
                                const std::vector<Camera>& cameras) {
    if (masks.size() != depths.size() || masks.size() != cameras.size())
        throw ConfigError("associate_views: view count mismatch");
    const int views = static_cast<int>(masks.size());
    ViewAssociation va;
    va.global_id.resize(static_cast<size_t>(views));
    va.matched.resize(static_cast<size_t>(views));
    if (views == 0) return va;

    std::vector<std::vector<Vec3>> cents(static_cast<size_t>(views));
    std::vector<std::vector<int>> counts(static_cast<size_t>(views));
    for (int v = 0; v < views; ++v)
        mask_centroids(masks[static_cast<size_t>(v)], depths[static_cast<size_t>(v)],
                       cameras[static_cast<size_t>(v)], &cents[static_cast<size_t>(v)],
                       &counts[static_cast<size_t>(v)]);

    // The reference view's ids become the first global ids verbatim.
    const int ref_n = static_cast<int>(cents[0].size());
    va.num_global = ref_n;
    va.global_id[0].resize(static_cast<size_t>(ref_n));
    va.matched[0].assign(static_cast<size_t>(ref_n), 1);
    for (int m = 0; m < ref_n; ++m) va.global_id[0][static_cast<size_t>(m)] = m + 1;

    // Centroids half a meter apart can never be the same tabletop object; such forced
    // matches are demoted to fresh ids.
    const double max_match_dist = 0.5;
    for (int v = 1; v < views; ++v) {
        const int n = static_cast<int>(cents[static_cast<size_t>(v)].size());
        va.global_id[static_cast<size_t>(v)].assign(static_cast<size_t>(n), 0);
        va.matched[static_cast<size_t>(v)].assign(static_cast<size_t>(n), 0);
        if (n == 0) continue;
        Eigen::MatrixXd cost(n, ref_n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < ref_n; ++j) {
                const bool ok = counts[static_cast<size_t>(v)][static_cast<size_t>(i)] > 0 &&
                                counts[0][static_cast<size_t>(j)] > 0;
                cost(i, j) = ok ? (cents[static_cast<size_t>(v)][static_cast<size_t>(i)] -
                                   cents[0][static_cast<size_t>(j)])
                                      .norm()
                                : kPadCost;
            }
        }
        const std::vector<int> m = hungarian(cost);
        for (int i = 0; i < n; ++i) {
            const int j = m[static_cast<size_t>(i)];
            if (j >= 0 && cost(i, j) < max_match_dist) {
                va.global_id[static_cast<size_t>(v)][static_cast<size_t>(i)] = j + 1;
                va.matched[static_cast<size_t>(v)][static_cast<size_t>(i)] = 1;
            } else {
                va.global_id[static_cast<size_t>(v)][static_cast<size_t>(i)] = ++va.num_global;
                GSDYN_WARN("associate_views: view %d mask %d has no counterpart in view 0", v,
                           i + 1);
            }
        }
    }
    return va;
}

std::vector<GaussianFrame> build_trajectories(const GaussianFrame& frame0,
                                              const std::vector<int>& hard_ids,
                                              const PoseSet& poses) {
    if (hard_ids.size() != static_cast<size_t>(frame0.size()))
        throw ConfigError("build_trajectories: id count does not match frame");
    const int num_objects = static_cast<int>(poses.objects.size());
    std::vector<std::vector<int>> members(static_cast<size_t>(num_objects));
    for (size_t i = 0; i < hard_ids.size(); ++i) {
        const int id = hard_ids[i];
        if (id >= 1 && id <= num_objects)
            members[static_cast<size_t>(id) - 1].push_back(static_cast<int>(i));
    }

    size_t frames = 0;
    for (int m = 0; m < num_objects; ++m)
        frames = (m == 0) ? poses.objects[0].size()
                          : std::min(frames, poses.objects[static_cast<size_t>(m)].size());
    if (num_objects == 0) frames = 0;
    for (int m = 0; m < num_objects; ++m) {
        if (poses.objects[static_cast<size_t>(m)].size() > frames)
            GSDYN_WARN("build_trajectories: object %d has %zu poses, truncating to %zu frames",
                       m + 1, poses.objects[static_cast<size_t>(m)].size(), frames);
    }

    std::vector<GaussianFrame> out;
    out.reserve(frames);
    for (size_t f = 0; f < frames; ++f) {
        GaussianFrame gf = frame0;
        for (int m = 0; m < num_objects; ++m)
            apply_pose(gf, members[static_cast<size_t>(m)],
                       poses.objects[static_cast<size_t>(m)][f]);
        out.push_back(std::move(gf));
    }
    return out;
}

PipelineResult run_pipeline(const Scene& scene, const IdAssignment& ids,
                            const PipelineParams& pp) {
    const int views = scene.num_views();
    const int frames = scene.frame_count;
    const int num_objects = scene.num_objects;
    const TrackSet tracks = load_tracks(scene.tracks_path());
    if (static_cast<int>(tracks.views.size()) != views)
        throw IoError(scene.tracks_path() + ": view count does not match manifest");

    // Every observation gets its noise drawn in one fixed sweep so that the sequence
    // is independent of visibility patterns and of which points end up used.
    struct Obs {
        Vec3 p;          // lifted world point
        bool ok = false;
    };
    // lifted[v][j][f]
    std::vector<std::vector<std::vector<Obs>>> lifted(static_cast<size_t>(views));
    Rng noise_rng(pp.noise_seed);
    const bool noisy = pp.noise_px != 0.0 || pp.noise_depth != 0.0;
    for (int v = 0; v < views; ++v) {
        const auto& pts = tracks.views[static_cast<size_t>(v)];
        lifted[static_cast<size_t>(v)].resize(pts.size());
        for (size_t j = 0; j < pts.size(); ++j)
            lifted[static_cast<size_t>(v)][j].resize(static_cast<size_t>(frames));
    }
    for (int f = 0; f < frames; ++f) {
        for (int v = 0; v < views; ++v) {
            const Camera& cam = scene.cameras[static_cast<size_t>(v)];
            const ImageF depth = scene.load_depth(v, f);
            const auto& pts = tracks.views[static_cast<size_t>(v)];
            for (size_t j = 0; j < pts.size(); ++j) {
                double du = 0, dv = 0, dz = 0;
                if (noisy) {
                    du = rand_normal(noise_rng) * pp.noise_px;
                    dv = rand_normal(noise_rng) * pp.noise_px;
                    dz = rand_normal(noise_rng) * pp.noise_depth;
                }
                const auto& ob = pts[j].obs[static_cast<size_t>(f)];
                if (ob[3] < 0.5) continue;
                const double u = ob[1] + du, vpix = ob[2] + dv;
                Vec3 p;
                if (!lift_point(depth, cam, u, vpix, &p)) continue;
                if (dz != 0.0) {
                    // Re-lift with the perturbed depth along the same pixel ray.
                    const Vec3 p_cam = cam.to_camera(p);
                    p = cam.unproject(u, vpix, p_cam.z() + dz);
                }
                lifted[static_cast<size_t>(v)][j][static_cast<size_t>(f)] = {p, true};
            }
        }
    }

    PipelineResult out;
    out.poses.objects.assign(static_cast<size_t>(num_objects),
                             std::vector<SE3>(static_cast<size_t>(frames)));
    out.fallbacks.assign(static_cast<size_t>(frames), 0);
    out.mean_icp_residual.assign(static_cast<size_t>(num_objects), 0.0);
    std::vector<int> icp_runs(static_cast<size_t>(num_objects), 0);

    for (int f = 1; f < frames; ++f) {
        for (int m = 1; m <= num_objects; ++m) {
            std::vector<Vec3> src, dst;
            for (int v = 0; v < views; ++v) {
                const auto& pts = tracks.views[static_cast<size_t>(v)];
                for (size_t j = 0; j < pts.size(); ++j) {
                    if (pts[j].object != m) continue;
                    const Obs& a = lifted[static_cast<size_t>(v)][j][0];
                    const Obs& b = lifted[static_cast<size_t>(v)][j][static_cast<size_t>(f)];
                    if (a.ok && b.ok) {
                        src.push_back(a.p);
                        dst.push_back(b.p);
                    }
                }
            }
            SE3& pose = out.poses.objects[static_cast<size_t>(m) - 1][static_cast<size_t>(f)];
            if (src.size() >= 3) {
                SE3 init;
                bool have_init = false;
                try {
                    init = fit_rigid(src, dst);
                    have_init = true;
                } catch (const NumericsError&) {
                }
                if (have_init) {
                    const IcpResult r = icp(src, dst, init, pp.icp);
                    pose = std::isfinite(r.residual) ? r.pose : init;
                    out.mean_icp_residual[static_cast<size_t>(m) - 1] += r.residual;
                    icp_runs[static_cast<size_t>(m) - 1] += 1;
                    continue;
                }
            }
            if (!src.empty()) {
                // Too few or degenerate correspondences: translation by the mean shift.
                Vec3 shift = Vec3::Zero();
                for (size_t i = 0; i < src.size(); ++i) shift += dst[i] - src[i];
                pose.r = Mat3::Identity();
                pose.t = shift / static_cast<double>(src.size());
                out.fallbacks[static_cast<size_t>(f)] += 1;
            } else {
                pose = out.poses.objects[static_cast<size_t>(m) - 1][static_cast<size_t>(f) - 1];
                out.fallbacks[static_cast<size_t>(f)] += 1;
                GSDYN_WARN("pipeline: object %d frame %d has no usable tracks, carrying pose",
                           m, f);
            }
        }
    }

    for (int m = 0; m < num_objects; ++m)
        if (icp_runs[static_cast<size_t>(m)] > 0)
            out.mean_icp_residual[static_cast<size_t>(m)] /= icp_runs[static_cast<size_t>(m)];

    save_poses(scene.poses_path(), out.poses);

    if (pp.write_frames) {
        const GaussianFrame frame0 = scene.load_frame(0);
        const std::vector<GaussianFrame> traj = build_trajectories(frame0, ids.hard, out.poses);
        for (size_t f = 1; f < traj.size(); ++f) {
            write_gaussians_ply(scene.frame_path(static_cast<int>(f)), traj[f]);
            out.frames_written += 1;
        }
    }
    return out;
}

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "gsdyn/common.hpp"
#include "gsdyn/render.hpp"

namespace gsdyn {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// ---- ray casting ----------------------------------------------------------------------

// Ray vs one box in its body frame; t is in units of |dir|.
bool ray_box(const RigidBody& b, const Vec3& o, const Vec3& dir, double* t_out, int* face_out) {
    Mat3 r = b.rot();
    Vec3 lo = r.transpose() * (o - b.pos);
    Vec3 ld = r.transpose() * dir;
    double t_enter = -1e300, t_exit = 1e300;
    int enter_axis = -1;
    for (int k = 0; k < 3; ++k) {
        double h = b.shape.half[k];
        if (std::abs(ld[k]) < 1e-14) {
            if (std::abs(lo[k]) > h) return false;
            continue;
        }
        double t1 = (-h - lo[k]) / ld[k];
        double t2 = (h - lo[k]) / ld[k];
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > t_enter) {
            t_enter = t1;
            enter_axis = k;
        }
        t_exit = std::min(t_exit, t2);
        if (t_enter > t_exit) return false;
    }
    if (t_enter <= 0 || enter_axis < 0) return false;
    *t_out = t_enter;
    double coord = lo[enter_axis] + t_enter * ld[enter_axis];
    *face_out = 2 * enter_axis + (coord < 0 ? 1 : 0);
    return true;
}

bool ray_sphere(const RigidBody& b, const Vec3& o, const Vec3& dir, double* t_out) {
    Vec3 oc = o - b.pos;
    double a = dir.squaredNorm();
    double half_b = oc.dot(dir);
    double c = oc.squaredNorm() - b.shape.radius * b.shape.radius;
    double disc = half_b * half_b - a * c;
    if (disc < 0) return false;
    double t = (-half_b - std::sqrt(disc)) / a;
    if (t <= 0) return false;
    *t_out = t;
    return true;
}

}  // namespace

RayHit raycast(const std::vector<RigidBody>& bodies, const Vec3& origin, const Vec3& dir,
               bool include_ground) {
    RayHit best;
    best.t = 1e300;
    for (int i = 0; i < static_cast<int>(bodies.size()); ++i) {
        const RigidBody& b = bodies[static_cast<size_t>(i)];
        double t;
        int face = 0;
        bool hit = b.shape.kind == ShapeKind::Box ? ray_box(b, origin, dir, &t, &face)
                                                  : ray_sphere(b, origin, dir, &t);
        if (hit && t < best.t) {
            best.hit = true;
            best.t = t;
            best.body = i;
            best.face = face;
        }
    }
    if (include_ground && std::abs(dir.z()) > 1e-14) {
        double t = -origin.z() / dir.z();
        if (t > 0 && t < best.t) {
            best.hit = true;
            best.t = t;
            best.body = -2;
            best.face = 0;
        }
    }
    if (best.hit) best.point = origin + best.t * dir;
    return best;
}

// ---- gaussian shells ------------------------------------------------------------------

namespace {

Vec3 jitter_color(const Vec3& base, Rng& rng) {
    Vec3 c;
    for (int k = 0; k < 3; ++k)
        c[k] = std::clamp(base[k] + rand_uniform(rng, -0.05, 0.05), 0.0, 1.0);
    return c;
}

void add_gaussian(GaussianFrame& out, const RigidBody& body, const Vec3& local,
                  const Mat3& local_rot, const Vec3& scale, const Vec3& color) {
    out.center.push_back(body.pose().apply(local));
    out.rot.push_back(quat_mul(body.q, mat_to_quat(local_rot)).normalized());
    out.scale.push_back(scale);
    out.color.push_back(color);
    out.opacity.push_back(0.95);
}

void gaussianize_box(GaussianFrame& out, const RigidBody& body, Rng& rng) {
    const Vec3 h = body.shape.half;
    for (int axis = 0; axis < 3; ++axis) {
        for (double sign : {1.0, -1.0}) {
            int u = (axis + 1) % 3, v = (axis + 2) % 3;
            double eu = 2.0 * h[u], ev = 2.0 * h[v];
            int nu = std::max(1, static_cast<int>(std::lround(eu * 100.0)));
            int nv = std::max(1, static_cast<int>(std::lround(ev * 100.0)));
            double su = eu / nu, sv = ev / nv;
            // Local frame: x along u, y along v (flipped for odd faces to stay
            // right-handed), z along the outward normal.
            Mat3 lr = Mat3::Zero();
            lr(u, 0) = 1;
            lr(v, 1) = sign;
            lr(axis, 2) = sign;
            for (int i = 0; i < nu; ++i)
                for (int j = 0; j < nv; ++j) {
                    Vec3 p = Vec3::Zero();
                    p[axis] = sign * h[axis];
                    p[u] = -h[u] + (i + 0.5) * su;
                    p[v] = -h[v] + (j + 0.5) * sv;
                    add_gaussian(out, body, p, lr, Vec3(0.5 * su, 0.5 * sv, 0.002),
                                 jitter_color(body.color, rng));
                }
        }
    }
}

void gaussianize_sphere(GaussianFrame& out, const RigidBody& body, Rng& rng) {
    double r = body.shape.radius;
    double area_cm2 = 4.0 * std::numbers::pi * r * r * 1e4;
    int n = std::max(8, static_cast<int>(std::lround(area_cm2 / 0.8)));
    double spacing = std::sqrt(0.8) * 0.01;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        double z = 1.0 - 2.0 * (i + 0.5) / n;
        double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden * i;
        Vec3 nrm(rho * std::cos(phi), rho * std::sin(phi), z);
        Vec3 tan1 = std::abs(nrm.z()) < 0.9 ? Vec3(0, 0, 1).cross(nrm).normalized()
                                            : Vec3(1, 0, 0).cross(nrm).normalized();
        Vec3 tan2 = nrm.cross(tan1);
        Mat3 lr;
        lr.col(0) = tan1;
        lr.col(1) = tan2;
        lr.col(2) = nrm;
        add_gaussian(out, body, nrm * r, lr, Vec3(0.5 * spacing, 0.5 * spacing, 0.002),
                     jitter_color(body.color, rng));
    }
}

}  // namespace

GaussianFrame gaussianize(const std::vector<RigidBody>& bodies, Rng& rng,
                          std::vector<int>* object_of) {
    GaussianFrame out;
    if (object_of) object_of->clear();
    for (int i = 0; i < static_cast<int>(bodies.size()); ++i) {
        int before = out.size();
        const RigidBody& b = bodies[static_cast<size_t>(i)];
        if (b.shape.kind == ShapeKind::Box)
            gaussianize_box(out, b, rng);
        else
            gaussianize_sphere(out, b, rng);
        if (object_of)
            for (int g = before; g < out.size(); ++g) object_of->push_back(i + 1);
    }
    out.validate();
    return out;
}

std::vector<SurfacePoint> sample_track_points(const Shape& shape, int count, Rng& rng) {
    std::vector<SurfacePoint> out;
    out.reserve(static_cast<size_t>(count));
    if (shape.kind == ShapeKind::Sphere) {
        for (int i = 0; i < count; ++i) {
            Vec3 d(rand_normal(rng), rand_normal(rng), rand_normal(rng));
            while (d.norm() < 1e-6) d = Vec3(rand_normal(rng), rand_normal(rng), rand_normal(rng));
            out.push_back({d.normalized() * shape.radius, 0});
        }
        return out;
    }
    const Vec3& h = shape.half;
    std::array<double, 6> area{};
    double total = 0;
    for (int f = 0; f < 6; ++f) {
        int axis = f / 2, u = (axis + 1) % 3, v = (axis + 2) % 3;
        area[static_cast<size_t>(f)] = 4.0 * h[u] * h[v];
        total += area[static_cast<size_t>(f)];
    }
    for (int i = 0; i < count; ++i) {
        double pick = rand_uniform(rng, 0.0, total);
        int face = 0;
        double acc = 0;
        for (int f = 0; f < 6; ++f) {
            acc += area[static_cast<size_t>(f)];
            if (pick <= acc || f == 5) {
                face = f;
                break;
            }
        }
        int axis = face / 2, u = (axis + 1) % 3, v = (axis + 2) % 3;
        Vec3 p = Vec3::Zero();
        p[axis] = (face % 2 == 0 ? 1.0 : -1.0) * h[axis];
        // Keep off the face rim so the 2x2 interpolation footprint stays on one face.
        p[u] = rand_uniform(rng, -0.9 * h[u], 0.9 * h[u]);
        p[v] = rand_uniform(rng, -0.9 * h[v], 0.9 * h[v]);
        out.push_back({p, face});
    }
    return out;
}

// ---- scenarios ------------------------------------------------------------------------

namespace {

Vec3 hsv_rgb(double h, double s, double v) {
    double c = v * s;
    double hp = h / 60.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Vec3 rgb;
    if (hp < 1) rgb = Vec3(c, x, 0);
    else if (hp < 2) rgb = Vec3(x, c, 0);
    else if (hp < 3) rgb = Vec3(0, c, x);
    else if (hp < 4) rgb = Vec3(0, x, c);
    else if (hp < 5) rgb = Vec3(x, 0, c);
    else rgb = Vec3(c, 0, x);
    return rgb + Vec3::Constant(v - c);
}

Vec3 palette(int idx) {
    double hue = std::fmod(0.618033988749895 * idx, 1.0) * 360.0;
    return hsv_rgb(hue, 0.62, 0.85);
}

World cube_stack_world(const ScenarioParams& sp, Rng& rng) {
    int lo = sp.min_objects > 0 ? sp.min_objects : 3;
    int hi = sp.max_objects > 0 ? sp.max_objects : 6;
    int n = rand_int(rng, lo, hi);
    World w;
    double z = 0.0;
    double base_x = rand_uniform(rng, -0.02, 0.02);
    double base_y = rand_uniform(rng, -0.02, 0.02);
    for (int i = 0; i < n; ++i) {
        double side = rand_uniform(rng, 0.05, 0.08);
        RigidBody b;
        b.shape = Shape::box(Vec3(side, side, side));
        b.mass = 700.0 * b.shape.volume();
        b.pos = Vec3(base_x + rand_uniform(rng, -0.006, 0.006),
                     base_y + rand_uniform(rng, -0.006, 0.006), z + side * 0.5);
        b.color = palette(i);
        w.bodies.push_back(b);
        z += side;
    }
    // Lateral impulse on a mid-stack cube.
    int target = n / 2;
    double speed = rand_uniform(rng, 1.0, 2.5);
    double theta = rand_uniform(rng, 0.0, kTau);
    w.bodies[static_cast<size_t>(target)].vel =
        Vec3(speed * std::cos(theta), speed * std::sin(theta), 0.0);
    return w;
}

World bowling_world(const ScenarioParams& sp, Rng& rng) {
    int lo = sp.min_objects > 0 ? sp.min_objects : 4;
    int hi = sp.max_objects > 0 ? sp.max_objects : 6;
    int pins = rand_int(rng, lo, hi);
    World w;
    RigidBody ball;
    ball.shape = Shape::sphere(rand_uniform(rng, 0.05, 0.06));
    ball.mass = 1700.0 * ball.shape.volume();
    ball.pos = Vec3(-0.42, rand_uniform(rng, -0.06, 0.06), ball.shape.radius);
    ball.color = palette(0);
    w.bodies.push_back(ball);

    std::vector<Vec3> spots;
    for (int row = 0; spots.size() < static_cast<size_t>(pins); ++row)
        for (int i = 0; i <= row && spots.size() < static_cast<size_t>(pins); ++i)
            spots.push_back(Vec3(0.10 + row * 0.080, (i - row * 0.5) * 0.085, 0.0));
    for (int i = 0; i < pins; ++i) {
        RigidBody pin;
        pin.shape = Shape::box(Vec3(0.04, 0.04, 0.10));
        pin.mass = 650.0 * pin.shape.volume();
        pin.pos = spots[static_cast<size_t>(i)] + Vec3(0, 0, 0.05);
        pin.color = palette(i + 1);
        w.bodies.push_back(pin);
    }
    Vec3 centroid = Vec3::Zero();
    for (int i = 0; i < pins; ++i) centroid += w.bodies[static_cast<size_t>(i + 1)].pos;
    centroid /= pins;
    Vec3 dir = centroid - w.bodies[0].pos;
    dir.z() = 0;
    double yaw = std::atan2(dir.y(), dir.x()) + rand_uniform(rng, -kTau / 36, kTau / 36);
    double speed = rand_uniform(rng, 2.0, 4.0);
    w.bodies[0].vel = Vec3(speed * std::cos(yaw), speed * std::sin(yaw), 0.0);
    return w;
}

}  // namespace

World build_scenario(const ScenarioParams& sp, Rng& rng) {
    if (sp.type == "cube_stack") return cube_stack_world(sp, rng);
    if (sp.type == "bowling") return bowling_world(sp, rng);
    throw ConfigError("unknown scenario type '" + sp.type + "'");
}

std::vector<Camera> scenario_cameras(int width, int height) {
    std::vector<Camera> cams;
    double f = 0.55 * width / std::tan(0.5 * 55.0 * std::numbers::pi / 180.0);
    for (int i = 0; i < 4; ++i) {
        double a = (35.0 + 90.0 * i) * std::numbers::pi / 180.0;
        Vec3 eye(0.9 * std::cos(a), 0.9 * std::sin(a), 0.5);
        cams.push_back(Camera::look_at(eye, Vec3(0, 0, 0.08), Vec3(0, 0, 1), f, f, width,
                                       height));
    }
    return cams;
}

RenderParams scenario_render_params() {
    RenderParams rp;
    rp.background = Vec3(0.80, 0.80, 0.80);
    return rp;
}

// ---- scene emission -------------------------------------------------------------------

namespace {

ImageU8 make_mask(const ContributionMap& cm, const std::vector<int>& object_of,
                  int num_objects) {
    ImageU8 mask(cm.width, cm.height, 1);
    std::vector<double> acc(static_cast<size_t>(num_objects) + 1, 0.0);
    for (int y = 0; y < cm.height; ++y)
        for (int x = 0; x < cm.width; ++x) {
            std::fill(acc.begin(), acc.end(), 0.0);
            double total = 0;
            for (const auto& [gi, g] : cm.at(x, y)) {
                acc[static_cast<size_t>(object_of[static_cast<size_t>(gi)])] += g;
                total += g;
            }
            int best = 0;
            double best_acc = 0.0;
            if (total >= 0.5) {
                for (int m = 1; m <= num_objects; ++m)
                    if (acc[static_cast<size_t>(m)] > best_acc) {
                        best_acc = acc[static_cast<size_t>(m)];
                        best = m;
                    }
            }
            mask.at(x, y, 0) = static_cast<unsigned char>(best);
        }
    return mask;
}

nlohmann::json body_json(const RigidBody& b) {
    nlohmann::json j;
    j["kind"] = b.shape.kind == ShapeKind::Box ? "box" : "sphere";
    if (b.shape.kind == ShapeKind::Box)
        j["extent"] = {2 * b.shape.half.x(), 2 * b.shape.half.y(), 2 * b.shape.half.z()};
    else
        j["radius"] = b.shape.radius;
    j["mass"] = b.mass;
    j["color"] = {b.color.x(), b.color.y(), b.color.z()};
    return j;
}

}  // namespace

void emit_scene(const std::string& dir, const std::string& name, const ScenarioParams& sp,
                uint64_t seed) {
    namespace fs = std::filesystem;
    Rng rng(seed);
    World world = build_scenario(sp, rng);
    const int nb = static_cast<int>(world.bodies.size());

    std::vector<int> object_of;
    GaussianFrame base = gaussianize(world.bodies, rng, &object_of);
    std::vector<std::vector<int>> members(static_cast<size_t>(nb));
    for (int g = 0; g < base.size(); ++g)
        members[static_cast<size_t>(object_of[static_cast<size_t>(g)] - 1)].push_back(g);

    std::vector<std::vector<SurfacePoint>> track_pts(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i)
        track_pts[static_cast<size_t>(i)] =
            sample_track_points(world.bodies[static_cast<size_t>(i)].shape, sp.track_points, rng);

    // Simulate, recording world poses per frame (frame 0 = initial state).
    std::vector<std::vector<SE3>> world_pose(static_cast<size_t>(sp.frames));
    std::vector<std::vector<RigidBody>> body_states(static_cast<size_t>(sp.frames));
    for (int f = 0; f < sp.frames; ++f) {
        world_pose[static_cast<size_t>(f)].resize(static_cast<size_t>(nb));
        for (int i = 0; i < nb; ++i)
            world_pose[static_cast<size_t>(f)][static_cast<size_t>(i)] =
                world.bodies[static_cast<size_t>(i)].pose();
        body_states[static_cast<size_t>(f)] = world.bodies;
        if (f + 1 < sp.frames) world.step_frame();
    }

    Scene scene;
    scene.dir = dir;
    scene.name = name;
    scene.frame_rate = sp.frame_rate;
    scene.frame_count = sp.frames;
    scene.num_objects = nb;
    scene.cameras = scenario_cameras(sp.width, sp.height);

    fs::create_directories(dir + "/frames");
    fs::create_directories(dir + "/truth/frames");
    for (int c = 0; c < scene.num_views(); ++c) {
        fs::create_directories(dir + "/images/cam" + std::to_string(c));
        fs::create_directories(dir + "/masks/cam" + std::to_string(c));
        fs::create_directories(dir + "/depth/cam" + std::to_string(c));
    }
    save_manifest(scene);

    // Object poses relative to frame 0.
    PoseSet truth;
    truth.objects.assign(static_cast<size_t>(nb), std::vector<SE3>(static_cast<size_t>(sp.frames)));
    for (int i = 0; i < nb; ++i)
        for (int f = 0; f < sp.frames; ++f) {
            const SE3& p0 = world_pose[0][static_cast<size_t>(i)];
            const SE3& pf = world_pose[static_cast<size_t>(f)][static_cast<size_t>(i)];
            truth.objects[static_cast<size_t>(i)][static_cast<size_t>(f)] = pf.compose(p0.inverse());
        }
    save_poses(scene.truth_poses_path(), truth);

    nlohmann::json scenario = {{"format", "gsdyn-scenario-v1"},
                               {"type", sp.type},
                               {"seed", seed},
                               {"frames", sp.frames},
                               {"num_objects", nb}};
    for (int i = 0; i < nb; ++i)
        scenario["bodies"].push_back(body_json(world.bodies[static_cast<size_t>(i)]));
    std::ofstream sj(scene.scenario_path());
    sj << scenario.dump(2) << "\n";
    if (!sj) throw IoError("cannot write " + scene.scenario_path());

    const RenderParams rp = scenario_render_params();

    write_gaussians_ply(scene.frame_path(0), base);
    TrackSet tracks;
    tracks.views.assign(static_cast<size_t>(scene.num_views()), {});
    for (int c = 0; c < scene.num_views(); ++c)
        for (int i = 0; i < nb; ++i)
            for (int p = 0; p < sp.track_points; ++p) {
                TrackPoint tp;
                tp.object = i + 1;
                tp.obs.assign(static_cast<size_t>(sp.frames), {0, 0, 0, 0});
                tracks.views[static_cast<size_t>(c)].push_back(std::move(tp));
            }

    for (int f = 0; f < sp.frames; ++f) {
        GaussianFrame frame = base;
        for (int i = 0; i < nb; ++i)
            apply_pose(frame, members[static_cast<size_t>(i)],
                       truth.objects[static_cast<size_t>(i)][static_cast<size_t>(f)]);
        write_gaussians_ply(scene.truth_frame_path(f), frame);

        const std::vector<RigidBody>& st = body_states[static_cast<size_t>(f)];
        for (int c = 0; c < scene.num_views(); ++c) {
            const Camera& cam = scene.cameras[static_cast<size_t>(c)];
            RenderOutput ro = render(frame, cam, rp);
            write_png(scene.image_path(c, f), to_u8_gamma(ro.image));
            ContributionMap cm = contribution(frame, cam, rp);
            write_png(scene.mask_path(c, f), make_mask(cm, object_of, nb));

            ImageF depth(cam.width, cam.height, 1);
            Vec3 origin = cam.center_world();
            for (int y = 0; y < cam.height; ++y)
                for (int x = 0; x < cam.width; ++x) {
                    Vec3 dir = cam.r_wc.transpose() * cam.pixel_dir(x, y);
                    RayHit hit = raycast(st, origin, dir, true);
                    depth.at(x, y, 0) = hit.hit ? static_cast<float>(hit.t) : 0.0f;
                }
            write_pfm(scene.depth_path(c, f), depth);

            int track_idx = 0;
            for (int i = 0; i < nb; ++i) {
                const SE3 pose = world_pose[static_cast<size_t>(f)][static_cast<size_t>(i)];
                for (int p = 0; p < sp.track_points; ++p, ++track_idx) {
                    const SurfacePoint& spt = track_pts[static_cast<size_t>(i)][static_cast<size_t>(p)];
                    Vec3 pw = pose.apply(spt.p);
                    Vec3 pc = cam.to_camera(pw);
                    auto& obs = tracks.views[static_cast<size_t>(c)][static_cast<size_t>(track_idx)]
                                    .obs[static_cast<size_t>(f)];
                    obs = {static_cast<double>(f), 0.0, 0.0, 0.0};
                    if (pc.z() < 0.05) continue;
                    Vec2 uv = cam.project(pc);
                    obs[1] = uv.x();
                    obs[2] = uv.y();
                    int x0 = static_cast<int>(std::floor(uv.x()));
                    int y0 = static_cast<int>(std::floor(uv.y()));
                    if (x0 < 0 || y0 < 0 || x0 + 1 >= cam.width || y0 + 1 >= cam.height)
                        continue;
                    // Occlusion: the ray through the point must reach it first.
                    RayHit self = raycast(st, origin, pw - origin, true);
                    if (!self.hit || self.body != i || self.face != spt.face ||
                        self.t < 1.0 - 1e-6)
                        continue;
                    // The 2x2 interpolation footprint must land on the same face so
                    // depth is bilinear there.
                    bool clean = true;
                    for (int dy = 0; dy < 2 && clean; ++dy)
                        for (int dx = 0; dx < 2 && clean; ++dx) {
                            Vec3 pdir = cam.r_wc.transpose() * cam.pixel_dir(x0 + dx, y0 + dy);
                            RayHit h = raycast(st, origin, pdir, true);
                            if (!h.hit || h.body != i || h.face != spt.face) clean = false;
                        }
                    if (clean) obs[3] = 1.0;
                }
            }
        }
    }
    save_tracks(scene.tracks_path(), tracks);
}

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gsdyn/gaussian.hpp"
#include "gsdyn/render.hpp"
#include "gsdyn/scene.hpp"

namespace gsdyn {

// ---- shapes ---------------------------------------------------------------------------

enum class ShapeKind { Box, Sphere };

struct Shape {
    ShapeKind kind = ShapeKind::Box;
    Vec3 half = Vec3::Zero();  // box half extents
    double radius = 0.0;       // sphere

    static Shape box(const Vec3& full_extent) {
        Shape s;
        s.kind = ShapeKind::Box;
        s.half = full_extent * 0.5;
        return s;
    }
    static Shape sphere(double r) {
        Shape s;
        s.kind = ShapeKind::Sphere;
        s.radius = r;
        return s;
    }
    double volume() const;
    // Principal moments for the given mass (diagonal in the body frame).
    Vec3 inertia_diag(double mass) const;
};

struct RigidBody {
    Shape shape;
    double mass = 1.0;
    Vec3 pos = Vec3::Zero();
    Vec4 q = Vec4(1, 0, 0, 0);
    Vec3 vel = Vec3::Zero();
    Vec3 omega = Vec3::Zero();  // world frame
    Vec3 color = Vec3(0.5, 0.5, 0.5);
    bool contacted = false;  // touched anything during the last substep

    Mat3 rot() const { return quat_to_mat(q); }
    SE3 pose() const { return SE3{rot(), pos}; }
    Mat3 inv_inertia_world() const;
};

// ---- simulation -----------------------------------------------------------------------

struct PhysicsParams {
    double dt = 1.0 / 30.0;
    int substeps = 8;
    double gravity = 9.81;
    double restitution = 0.3;
    double restitution_threshold = 0.25;  // m/s of normal approach below which e = 0
    double friction = 0.5;
    double baumgarte = 0.2;   // body-body position bias factor
    double slop = 5e-4;       // penetration allowance, meters
    double margin = 1e-3;     // contact detection distance
    int iterations = 40;
};

struct Contact {
    int a = -1;
    int b = -1;  // -1 means the ground plane
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::Zero();  // from a toward b (ground normal points up, b = ground)
    double depth = 0.0;          // positive = penetrating
};

class World {
public:
    std::vector<RigidBody> bodies;
    PhysicsParams par;

    // Advances one output frame (par.dt split into par.substeps).
    void step_frame();
    // Contact set at the current configuration (detection margin applied).
    std::vector<Contact> detect_contacts() const;
    // Kinetic + potential energy, J.
    double energy() const;

private:
    void substep(double h);
};

// ---- exact geometry queries -----------------------------------------------------------

struct RayHit {
    bool hit = false;
    double t = 0.0;
    int body = -1;  // -2 = ground plane
    int face = 0;   // boxes: 0..5 for +x,-x,+y,-y,+z,-z in the body frame; spheres: 0
    Vec3 point = Vec3::Zero();
};

// First intersection of the ray with any body (and optionally the ground plane z=0).
RayHit raycast(const std::vector<RigidBody>& bodies, const Vec3& origin, const Vec3& dir,
               bool include_ground);

// ---- gaussian shells and track points -------------------------------------------------

// Quasi-uniform surface sampling: boxes get a 1-per-cm^2 face grid, spheres a Fibonacci
// shell at 1 per 0.8 cm^2. Tangential scale is half the sample spacing, normal 2 mm;
// opacity 0.95; colors are the body color with per-Gaussian jitter.
GaussianFrame gaussianize(const std::vector<RigidBody>& bodies, Rng& rng,
                          std::vector<int>* object_of = nullptr);

// Deterministic body-frame surface points for tracking, with the face they lie on.
struct SurfacePoint {
    Vec3 p = Vec3::Zero();
    int face = 0;
};
std::vector<SurfacePoint> sample_track_points(const Shape& shape, int count, Rng& rng);

// ---- scenarios ------------------------------------------------------------------------

struct ScenarioParams {
    std::string type = "cube_stack";  // or "bowling"
    int frames = 48;
    double frame_rate = 30.0;
    int width = 160, height = 120;
    int min_objects = 0;  // 0 = scenario default range
    int max_objects = 0;
    int track_points = 64;
};

// Builds the initial world for a scenario; the rng drives every random choice.
World build_scenario(const ScenarioParams& sp, Rng& rng);

// Four fixed cameras on a ring looking at the table center.
std::vector<Camera> scenario_cameras(int width, int height);

// Rendering settings the generator used; consumers must render with the same ones for
// images to be comparable.
RenderParams scenario_render_params();

// Simulates, renders, and writes a complete scene directory: manifest, frames/0000.ply,
// per-view images/masks/depth for every frame, tracks.json, and a truth/ sidecar with
// all frames, object poses relative to frame 0, and the scenario description. Everything
// is a pure function of (sp, seed).
void emit_scene(const std::string& dir, const std::string& name, const ScenarioParams& sp,
                uint64_t seed);

}  // namespace gsdyn

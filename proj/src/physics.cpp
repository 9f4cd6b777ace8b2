// SPDX-License-Identifier: Apache-2.0
//
// Impulse-based rigid body simulation on the z=0 table plane. Design notes:
//  - Free flight integrates positions ballistically (x += v h + g h^2 / 2) and rotations
//    about the constant world angular velocity axis. Both conserve energy to rounding, so
//    contact-free intervals never gain energy.
//  - Bodies touching something use semi-implicit Euler plus sequential impulses.
//  - Ground penetration is removed by direct position projection after integration, which
//    keeps bodies on the plane without injecting bounce energy. Body-body penetration is
//    handled by a Baumgarte velocity bias instead.
#include <algorithm>
#include <array>
#include <numbers>

#include "gsdyn/common.hpp"
#include "gsdyn/synth.hpp"

namespace gsdyn {

inline constexpr double kPi = std::numbers::pi;

double Shape::volume() const {
    if (kind == ShapeKind::Box) return 8.0 * half.x() * half.y() * half.z();
    return 4.0 / 3.0 * kPi * radius * radius * radius;
}

Vec3 Shape::inertia_diag(double mass) const {
    if (kind == ShapeKind::Box) {
        Vec3 e = 2.0 * half;
        return mass / 12.0 *
               Vec3(e.y() * e.y() + e.z() * e.z(), e.x() * e.x() + e.z() * e.z(),
                    e.x() * e.x() + e.y() * e.y());
    }
    double i = 0.4 * mass * radius * radius;
    return Vec3(i, i, i);
}

Mat3 RigidBody::inv_inertia_world() const {
    Vec3 d = shape.inertia_diag(mass);
    Mat3 r = rot();
    return r * Vec3(1.0 / d.x(), 1.0 / d.y(), 1.0 / d.z()).asDiagonal() * r.transpose();
}

namespace {

std::array<Vec3, 8> box_corners(const RigidBody& b) {
    Mat3 r = b.rot();
    std::array<Vec3, 8> out;
    int i = 0;
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1})
                out[static_cast<size_t>(i++)] =
                    b.pos + r * Vec3(sx * b.shape.half.x(), sy * b.shape.half.y(),
                                     sz * b.shape.half.z());
    return out;
}

void ground_contacts(int ia, const RigidBody& b, double margin, std::vector<Contact>& out) {
    if (b.shape.kind == ShapeKind::Sphere) {
        double d = b.shape.radius - b.pos.z();
        if (d > -margin) {
            Contact c;
            c.a = ia;
            c.b = -1;
            c.normal = Vec3(0, 0, -1);  // from body toward the ground
            c.point = Vec3(b.pos.x(), b.pos.y(), 0.0);
            c.depth = d;
            out.push_back(c);
        }
        return;
    }
    for (const Vec3& p : box_corners(b)) {
        if (-p.z() > -margin) {
            Contact c;
            c.a = ia;
            c.b = -1;
            c.normal = Vec3(0, 0, -1);
            c.point = p;
            c.depth = -p.z();
            out.push_back(c);
        }
    }
}

void sphere_sphere(int ia, int ib, const RigidBody& a, const RigidBody& b, double margin,
                   std::vector<Contact>& out) {
    Vec3 d = b.pos - a.pos;
    double dist = d.norm();
    double pen = a.shape.radius + b.shape.radius - dist;
    if (pen <= -margin || dist < 1e-12) return;
    Contact c;
    c.a = ia;
    c.b = ib;
    c.normal = d / dist;
    c.point = a.pos + c.normal * (a.shape.radius - 0.5 * pen);
    c.depth = pen;
    out.push_back(c);
}

void sphere_box(int is, int ib, const RigidBody& s, const RigidBody& box, double margin,
                std::vector<Contact>& out, bool flip) {
    Mat3 r = box.rot();
    Vec3 local = r.transpose() * (s.pos - box.pos);
    Vec3 clamped = local.cwiseMax(-box.shape.half).cwiseMin(box.shape.half);
    Vec3 diff = local - clamped;
    double dist = diff.norm();
    Vec3 n_local;
    double pen;
    if (dist > 1e-12) {
        n_local = diff / dist;  // from box surface toward sphere center
        pen = s.shape.radius - dist;
    } else {
        // Center inside the box: push out along the nearest face.
        int axis = 0;
        double best = box.shape.half.x() - std::abs(local.x());
        for (int k = 1; k < 3; ++k) {
            double v = box.shape.half[k] - std::abs(local[k]);
            if (v < best) {
                best = v;
                axis = k;
            }
        }
        n_local = Vec3::Zero();
        n_local[axis] = local[axis] >= 0 ? 1.0 : -1.0;
        pen = s.shape.radius + best;
    }
    if (pen <= -margin) return;
    Vec3 n_world = r * n_local;  // from box toward sphere
    Contact c;
    c.point = box.pos + r * clamped;
    c.depth = pen;
    if (flip) {  // a is the box
        c.a = ib;
        c.b = is;
        c.normal = n_world;
    } else {  // a is the sphere
        c.a = is;
        c.b = ib;
        c.normal = -n_world;
    }
    out.push_back(c);
}

// Face corners of a box in cyclic order; face 2a + (s<0): normal s * axis a.
std::array<Vec3, 4> face_quad(const RigidBody& b, int axis, double sign) {
    Mat3 r = b.rot();
    int u = (axis + 1) % 3, v = (axis + 2) % 3;
    Vec3 n = r.col(axis) * sign;
    Vec3 cu = r.col(u) * b.shape.half[u];
    Vec3 cv = r.col(v) * b.shape.half[v];
    Vec3 c0 = b.pos + r.col(axis) * (sign * b.shape.half[axis]);
    return {c0 + cu + cv, c0 - cu + cv, c0 - cu - cv, c0 + cu - cv};
}

// Keeps the part of the polygon with plane_n . p <= plane_d.
std::vector<Vec3> clip_halfplane(const std::vector<Vec3>& poly, const Vec3& plane_n,
                                 double plane_d) {
    std::vector<Vec3> out;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec3& cur = poly[i];
        const Vec3& nxt = poly[(i + 1) % n];
        double dc = plane_n.dot(cur) - plane_d;
        double dn = plane_n.dot(nxt) - plane_d;
        if (dc <= 0) out.push_back(cur);
        if ((dc < 0 && dn > 0) || (dc > 0 && dn < 0))
            out.push_back(cur + (nxt - cur) * (dc / (dc - dn)));
    }
    return out;
}

// Closest points between two segments (Ericson, Real-Time Collision Detection 5.1.9).
void segment_closest(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2,
                     Vec3& c1, Vec3& c2) {
    Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
    double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
    double s = 0.0, t = 0.0;
    if (a <= 1e-15 && e <= 1e-15) {
        c1 = p1;
        c2 = p2;
        return;
    }
    if (a <= 1e-15) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        double c = d1.dot(r);
        if (e <= 1e-15) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            double b = d1.dot(d2);
            double denom = a * e - b * b;
            if (denom > 1e-15) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
            t = (b * s + f) / e;
            if (t < 0) {
                t = 0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1) {
                t = 1;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    c1 = p1 + d1 * s;
    c2 = p2 + d2 * t;
}

void box_box(int ia, int ib, const RigidBody& a, const RigidBody& b, double margin,
             std::vector<Contact>& out) {
    Mat3 ra = a.rot(), rb = b.rot();
    Vec3 d = b.pos - a.pos;

    auto separation = [&](const Vec3& axis) {
        double proj_a = 0, proj_b = 0;
        for (int k = 0; k < 3; ++k) {
            proj_a += a.shape.half[k] * std::abs(axis.dot(ra.col(k)));
            proj_b += b.shape.half[k] * std::abs(axis.dot(rb.col(k)));
        }
        return std::abs(axis.dot(d)) - proj_a - proj_b;
    };

    double best_face_sep = -1e300;
    int best_face = -1;  // 0..2 on a, 3..5 on b
    for (int k = 0; k < 3; ++k) {
        double s1 = separation(ra.col(k));
        if (s1 > best_face_sep) {
            best_face_sep = s1;
            best_face = k;
        }
        double s2 = separation(rb.col(k));
        if (s2 > best_face_sep) {
            best_face_sep = s2;
            best_face = 3 + k;
        }
    }
    if (best_face_sep > margin) return;

    double best_edge_sep = -1e300;
    int best_edge = -1;
    Vec3 best_edge_axis = Vec3::Zero();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            Vec3 axis = ra.col(i).cross(rb.col(j));
            double len = axis.norm();
            if (len < 1e-9) continue;  // parallel edges, covered by face axes
            axis /= len;
            double s = separation(axis);
            if (s > best_edge_sep) {
                best_edge_sep = s;
                best_edge = i * 3 + j;
                best_edge_axis = axis;
            }
        }
    if (best_edge_sep > margin) return;

    // Prefer face manifolds unless the edge axis is clearly more separating; face contact
    // gives 4-point manifolds that keep stacks stable.
    if (best_edge >= 0 && best_edge_sep > best_face_sep + 1e-4) {
        Vec3 n = best_edge_axis;
        if (n.dot(d) < 0) n = -n;  // from a toward b
        int ei = best_edge / 3, ej = best_edge % 3;
        // Supporting edge of a along n: endpoints differ along axis ei, the other two
        // coordinates take the corner most along n.
        Vec3 pa = a.pos, pb = b.pos;
        for (int k = 0; k < 3; ++k) {
            if (k != ei) pa += ra.col(k) * (ra.col(k).dot(n) > 0 ? a.shape.half[k] : -a.shape.half[k]);
            if (k != ej) pb += rb.col(k) * (rb.col(k).dot(n) < 0 ? b.shape.half[k] : -b.shape.half[k]);
        }
        Vec3 a0 = pa - ra.col(ei) * a.shape.half[ei], a1 = pa + ra.col(ei) * a.shape.half[ei];
        Vec3 b0 = pb - rb.col(ej) * b.shape.half[ej], b1 = pb + rb.col(ej) * b.shape.half[ej];
        Vec3 c1, c2;
        segment_closest(a0, a1, b0, b1, c1, c2);
        Contact c;
        c.a = ia;
        c.b = ib;
        c.normal = n;
        c.point = 0.5 * (c1 + c2);
        c.depth = -best_edge_sep;
        out.push_back(c);
        return;
    }

    const bool ref_is_a = best_face < 3;
    const RigidBody& ref = ref_is_a ? a : b;
    const RigidBody& inc = ref_is_a ? b : a;
    Mat3 rr = ref.rot(), ri = inc.rot();
    int ref_axis = best_face % 3;
    Vec3 to_other = ref_is_a ? d : -d;
    double ref_sign = rr.col(ref_axis).dot(to_other) >= 0 ? 1.0 : -1.0;
    Vec3 ref_n = rr.col(ref_axis) * ref_sign;  // outward, toward the incident box

    int inc_axis = 0;
    double most_anti = 1e300;
    double inc_sign = 1.0;
    for (int k = 0; k < 3; ++k)
        for (double s : {-1.0, 1.0}) {
            double dot = (ri.col(k) * s).dot(ref_n);
            if (dot < most_anti) {
                most_anti = dot;
                inc_axis = k;
                inc_sign = s;
            }
        }

    auto quad = face_quad(inc, inc_axis, inc_sign);
    std::vector<Vec3> poly(quad.begin(), quad.end());
    for (int k = 0; k < 3; ++k) {
        if (k == ref_axis) continue;
        Vec3 side = rr.col(k);
        double center = side.dot(ref.pos);
        poly = clip_halfplane(poly, side, center + ref.shape.half[k]);
        if (poly.empty()) return;
        poly = clip_halfplane(poly, -side, -(center - ref.shape.half[k]));
        if (poly.empty()) return;
    }
    double face_d = ref_n.dot(ref.pos) + ref.shape.half[ref_axis];
    for (const Vec3& p : poly) {
        double pen = face_d - ref_n.dot(p);
        if (pen <= -margin) continue;
        Contact c;
        c.a = ia;
        c.b = ib;
        c.normal = ref_is_a ? ref_n : Vec3(-ref_n);
        c.point = p;
        c.depth = pen;
        out.push_back(c);
    }
}

}  // namespace

std::vector<Contact> World::detect_contacts() const {
    std::vector<Contact> out;
    const int n = static_cast<int>(bodies.size());
    for (int i = 0; i < n; ++i) ground_contacts(i, bodies[static_cast<size_t>(i)], par.margin, out);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const RigidBody& a = bodies[static_cast<size_t>(i)];
            const RigidBody& b = bodies[static_cast<size_t>(j)];
            if (a.shape.kind == ShapeKind::Sphere && b.shape.kind == ShapeKind::Sphere)
                sphere_sphere(i, j, a, b, par.margin, out);
            else if (a.shape.kind == ShapeKind::Sphere)
                sphere_box(i, j, a, b, par.margin, out, false);
            else if (b.shape.kind == ShapeKind::Sphere)
                sphere_box(j, i, b, a, par.margin, out, true);
            else
                box_box(i, j, a, b, par.margin, out);
        }
    return out;
}

double World::energy() const {
    double e = 0.0;
    for (const RigidBody& b : bodies) {
        e += 0.5 * b.mass * b.vel.squaredNorm();
        e += b.mass * par.gravity * b.pos.z();
        Vec3 wb = b.rot().transpose() * b.omega;
        Vec3 di = b.shape.inertia_diag(b.mass);
        e += 0.5 * wb.dot(di.asDiagonal() * wb);
    }
    return e;
}

namespace {

struct Constraint {
    Contact c;
    Vec3 t1 = Vec3::Zero(), t2 = Vec3::Zero();
    Vec3 ra = Vec3::Zero(), rb = Vec3::Zero();
    double mass_n = 0, mass_t1 = 0, mass_t2 = 0;
    double target = 0;  // desired outgoing normal speed (restitution + bias)
    double pn = 0, pt1 = 0, pt2 = 0;
};

Vec3 point_velocity(const RigidBody& b, const Vec3& r) { return b.vel + b.omega.cross(r); }

}  // namespace

void World::substep(double h) {
    std::vector<Contact> contacts = detect_contacts();

    for (RigidBody& b : bodies) b.contacted = false;
    for (const Contact& c : contacts) {
        bodies[static_cast<size_t>(c.a)].contacted = true;
        if (c.b >= 0) bodies[static_cast<size_t>(c.b)].contacted = true;
    }

    for (RigidBody& b : bodies)
        if (b.contacted) b.vel.z() -= par.gravity * h;

    std::vector<Constraint> cons;
    cons.reserve(contacts.size());
    for (const Contact& c : contacts) {
        Constraint k;
        k.c = c;
        RigidBody& a = bodies[static_cast<size_t>(c.a)];
        k.ra = c.point - a.pos;
        Vec3 urel = -point_velocity(a, k.ra);
        Mat3 inv_ia = a.inv_inertia_world();
        double inv_ma = 1.0 / a.mass;
        Mat3 inv_ib = Mat3::Zero();
        double inv_mb = 0.0;
        if (c.b >= 0) {
            RigidBody& b = bodies[static_cast<size_t>(c.b)];
            k.rb = c.point - b.pos;
            urel += point_velocity(b, k.rb);
            inv_ib = b.inv_inertia_world();
            inv_mb = 1.0 / b.mass;
        }
        double un = urel.dot(c.normal);
        double approach = -un;
        if (approach > par.restitution_threshold) k.target = par.restitution * approach;
        if (c.b >= 0)  // ground penetration is projected away instead
            k.target += std::min(par.baumgarte / h * std::max(c.depth - par.slop, 0.0), 0.5);

        // Tangent frame orthogonal to the normal.
        Vec3 any = std::abs(c.normal.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
        k.t1 = c.normal.cross(any).normalized();
        k.t2 = c.normal.cross(k.t1);

        auto eff_mass = [&](const Vec3& dir) {
            double m = inv_ma + inv_mb;
            Vec3 ta = k.ra.cross(dir);
            m += dir.dot((inv_ia * ta).cross(k.ra));
            if (c.b >= 0) {
                Vec3 tb = k.rb.cross(dir);
                m += dir.dot((inv_ib * tb).cross(k.rb));
            }
            return 1.0 / m;
        };
        k.mass_n = eff_mass(c.normal);
        k.mass_t1 = eff_mass(k.t1);
        k.mass_t2 = eff_mass(k.t2);
        cons.push_back(k);
    }

    auto apply = [&](const Constraint& k, const Vec3& impulse) {
        RigidBody& a = bodies[static_cast<size_t>(k.c.a)];
        a.vel -= impulse / a.mass;
        a.omega -= a.inv_inertia_world() * k.ra.cross(impulse);
        if (k.c.b >= 0) {
            RigidBody& b = bodies[static_cast<size_t>(k.c.b)];
            b.vel += impulse / b.mass;
            b.omega += b.inv_inertia_world() * k.rb.cross(impulse);
        }
    };

    for (int it = 0; it < par.iterations; ++it) {
        for (Constraint& k : cons) {
            RigidBody& a = bodies[static_cast<size_t>(k.c.a)];
            Vec3 urel = -point_velocity(a, k.ra);
            if (k.c.b >= 0) urel += point_velocity(bodies[static_cast<size_t>(k.c.b)], k.rb);
            double un = urel.dot(k.c.normal);
            double dp = -k.mass_n * (un - k.target);
            double pn_new = std::max(k.pn + dp, 0.0);
            apply(k, k.c.normal * (pn_new - k.pn));
            k.pn = pn_new;

            double max_f = par.friction * k.pn;
            urel = -point_velocity(a, k.ra);
            if (k.c.b >= 0) urel += point_velocity(bodies[static_cast<size_t>(k.c.b)], k.rb);
            double dt1 = -k.mass_t1 * urel.dot(k.t1);
            double t1_new = std::clamp(k.pt1 + dt1, -max_f, max_f);
            apply(k, k.t1 * (t1_new - k.pt1));
            k.pt1 = t1_new;

            urel = -point_velocity(a, k.ra);
            if (k.c.b >= 0) urel += point_velocity(bodies[static_cast<size_t>(k.c.b)], k.rb);
            double dt2 = -k.mass_t2 * urel.dot(k.t2);
            double t2_new = std::clamp(k.pt2 + dt2, -max_f, max_f);
            apply(k, k.t2 * (t2_new - k.pt2));
            k.pt2 = t2_new;
        }
    }

    for (RigidBody& b : bodies) {
        // Suppress solver residue so resting bodies stay bit-for-bit at rest.
        if (b.vel.norm() < 1e-9) b.vel = Vec3::Zero();
        if (b.omega.norm() < 1e-9) b.omega = Vec3::Zero();
        if (b.contacted) {
            b.pos += b.vel * h;
        } else {
            b.pos += b.vel * h + Vec3(0, 0, -0.5 * par.gravity * h * h);
            b.vel.z() -= par.gravity * h;
        }
        double angle = b.omega.norm() * h;
        if (angle > 0) {
            Vec3 axis = b.omega / b.omega.norm();
            double half_a = 0.5 * angle;
            Vec4 dq(std::cos(half_a), std::sin(half_a) * axis.x(),
                    std::sin(half_a) * axis.y(), std::sin(half_a) * axis.z());
            b.q = quat_mul(dq, b.q).normalized();
        }
        // Project out any ground penetration left after integration.
        double pen = 0.0;
        if (b.shape.kind == ShapeKind::Sphere) {
            pen = b.shape.radius - b.pos.z();
        } else {
            for (const Vec3& p : box_corners(b)) pen = std::max(pen, -p.z());
        }
        if (pen > 0) b.pos.z() += pen;
    }
}

void World::step_frame() {
    double h = par.dt / par.substeps;
    for (int s = 0; s < par.substeps; ++s) substep(h);
}

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
// Splat renderer: the tiled production path against an all-pairs per-pixel reference,
// the contribution/transmittance accounting identity, analytic gradients against finite
// differences, and the image loss / gamma helpers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "gsdyn/gaussian.hpp"
#include "gsdyn/image.hpp"
#include "gsdyn/render.hpp"

using namespace gsdyn;

namespace {

using Rng = std::mt19937_64;

double uni(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec4 random_unit_quat(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

// Scatters Gaussians through a box in front of the origin-facing cameras, plus a few
// pathological ones (behind the camera, far outside the frustum, one very broad) to
// exercise the culling paths.
GaussianFrame random_frame(Rng& rng, int n) {
    GaussianFrame f;
    f.resize(n);
    for (int i = 0; i < n; ++i) {
        f.center[i] = Vec3(uni(rng, -0.25, 0.25), uni(rng, -0.25, 0.25), uni(rng, -0.1, 0.3));
        f.rot[i] = random_unit_quat(rng);
        double s = std::exp(uni(rng, std::log(0.002), std::log(0.04)));
        f.scale[i] = Vec3(s * uni(rng, 0.5, 2.0), s * uni(rng, 0.5, 2.0), s * uni(rng, 0.5, 2.0));
        f.color[i] = Vec3(uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0, 1));
        f.opacity[i] = uni(rng, 0.05, 1.0);
    }
    if (n >= 4) {
        f.center[0] = Vec3(0, 0, -5.0);   // behind every camera
        f.center[1] = Vec3(40.0, 0, 0.1); // far outside the image
        f.scale[2] = Vec3(0.5, 0.5, 0.5); // covers many tiles at once
        f.scale[3] = Vec3(1e-4, 1e-4, 1e-4);
    }
    return f;
}

std::vector<Camera> orbit_cameras(int count, int width, int height) {
    std::vector<Camera> cams;
    for (int v = 0; v < count; ++v) {
        double a = 2.0 * M_PI * v / count + 0.31;
        Vec3 eye(1.1 * std::cos(a), 1.1 * std::sin(a), 0.7);
        cams.push_back(Camera::look_at(eye, Vec3(0, 0, 0.05), Vec3(0, 0, 1),
                                       0.9 * width, 0.9 * width, width, height));
    }
    return cams;
}

// Reference projection, written out by hand: camera-space point, perspective Jacobian,
// world covariance pushed through rotation and projection, low-pass added on the
// diagonal.
struct RefSplat {
    Vec2 mean;
    Mat2 inv_cov;
    double depth = 0;
    int index = -1;
};

std::vector<RefSplat> ref_project(const GaussianFrame& frame, const Camera& cam,
                                  const RenderParams& params) {
    std::vector<RefSplat> out;
    for (int i = 0; i < frame.size(); ++i) {
        Vec3 p = cam.r_wc * frame.center[i] + cam.t_wc;
        if (p.z() <= params.near_plane) continue;
        RefSplat s;
        s.index = i;
        s.depth = p.z();
        s.mean = Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
        Mat3 rot = quat_to_mat(frame.rot[i]);
        Vec3 sc = frame.scale[i];
        Mat3 world_cov =
            rot * Vec3(sc.x() * sc.x(), sc.y() * sc.y(), sc.z() * sc.z()).asDiagonal() *
            rot.transpose();
        Eigen::Matrix<double, 2, 3> jac;
        jac.setZero();
        jac(0, 0) = cam.fx / p.z();
        jac(0, 2) = -cam.fx * p.x() / (p.z() * p.z());
        jac(1, 1) = cam.fy / p.z();
        jac(1, 2) = -cam.fy * p.y() / (p.z() * p.z());
        Mat2 cov = jac * (cam.r_wc * world_cov * cam.r_wc.transpose()) * jac.transpose();
        cov(0, 0) += params.lowpass;
        cov(1, 1) += params.lowpass;
        double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
        if (det <= 0.0) continue;
        s.inv_cov << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
        s.inv_cov /= det;
        out.push_back(s);
    }
    std::sort(out.begin(), out.end(), [](const RefSplat& a, const RefSplat& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });
    return out;
}

// Reference render: every pixel walks the full depth-sorted list, no tiling, no
// footprint bounding. Shares only the low-level math conventions with the production
// path, not its code.
void ref_render(const GaussianFrame& frame, const Camera& cam, const RenderParams& params,
                ImageF* image, ImageF* transmittance) {
    std::vector<RefSplat> splats = ref_project(frame, cam, params);
    *image = ImageF(cam.width, cam.height, 3);
    *transmittance = ImageF(cam.width, cam.height, 1);
    double cut2 = params.cutoff_sigma * params.cutoff_sigma;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double t = 1.0;
            Vec3 c = Vec3::Zero();
            for (const RefSplat& s : splats) {
                if (t < params.term_transmittance) break;
                Vec2 d(x - s.mean.x(), y - s.mean.y());
                double q = d.dot(s.inv_cov * d);
                if (q > cut2) continue;
                double a = frame.opacity[static_cast<size_t>(s.index)] * std::exp(-0.5 * q);
                if (a > params.alpha_max) a = params.alpha_max;
                if (a <= 0.0) continue;
                c += (a * t) * frame.color[static_cast<size_t>(s.index)];
                t -= a * t;
            }
            Vec3 rgb = c + t * params.background;
            image->at(x, y, 0) = rgb.x();
            image->at(x, y, 1) = rgb.y();
            image->at(x, y, 2) = rgb.z();
            transmittance->at(x, y, 0) = t;
        }
    }
}

double max_abs_diff(const ImageF& a, const ImageF& b) {
    REQUIRE(a.px.size() == b.px.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.px.size(); ++i)
        worst = std::max(worst, std::abs(a.px[i] - b.px[i]));
    return worst;
}

// Axis-aligned camera whose optical axis passes exactly through pixel (cx, cy), for
// tests that need a Gaussian centered on a pixel.
Camera straight_camera(int width, int height) {
    Camera cam;
    cam.fx = cam.fy = 100.0;
    cam.cx = 16.0;
    cam.cy = 12.0;
    cam.width = width;
    cam.height = height;
    return cam;
}

}  // namespace

TEST_CASE("projection matches a hand-rolled single gaussian computation") {
    RenderParams params;
    Camera cam = Camera::look_at(Vec3(0.8, -0.4, 0.6), Vec3(0, 0, 0), Vec3(0, 0, 1),
                                 50.0, 55.0, 64, 48);
    GaussianFrame f;
    f.resize(1);
    f.center[0] = Vec3(0.03, -0.02, 0.05);
    f.rot[0] = Vec4(0.9, 0.1, -0.3, 0.2).normalized();
    f.scale[0] = Vec3(0.02, 0.01, 0.03);

    ProjectedGaussian g;
    REQUIRE(project_gaussian(f.center[0], f.covariance(0), cam, params, &g));
    std::vector<RefSplat> ref = ref_project(f, cam, params);
    REQUIRE(ref.size() == 1);
    CHECK(g.depth == doctest::Approx(ref[0].depth).epsilon(1e-14));
    CHECK((g.mean - ref[0].mean).norm() <= 1e-12);
    Mat2 inv = g.cov.inverse();
    CHECK((inv - ref[0].inv_cov).norm() <= 1e-9 * ref[0].inv_cov.norm());
}

TEST_CASE("points on or behind the near plane are culled") {
    RenderParams params;
    Camera cam = straight_camera(33, 25);
    GaussianFrame f;
    f.resize(1);
    f.scale[0] = Vec3(0.01, 0.01, 0.01);
    ProjectedGaussian g;

    f.center[0] = Vec3(0, 0, -1.0);
    CHECK_FALSE(project_gaussian(f.center[0], f.covariance(0), cam, params, &g));
    f.center[0] = Vec3(0, 0, params.near_plane);
    CHECK_FALSE(project_gaussian(f.center[0], f.covariance(0), cam, params, &g));
    f.center[0] = Vec3(0, 0, params.near_plane + 1e-6);
    CHECK(project_gaussian(f.center[0], f.covariance(0), cam, params, &g));

    // A frame with nothing renderable produces pure background.
    f.center[0] = Vec3(0, 0, -1.0);
    RenderOutput out = render(f, cam, params);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            CHECK(out.transmittance.at(x, y, 0) == 1.0);
            for (int c = 0; c < 3; ++c) CHECK(out.image.at(x, y, c) == params.background[c]);
        }
}

TEST_CASE("tiled render matches the all-pairs reference on random scenes") {
    Rng rng(4051);
    RenderParams params;
    params.background = Vec3(0.15, 0.4, 0.75);
    // Image sizes chosen to leave ragged partial tiles on both axes.
    struct Shape {
        int w, h, n;
    };
    for (Shape s : {Shape{51, 37, 120}, Shape{64, 48, 220}, Shape{48, 64, 220}}) {
        GaussianFrame f = random_frame(rng, s.n);
        for (const Camera& cam : orbit_cameras(3, s.w, s.h)) {
            RenderOutput out = render(f, cam, params);
            ImageF ref_img, ref_t;
            ref_render(f, cam, params, &ref_img, &ref_t);
            CHECK(max_abs_diff(out.image, ref_img) <= 1e-12);
            CHECK(max_abs_diff(out.transmittance, ref_t) <= 1e-12);
        }
    }
}

TEST_CASE("recorded contributions and final transmittance account for all light") {
    Rng rng(902);
    RenderParams params;
    params.gamma_floor = 0.0;  // record everything so the budget closes exactly
    for (int scene = 0; scene < 4; ++scene) {
        GaussianFrame f = random_frame(rng, 150);
        for (const Camera& cam : orbit_cameras(2, 48, 36)) {
            ContributionMap map = contribution(f, cam, params);
            RenderOutput out = render(f, cam, params);
            REQUIRE(map.width == cam.width);
            REQUIRE(map.height == cam.height);
            double worst = 0.0;
            for (int y = 0; y < cam.height; ++y)
                for (int x = 0; x < cam.width; ++x) {
                    double sum = 0.0;
                    for (const auto& [index, gamma] :
                         map.pixels[static_cast<size_t>(y) * map.width + x]) {
                        CHECK(index >= 0);
                        CHECK(index < f.size());
                        CHECK(gamma > 0.0);
                        sum += gamma;
                    }
                    worst = std::max(
                        std::abs(sum + out.transmittance.at(x, y, 0) - 1.0), worst);
                }
            CHECK(worst <= 1e-12);
        }
    }
}

TEST_CASE("pixel colors are exactly the contribution-weighted blend") {
    Rng rng(77);
    RenderParams params;
    params.gamma_floor = 0.0;
    params.background = Vec3(0.3, 0.2, 0.1);
    GaussianFrame f = random_frame(rng, 100);
    Camera cam = orbit_cameras(1, 40, 30)[0];
    ContributionMap map = contribution(f, cam, params);
    RenderOutput out = render(f, cam, params);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Vec3 c = out.transmittance.at(x, y, 0) * params.background;
            for (const auto& [index, gamma] :
                 map.pixels[static_cast<size_t>(y) * map.width + x])
                c += gamma * f.color[static_cast<size_t>(index)];
            for (int ch = 0; ch < 3; ++ch)
                CHECK(std::abs(c[ch] - out.image.at(x, y, ch)) <= 1e-12);
        }
}

TEST_CASE("the sparse map drops contributions at or below the floor") {
    Rng rng(515);
    RenderParams params;  // default gamma_floor
    GaussianFrame f = random_frame(rng, 150);
    Camera cam = orbit_cameras(1, 48, 36)[0];
    ContributionMap map = contribution(f, cam, params);
    size_t entries = 0;
    for (const auto& px : map.pixels)
        for (const auto& [index, gamma] : px) {
            CHECK(gamma > params.gamma_floor);
            ++entries;
        }
    CHECK(entries > 0);
}

TEST_CASE("depth ties between coincident gaussians resolve by index") {
    RenderParams params;
    params.background = Vec3(0, 0, 0);
    Camera cam = straight_camera(33, 25);
    GaussianFrame f;
    f.resize(2);
    for (int i = 0; i < 2; ++i) {
        f.center[i] = Vec3(0, 0, 1.0);
        f.scale[i] = Vec3(0.05, 0.05, 0.05);
        f.opacity[i] = 0.5;
    }
    f.color[0] = Vec3(1, 0, 0);
    f.color[1] = Vec3(0, 0, 1);

    // Both project to identical footprints at identical depth; index 0 must composite
    // first. At the central pixel q = 0, so alpha is exactly the opacity.
    RenderOutput out = render(f, cam, params);
    double a = 0.5;
    CHECK(out.image.at(16, 12, 0) == doctest::Approx(a).epsilon(1e-12));
    CHECK(out.image.at(16, 12, 2) == doctest::Approx((1 - a) * a).epsilon(1e-12));

    std::swap(f.color[0], f.color[1]);
    out = render(f, cam, params);
    CHECK(out.image.at(16, 12, 2) == doctest::Approx(a).epsilon(1e-12));
    CHECK(out.image.at(16, 12, 0) == doctest::Approx((1 - a) * a).epsilon(1e-12));
}

TEST_CASE("peak alpha is clamped") {
    RenderParams params;
    params.background = Vec3(1, 1, 1);
    Camera cam = straight_camera(33, 25);
    GaussianFrame f;
    f.resize(1);
    f.center[0] = Vec3(0, 0, 1.0);
    f.scale[0] = Vec3(0.2, 0.2, 0.2);  // broad: the central pixel sits at the peak
    f.color[0] = Vec3(0, 1, 0);
    f.opacity[0] = 1.0;
    RenderOutput out = render(f, cam, params);
    CHECK(out.image.at(16, 12, 1) ==
          doctest::Approx(params.alpha_max + (1 - params.alpha_max)).epsilon(1e-12));
    CHECK(out.image.at(16, 12, 0) == doctest::Approx(1 - params.alpha_max).epsilon(1e-12));
    CHECK(out.transmittance.at(16, 12, 0) ==
          doctest::Approx(1 - params.alpha_max).epsilon(1e-12));
}

TEST_CASE("compositing stops once transmittance is spent") {
    RenderParams params;
    params.gamma_floor = 0.0;
    Camera cam = straight_camera(33, 25);
    GaussianFrame f;
    f.resize(5);
    for (int i = 0; i < 5; ++i) {
        f.center[i] = Vec3(0, 0, 1.0 + 0.1 * i);
        f.scale[i] = Vec3(0.3, 0.3, 0.3);
        f.opacity[i] = 0.95;  // exact alpha at the central pixel, well below the clamp
        f.color[i] = Vec3(0.2 * i, 0.5, 0.5);
    }
    // At the central pixel each layer keeps 5% of the light: transmittance is 1.25e-4
    // after three layers (still above the 1e-4 termination threshold, so a fourth
    // composites) and 6.25e-6 after four, so the fifth never does.
    ContributionMap map = contribution(f, cam, params);
    const auto& center_px = map.pixels[static_cast<size_t>(12) * map.width + 16];
    REQUIRE(center_px.size() == 4);
    for (size_t e = 0; e < center_px.size(); ++e)
        CHECK(center_px[e].first == static_cast<int>(e));

    RenderOutput before = render(f, cam, params);
    f.color[4] = Vec3(1, 0, 0);
    RenderOutput after = render(f, cam, params);
    CHECK(before.image.at(16, 12, 0) == after.image.at(16, 12, 0));
    CHECK(before.image.at(16, 12, 1) == after.image.at(16, 12, 1));
}

TEST_CASE("analytic center and rotation gradients match finite differences") {
    Rng rng(3311);
    RenderParams params;
    params.background = Vec3(0.6, 0.55, 0.5);
    Camera cam = orbit_cameras(1, 24, 20)[0];
    GaussianFrame f;
    f.resize(8);
    for (int i = 0; i < 8; ++i) {
        f.center[i] = Vec3(uni(rng, -0.08, 0.08), uni(rng, -0.08, 0.08), uni(rng, -0.03, 0.1));
        f.rot[i] = random_unit_quat(rng);
        f.scale[i] = Vec3(uni(rng, 0.01, 0.03), uni(rng, 0.01, 0.03), uni(rng, 0.01, 0.03));
        f.color[i] = Vec3(uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0, 1));
        f.opacity[i] = uni(rng, 0.2, 0.9);
    }
    ImageF weight(cam.width, cam.height, 3);
    for (double& v : weight.px) v = uni(rng, -1.0, 1.0);
    auto loss = [&](const GaussianFrame& frame) {
        RenderOutput out = render(frame, cam, params);
        double l = 0.0;
        for (size_t i = 0; i < weight.px.size(); ++i) l += weight.px[i] * out.image.px[i];
        return l;
    };

    reset_render_backward_calls();
    RenderGrads grads = render_backward(f, cam, params, weight);
    CHECK(render_backward_calls() == 1);

    const double h = 1e-5;
    int total = 0, bad = 0;
    auto probe = [&](double* slot, double analytic) {
        double keep = *slot;
        *slot = keep + h;
        double up = loss(f);
        *slot = keep - h;
        double down = loss(f);
        *slot = keep;
        double fd = (up - down) / (2 * h);
        if (std::abs(analytic) <= 1e-9 && std::abs(fd) <= 1e-9) return;
        ++total;
        double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-12});
        if (rel >= 1e-3) ++bad;
    };
    for (int i = 0; i < f.size(); ++i) {
        for (int a = 0; a < 3; ++a) probe(&f.center[i][a], grads.d_center[i][a]);
        for (int a = 0; a < 4; ++a) probe(&f.rot[i][a], grads.d_rot[i][a]);
    }
    REQUIRE(total > 20);
    // A couple of coordinates may straddle a footprint or sort boundary where the
    // analytic gradient is one-sided; everything else has to agree.
    CHECK(bad * 20 <= total);
}

TEST_CASE("rotation gradients are exported consistently as quaternion and matrix") {
    Rng rng(88);
    RenderParams params;
    Camera cam = orbit_cameras(1, 32, 24)[0];
    GaussianFrame f = random_frame(rng, 30);
    ImageF weight(cam.width, cam.height, 3, 0.5);
    RenderGrads grads = render_backward(f, cam, params, weight);
    REQUIRE(grads.d_rot.size() == static_cast<size_t>(f.size()));
    int touched = 0;
    for (int i = 0; i < f.size(); ++i) {
        if (grads.d_rotmat[i].isZero() && grads.d_rot[i].isZero()) continue;
        ++touched;
        Vec4 from_mat = quat_rotation_vjp(f.rot[i], grads.d_rotmat[i]);
        CHECK((from_mat - grads.d_rot[i]).norm() <= 1e-12 * std::max(1.0, grads.d_rot[i].norm()));
    }
    CHECK(touched > 5);
}

TEST_CASE("backward rejects a gradient image of the wrong shape") {
    RenderParams params;
    Camera cam = straight_camera(33, 25);
    GaussianFrame f;
    f.resize(1);
    f.center[0] = Vec3(0, 0, 1);
    f.scale[0] = Vec3(0.01, 0.01, 0.01);
    CHECK_THROWS_AS(render_backward(f, cam, params, ImageF(10, 10, 3)), NumericsError);
    CHECK_THROWS_AS(render_backward(f, cam, params, ImageF(33, 25, 1)), NumericsError);
}

TEST_CASE("image loss averages absolute error over all pixels") {
    ImageF pred(2, 1, 3), target(2, 1, 3);
    pred.at(0, 0, 0) = 0.5;
    target.at(0, 0, 0) = 0.2;   // diff +0.3
    pred.at(1, 0, 2) = 0.1;
    target.at(1, 0, 2) = 0.4;   // diff -0.3
    ImageF grad;
    double loss = l1_image_loss(pred, target, &grad, nullptr);
    CHECK(loss == doctest::Approx(0.6 / 6.0).epsilon(1e-15));
    CHECK(grad.at(0, 0, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(grad.at(1, 0, 2) == doctest::Approx(-1.0 / 6.0).epsilon(1e-15));
    CHECK(grad.at(0, 0, 1) == 0.0);  // zero diff, subgradient zero

    // Identical images: zero loss, zero gradient.
    CHECK(l1_image_loss(pred, pred, &grad, nullptr) == 0.0);
    for (double v : grad.px) CHECK(v == 0.0);
}

TEST_CASE("a weight image restricts the loss to its support") {
    ImageF pred(2, 2, 3, 0.0), target(2, 2, 3, 0.0);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c) pred.at(x, y, c) = 0.1 * (1 + x + 2 * y);
    ImageF weight(2, 2, 1, 0.0);
    weight.at(0, 0, 0) = 1.0;
    weight.at(1, 1, 0) = 1.0;

    ImageF grad;
    double loss = l1_image_loss(pred, target, &grad, &weight);
    // Two covered pixels, three channels each: denominator 6, only their error counts.
    CHECK(loss == doctest::Approx((3 * 0.1 + 3 * 0.4) / 6.0).epsilon(1e-15));
    CHECK(grad.at(0, 0, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(grad.at(1, 0, 0) == 0.0);
    CHECK(grad.at(0, 1, 0) == 0.0);
    CHECK(grad.at(1, 1, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));

    ImageF empty(2, 2, 1, 0.0);
    CHECK(l1_image_loss(pred, target, nullptr, &empty) == 0.0);

    CHECK_THROWS_AS(l1_image_loss(pred, ImageF(3, 2, 3), nullptr, nullptr), NumericsError);
    ImageF wrong_weight(3, 2, 1);
    CHECK_THROWS_AS(l1_image_loss(pred, target, nullptr, &wrong_weight), NumericsError);
}

TEST_CASE("gamma encode and byte decode round trip") {
    // Every byte value survives linear -> byte re-encoding exactly.
    ImageU8 bytes(256, 1, 1);
    for (int x = 0; x < 256; ++x) bytes.at(x, 0, 0) = static_cast<std::uint8_t>(x);
    ImageU8 again = to_u8_gamma(to_linear(bytes));
    REQUIRE(again.px.size() == bytes.px.size());
    for (int x = 0; x < 256; ++x) CHECK(again.at(x, 0, 0) == bytes.at(x, 0, 0));

    // Linear values come back within the quantization step of the 1/2.2 gamma curve.
    ImageF lin(64, 1, 1);
    for (int x = 0; x < 64; ++x) lin.at(x, 0, 0) = (x + 0.5) / 64.0;
    ImageF back = to_linear(to_u8_gamma(lin));
    for (int x = 0; x < 64; ++x)
        CHECK(std::abs(back.at(x, 0, 0) - lin.at(x, 0, 0)) <= 5e-3);

    // Out-of-range linear values clamp instead of wrapping.
    ImageF wild(2, 1, 1);
    wild.at(0, 0, 0) = -0.5;
    wild.at(1, 0, 0) = 7.0;
    ImageU8 clamped = to_u8_gamma(wild);
    CHECK(clamped.at(0, 0, 0) == 0);
    CHECK(clamped.at(1, 0, 0) == 255);

    // to_float is a plain /255 with no gamma.
    ImageF flat = to_float(bytes);
    CHECK(flat.at(51, 0, 0) == doctest::Approx(51.0 / 255.0).epsilon(1e-15));
}

// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace gsdyn {

double psnr(const ImageF& a, const ImageF& b) {
    if (a.width != b.width || a.height != b.height || a.ch != b.ch)
        throw ConfigError("psnr: shape mismatch");
    double se = 0.0;
    const size_t n = a.px.size();
    for (size_t i = 0; i < n; ++i) {
        const double d = a.px[i] - b.px[i];
        se += d * d;
    }
    if (n == 0) throw ConfigError("psnr: empty image");
    const double mse = se / static_cast<double>(n);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimHalf = 5;  // 11-tap window

std::array<double, 11> ssim_kernel() {
    std::array<double, 11> k{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double x = i - kSsimHalf;
        k[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable 11-tap filtering; the result is meaningful only where the window is fully
// inside the image.
void blur(const std::vector<double>& src, int w, int h, const std::array<double, 11>& k,
          std::vector<double>* tmp, std::vector<double>* dst) {
    tmp->assign(static_cast<size_t>(w) * static_cast<size_t>(h), 0.0);
    dst->assign(static_cast<size_t>(w) * static_cast<size_t>(h), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = kSsimHalf; x < w - kSsimHalf; ++x) {
            double s = 0.0;
            for (int i = -kSsimHalf; i <= kSsimHalf; ++i)
                s += k[static_cast<size_t>(i + kSsimHalf)] *
                     src[static_cast<size_t>(y) * static_cast<size_t>(w) +
                         static_cast<size_t>(x + i)];
            (*tmp)[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)] = s;
        }
    }
    for (int y = kSsimHalf; y < h - kSsimHalf; ++y) {
        for (int x = kSsimHalf; x < w - kSsimHalf; ++x) {
            double s = 0.0;
            for (int i = -kSsimHalf; i <= kSsimHalf; ++i)
                s += k[static_cast<size_t>(i + kSsimHalf)] *
                     (*tmp)[static_cast<size_t>(y + i) * static_cast<size_t>(w) +
                            static_cast<size_t>(x)];
            (*dst)[static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)] = s;
        }
    }
}

}  // namespace

double ssim(const ImageF& a, const ImageF& b) {
    if (a.width != b.width || a.height != b.height || a.ch != b.ch)
        throw ConfigError("ssim: shape mismatch");
    const int w = a.width, h = a.height;
    if (w < 11 || h < 11) throw ConfigError("ssim: image smaller than the 11x11 window");
    const auto kernel = ssim_kernel();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

    std::vector<double> pa(static_cast<size_t>(w) * static_cast<size_t>(h));
    std::vector<double> pb(pa.size()), paa(pa.size()), pbb(pa.size()), pab(pa.size());
    std::vector<double> tmp, mu_a, mu_b, m_aa, m_bb, m_ab;
    double total = 0.0;
    for (int c = 0; c < a.ch; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double va = a.at(x, y, c), vb = b.at(x, y, c);
                const size_t i = static_cast<size_t>(y) * static_cast<size_t>(w) +
                                 static_cast<size_t>(x);
                pa[i] = va;
                pb[i] = vb;
                paa[i] = va * va;
                pbb[i] = vb * vb;
                pab[i] = va * vb;
            }
        }
        blur(pa, w, h, kernel, &tmp, &mu_a);
        blur(pb, w, h, kernel, &tmp, &mu_b);
        blur(paa, w, h, kernel, &tmp, &m_aa);
        blur(pbb, w, h, kernel, &tmp, &m_bb);
        blur(pab, w, h, kernel, &tmp, &m_ab);
        double sum = 0.0;
        std::int64_t count = 0;
        for (int y = kSsimHalf; y < h - kSsimHalf; ++y) {
            for (int x = kSsimHalf; x < w - kSsimHalf; ++x) {
                const size_t i = static_cast<size_t>(y) * static_cast<size_t>(w) +
                                 static_cast<size_t>(x);
                const double ma = mu_a[i], mb = mu_b[i];
                const double va = m_aa[i] - ma * ma;
                const double vb = m_bb[i] - mb * mb;
                const double cov = m_ab[i] - ma * mb;
                const double val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
                sum += val;
                ++count;
            }
        }
        total += sum / static_cast<double>(count);
    }
    return total / a.ch;
}

namespace {

double mean_nn(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    std::vector<double> best(from.size());
    parallel_for(static_cast<std::int64_t>(from.size()), [&](std::int64_t i) {
        double b = std::numeric_limits<double>::infinity();
        for (const Vec3& q : to) b = std::min(b, (from[static_cast<size_t>(i)] - q).squaredNorm());
        best[static_cast<size_t>(i)] = std::sqrt(b);
    });
    double s = 0.0;
    for (double d : best) s += d;
    return s / static_cast<double>(from.size());
}

}  // namespace

double chamfer_cm(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) throw ConfigError("chamfer: empty point set");
    return 0.5 * (mean_nn(a, b) + mean_nn(b, a)) * 100.0;
}

double delta_avg(const std::vector<std::vector<Vec3>>& pred,
                 const std::vector<std::vector<Vec3>>& truth) {
    if (pred.size() != truth.size()) throw ConfigError("delta_avg: frame count mismatch");
    static const double thresholds[3] = {0.05, 0.10, 0.20};
    std::int64_t hits[3] = {0, 0, 0};
    std::int64_t total = 0;
    for (size_t f = 0; f < pred.size(); ++f) {
        if (pred[f].size() != truth[f].size())
            throw ConfigError("delta_avg: point count mismatch");
        for (size_t i = 0; i < pred[f].size(); ++i) {
            const double err = (pred[f][i] - truth[f][i]).norm();
            for (int t = 0; t < 3; ++t)
                if (err < thresholds[t]) ++hits[t];
            ++total;
        }
    }
    if (total == 0) throw ConfigError("delta_avg: no points");
    double acc = 0.0;
    for (int t = 0; t < 3; ++t)
        acc += static_cast<double>(hits[t]) / static_cast<double>(total) * 100.0;
    return acc / 3.0;
}

RolloutModel rollout_model_from_string(const std::string& s) {
    if (s == "learned") return RolloutModel::learned;
    if (s == "const_velocity") return RolloutModel::const_velocity;
    if (s == "frozen") return RolloutModel::frozen;
    if (s == "truth_replay") return RolloutModel::truth_replay;
    throw ConfigError("unknown rollout model: " + s);
}

SceneEval evaluate_rollout(UNetParams* params, const UNetConfig& cfg, const DynContext* ctx,
                           RolloutModel model, const Scene& scene, const EvalParams& ep) {
    if (scene.frame_count < 4)
        throw ConfigError(scene.name + ": need at least 4 frames to evaluate");
    const int horizon =
        ep.horizon > 0 ? std::min(ep.horizon, scene.frame_count - 3) : scene.frame_count - 3;

    const GaussianFrame f1 = scene.load_frame(1);
    const GaussianFrame f2 = scene.load_frame(2);
    std::vector<GaussianFrame> pred;
    pred.reserve(static_cast<size_t>(horizon));
    switch (model) {
        case RolloutModel::learned: {
            if (params == nullptr || ctx == nullptr)
                throw ConfigError("learned rollout needs parameters and ids");
            const GaussianFrame f0 = scene.load_frame(0);
            pred = rollout(*params, cfg, *ctx, f2, {f0.center, f1.center, f2.center}, horizon);
            break;
        }
        case RolloutModel::const_velocity: {
            for (int k = 1; k <= horizon; ++k) {
                GaussianFrame g = f2;
                for (size_t i = 0; i < g.center.size(); ++i)
                    g.center[i] = f2.center[i] + k * (f2.center[i] - f1.center[i]);
                pred.push_back(std::move(g));
            }
            break;
        }
        case RolloutModel::frozen: {
            for (int k = 1; k <= horizon; ++k) pred.push_back(f2);
            break;
        }
        case RolloutModel::truth_replay: {
            for (int k = 1; k <= horizon; ++k) pred.push_back(scene.load_truth_frame(2 + k));
            break;
        }
    }

    SceneEval ev;
    ev.horizon = horizon;
    std::vector<std::vector<Vec3>> pred_pos, truth_pos;
    pred_pos.reserve(pred.size());
    truth_pos.reserve(pred.size());
    for (int k = 1; k <= horizon; ++k) {
        pred_pos.push_back(pred[static_cast<size_t>(k) - 1].center);
        truth_pos.push_back(scene.load_truth_frame(2 + k).center);
    }
    ev.cd_cm = chamfer_cm(pred_pos.back(), truth_pos.back());
    ev.delta_avg = delta_avg(pred_pos, truth_pos);

    if (ep.with_images) {
        double psnr_sum = 0.0, ssim_sum = 0.0;
        int count = 0;
        for (int k = 1; k <= horizon; ++k) {
            for (int v = 0; v < scene.num_views(); ++v) {
                const Camera& cam = scene.cameras[static_cast<size_t>(v)];
                RenderOutput rr = render(pred[static_cast<size_t>(k) - 1], cam, ep.render);
                const ImageF got = to_float(to_u8_gamma(rr.image));
                const ImageF ref = to_float(scene.load_image(v, 2 + k));
                psnr_sum += psnr(got, ref);
                ssim_sum += ssim(got, ref);
                ++count;
            }
        }
        ev.psnr = psnr_sum / count;
        ev.ssim = ssim_sum / count;
    }
    return ev;
}

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
// Single workflow binary: scene generation, id assignment, the track/depth pipeline,
// training, rollout, rendering, evaluation, and gradient checking.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsdyn/checkpoint.hpp"
#include "gsdyn/metrics.hpp"
#include "gsdyn/pipeline.hpp"
#include "gsdyn/predict.hpp"
#include "gsdyn/synth.hpp"
#include "gsdyn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gsdyn;

namespace {

// ---- synth-gen ------------------------------------------------------------------------

struct SynthGenArgs {
    std::string out = "data";
    std::string scenario = "cube_stack";  // cube_stack | bowling | mixed
    std::string prefix;
    int count = 1;
    int start_index = 0;
    std::uint64_t seed = 0;
    int frames = 48;
    int width = 160;
    int height = 120;
    int min_objects = 0;
    int max_objects = 0;
    int track_points = 64;
};

int cmd_synth_gen(const SynthGenArgs& a) {
    if (a.scenario != "cube_stack" && a.scenario != "bowling" && a.scenario != "mixed")
        throw ConfigError("unknown scenario: " + a.scenario);
    const std::string prefix = a.prefix.empty() ? a.scenario : a.prefix;
    for (int i = 0; i < a.count; ++i) {
        const int index = a.start_index + i;
        ScenarioParams sp;
        sp.type = a.scenario == "mixed" ? (index % 2 == 0 ? "cube_stack" : "bowling")
                                        : a.scenario;
        sp.frames = a.frames;
        sp.width = a.width;
        sp.height = a.height;
        sp.min_objects = a.min_objects;
        sp.max_objects = a.max_objects;
        sp.track_points = a.track_points;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "_%04d", index);
        const std::string name = prefix + buf;
        const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(index);
        emit_scene(a.out + "/" + name, name, sp, seed);
        const Scene sc = load_scene(a.out + "/" + name);
        const GaussianFrame f0 = sc.load_frame(0);
        std::printf("%s: type=%s objects=%d frames=%d gaussians=%d\n", name.c_str(),
                    sp.type.c_str(), sc.num_objects, sc.frame_count, f0.size());
    }
    return 0;
}

// ---- assign-ids -----------------------------------------------------------------------

int cmd_assign_ids(const std::string& scene_dir) {
    const Scene scene = load_scene(scene_dir);
    GaussianFrame frame = scene.load_frame(0);
    std::vector<ImageU8> masks;
    for (int v = 0; v < scene.num_views(); ++v) masks.push_back(scene.load_mask(v, 0));
    const IdAssignment ids = assign_ids(frame, scene.cameras, masks, scene.num_objects,
                                        scenario_render_params(), IdParams{});
    save_ids(scene.ids_path(), ids);
    std::vector<int> counts(static_cast<size_t>(scene.num_objects) + 1, 0);
    int inherited = 0;
    for (int i = 0; i < ids.size(); ++i) {
        counts[static_cast<size_t>(ids.hard[static_cast<size_t>(i)])] += 1;
        inherited += ids.inherited[static_cast<size_t>(i)] ? 1 : 0;
    }
    std::printf("%s: %d gaussians, %d objects, %d unassigned, %d inherited\n",
                scene.name.c_str(), ids.size(), ids.num_objects, counts[0], inherited);
    for (int m = 1; m <= scene.num_objects; ++m)
        std::printf("  object %d: %d gaussians\n", m, counts[static_cast<size_t>(m)]);
    return 0;
}

// ---- pipeline -------------------------------------------------------------------------

int cmd_pipeline(const std::string& scene_dir, double noise, std::uint64_t noise_seed) {
    const Scene scene = load_scene(scene_dir);
    const IdAssignment ids = ensure_ids(scene, scenario_render_params(), IdParams{});
    PipelineParams pp;
    pp.noise_px *= noise;
    pp.noise_depth *= noise;
    pp.noise_seed = noise_seed;
    const PipelineResult res = run_pipeline(scene, ids, pp);
    int fallbacks = 0;
    for (int f : res.fallbacks) fallbacks += f;
    std::printf("%s: %d pseudo-label frames, %d fallbacks\n", scene.name.c_str(),
                res.frames_written, fallbacks);
    for (size_t m = 0; m < res.mean_icp_residual.size(); ++m)
        std::printf("  object %zu: mean icp residual %.3e m\n", m + 1,
                    res.mean_icp_residual[m]);
    return 0;
}

// ---- train ----------------------------------------------------------------------------

int cmd_train(const TrainConfig& cfg, const std::string& data, const std::string& out) {
    const std::vector<std::string> dirs = list_scene_dirs(data);
    if (dirs.empty()) throw ConfigError("no scenes under " + data);
    const TrainResult r = train(dirs, cfg, out);
    std::printf("trained %lld steps (%lld skipped)\n", static_cast<long long>(r.steps),
                static_cast<long long>(r.skipped_steps));
    std::printf("epoch-1 loss %.6g, final loss %.6g\n", r.first_epoch_loss,
                r.final_epoch_loss);
    std::printf("best val cd %.4f cm at epoch %d\n", r.best_val_cd, r.best_epoch);
    return 0;
}

// ---- rollout --------------------------------------------------------------------------

int cmd_rollout(const std::string& ckpt, const std::string& scene_dir, int horizon,
                const std::string& out, bool images) {
    const Scene scene = load_scene(scene_dir);
    UNetConfig cfg;
    UNetParams params;
    CheckpointMeta meta;
    load_checkpoint(ckpt, cfg, params, meta);
    const DynContext ctx =
        DynContext::from_assignment(ensure_ids(scene, scenario_render_params(), IdParams{}));

    if (scene.frame_count < 3) throw ConfigError("scene has fewer than 3 frames");
    const GaussianFrame f0 = scene.load_frame(0);
    const GaussianFrame f1 = scene.load_frame(1);
    const GaussianFrame f2 = scene.load_frame(2);
    std::vector<GaussianFrame> frames =
        horizon > 0 ? rollout(params, cfg, ctx, f2, {f0.center, f1.center, f2.center}, horizon)
                    : std::vector<GaussianFrame>{};

    fs::create_directories(out);
    const RenderParams rp = scenario_render_params();
    // Frame 0 of the output is the rollout's starting state.
    std::vector<const GaussianFrame*> all;
    all.push_back(&f2);
    for (const auto& g : frames) all.push_back(&g);
    for (size_t k = 0; k < all.size(); ++k) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "/pred_%04zu.ply", k);
        write_gaussians_ply(out + buf, *all[k]);
        if (images) {
            for (int v = 0; v < scene.num_views(); ++v) {
                RenderOutput rr = render(*all[k], scene.cameras[static_cast<size_t>(v)], rp);
                char ibuf[48];
                std::snprintf(ibuf, sizeof(ibuf), "/pred_cam%d_%04zu.png", v, k);
                write_png(out + ibuf, to_u8_gamma(rr.image));
            }
        }
    }
    std::printf("wrote %zu frames to %s\n", all.size(), out.c_str());
    return 0;
}

// ---- render ---------------------------------------------------------------------------

int cmd_render(const std::string& scene_dir, int frame, int view, bool truth,
               const std::string& out) {
    const Scene scene = load_scene(scene_dir);
    if (view < 0 || view >= scene.num_views()) throw ConfigError("view out of range");
    const GaussianFrame gf = truth ? scene.load_truth_frame(frame) : scene.load_frame(frame);
    RenderOutput rr =
        render(gf, scene.cameras[static_cast<size_t>(view)], scenario_render_params());
    write_png(out, to_u8_gamma(rr.image));
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

// ---- eval -----------------------------------------------------------------------------

struct EvalArgs {
    std::vector<std::string> ckpts;
    std::string data;
    std::string baseline = "learned";
    int horizon = 0;
    bool no_images = false;
    std::string out = "eval_report.json";
    std::string csv;
};

struct MetricStat {
    double mean = 0, stddev = 0;
    std::vector<double> per_seed;
};

MetricStat stat_of(const std::vector<double>& xs) {
    MetricStat s;
    s.per_seed = xs;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0;
        for (double x : xs) acc += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return s;
}

json stat_json(const MetricStat& s) {
    return {{"mean", s.mean}, {"std", s.stddev}, {"per_seed", s.per_seed}};
}

int cmd_eval(const EvalArgs& a) {
    const RolloutModel model = rollout_model_from_string(a.baseline);
    if (model == RolloutModel::learned && a.ckpts.empty())
        throw ConfigError("eval: learned model needs at least one --ckpt");
    const std::vector<std::string> dirs = list_scene_dirs(a.data);
    if (dirs.empty()) throw ConfigError("no scenes under " + a.data);
    const size_t runs = model == RolloutModel::learned ? a.ckpts.size() : 1;

    EvalParams ep;
    ep.horizon = a.horizon;
    ep.with_images = !a.no_images;
    ep.render = scenario_render_params();

    // results[run][scene]
    std::vector<std::vector<SceneEval>> results(runs);
    std::vector<std::string> names;
    for (size_t r = 0; r < runs; ++r) {
        UNetConfig cfg;
        UNetParams params;
        CheckpointMeta meta;
        if (model == RolloutModel::learned) load_checkpoint(a.ckpts[r], cfg, params, meta);
        for (const std::string& d : dirs) {
            const Scene scene = load_scene(d);
            if (r == 0) names.push_back(scene.name);
            const DynContext ctx = DynContext::from_assignment(
                ensure_ids(scene, scenario_render_params(), IdParams{}));
            results[r].push_back(evaluate_rollout(
                model == RolloutModel::learned ? &params : nullptr, cfg,
                model == RolloutModel::learned ? &ctx : nullptr, model, scene, ep));
        }
    }

    auto metric_stat = [&](auto pick) {
        std::vector<double> per_seed;
        for (size_t r = 0; r < runs; ++r) {
            double m = 0;
            for (const SceneEval& ev : results[r]) m += pick(ev);
            per_seed.push_back(m / static_cast<double>(results[r].size()));
        }
        return stat_of(per_seed);
    };
    const MetricStat s_psnr = metric_stat([](const SceneEval& e) { return e.psnr; });
    const MetricStat s_ssim = metric_stat([](const SceneEval& e) { return e.ssim; });
    const MetricStat s_cd = metric_stat([](const SceneEval& e) { return e.cd_cm; });
    const MetricStat s_delta = metric_stat([](const SceneEval& e) { return e.delta_avg; });

    json scenes = json::array();
    for (size_t i = 0; i < names.size(); ++i) {
        auto mean_over_runs = [&](auto pick) {
            double m = 0;
            for (size_t r = 0; r < runs; ++r) m += pick(results[r][i]);
            return m / static_cast<double>(runs);
        };
        scenes.push_back(
            {{"name", names[i]},
             {"psnr", mean_over_runs([](const SceneEval& e) { return e.psnr; })},
             {"ssim", mean_over_runs([](const SceneEval& e) { return e.ssim; })},
             {"cd_cm", mean_over_runs([](const SceneEval& e) { return e.cd_cm; })},
             {"delta_avg", mean_over_runs([](const SceneEval& e) { return e.delta_avg; })},
             {"lpips", nullptr}});
    }
    json report = {{"model", a.baseline},
                   {"horizon", a.horizon},
                   {"num_scenes", names.size()},
                   {"num_seeds", runs},
                   {"scenes", scenes},
                   {"aggregate",
                    {{"psnr", stat_json(s_psnr)},
                     {"ssim", stat_json(s_ssim)},
                     {"cd_cm", stat_json(s_cd)},
                     {"delta_avg", stat_json(s_delta)},
                     {"lpips", nullptr}}}};
    std::ofstream os(a.out);
    if (!os) throw IoError("cannot write " + a.out);
    os << report.dump(2) << "\n";

    if (!a.csv.empty()) {
        std::ofstream cs(a.csv);
        if (!cs) throw IoError("cannot write " + a.csv);
        cs << "scene,psnr,ssim,cd_cm,delta_avg,lpips\n";
        for (const json& row : scenes)
            cs << row["name"].get<std::string>() << "," << row["psnr"].get<double>() << ","
               << row["ssim"].get<double>() << "," << row["cd_cm"].get<double>() << ","
               << row["delta_avg"].get<double>() << ",\n";
        cs << "aggregate," << s_psnr.mean << "," << s_ssim.mean << "," << s_cd.mean << ","
           << s_delta.mean << ",\n";
    }
    std::printf("%s: psnr %.2f+-%.2f ssim %.4f+-%.4f cd %.3f+-%.3f cm delta %.2f+-%.2f\n",
                a.baseline.c_str(), s_psnr.mean, s_psnr.stddev, s_ssim.mean, s_ssim.stddev,
                s_cd.mean, s_cd.stddev, s_delta.mean, s_delta.stddev);
    return 0;
}

// ---- gradcheck ------------------------------------------------------------------------

struct FdTally {
    int total = 0, passed = 0, tiny = 0;
    double worst = 0;
    bool verbose = std::getenv("GS_DYN_LOG") != nullptr;

    void add(double analytic, double fd, const std::string& what = "") {
        if (std::abs(analytic) <= 1e-9 && std::abs(fd) <= 1e-9) {
            ++tiny;
            return;
        }
        const double rel = std::abs(analytic - fd) /
                           std::max({std::abs(analytic), std::abs(fd), 1e-12});
        ++total;
        if (rel < 1e-3) ++passed;
        else if (verbose)
            std::printf("  MISMATCH %-20s analytic %.6e fd %.6e rel %.2e\n", what.c_str(),
                        analytic, fd, rel);
        worst = std::max(worst, rel);
    }
    bool ok() const {
        return total == 0 || static_cast<double>(passed) >= 0.95 * static_cast<double>(total);
    }
};

GaussianFrame random_frame(Rng& rng, int n) {
    GaussianFrame f;
    f.resize(n);
    for (int i = 0; i < n; ++i) {
        const size_t s = static_cast<size_t>(i);
        f.center[s] = Vec3(rand_uniform(rng, -0.25, 0.25), rand_uniform(rng, -0.25, 0.25),
                           rand_uniform(rng, 0.0, 0.3));
        Vec4 q(rand_normal(rng), rand_normal(rng), rand_normal(rng), rand_normal(rng));
        f.rot[s] = q.normalized();
        f.scale[s] = Vec3(rand_uniform(rng, 0.01, 0.05), rand_uniform(rng, 0.01, 0.05),
                          rand_uniform(rng, 0.01, 0.05));
        f.color[s] = Vec3(rand_uniform(rng, 0, 1), rand_uniform(rng, 0, 1),
                          rand_uniform(rng, 0, 1));
        f.opacity[s] = rand_uniform(rng, 0.3, 0.95);
    }
    return f;
}

Camera small_camera(int w, int h) {
    return Camera::look_at(Vec3(0.7, 0.5, 0.45), Vec3(0, 0, 0.1), Vec3(0, 0, 1),
                           0.9 * w, 0.9 * w, w, h);
}

// Weighted image sum as the scalar loss; weights make every pixel matter.
double weighted_sum(const ImageF& img, const ImageF& w) {
    double s = 0;
    for (size_t i = 0; i < img.px.size(); ++i) s += img.px[i] * w.px[i];
    return s;
}

int gradcheck_splat_render() {
    Rng rng(2024);
    const RenderParams rp;
    const Camera cam = small_camera(32, 32);
    GaussianFrame frame = random_frame(rng, 40);
    ImageF w(32, 32, 3);
    for (double& v : w.px) v = rand_uniform(rng, -1.0, 1.0);

    const RenderGrads g = render_backward(frame, cam, rp, w);
    const double h = 1e-5;
    FdTally tally;
    auto probe = [&](double* coord, double analytic) {
        const double orig = *coord;
        *coord = orig + h;
        const double up = weighted_sum(render(frame, cam, rp).image, w);
        *coord = orig - h;
        const double dn = weighted_sum(render(frame, cam, rp).image, w);
        *coord = orig;
        tally.add(analytic, (up - dn) / (2 * h));
    };
    for (int i = 0; i < frame.size(); ++i) {
        const size_t s = static_cast<size_t>(i);
        for (int d = 0; d < 3; ++d) probe(&frame.center[s][d], g.d_center[s][d]);
        for (int d = 0; d < 4; ++d) probe(&frame.rot[s][d], g.d_rot[s][d]);
    }
    std::printf("splat-render: %d/%d coords within 1e-3 (worst %.2e, %d near-zero)\n",
                tally.passed, tally.total, tally.worst, tally.tiny);
    return tally.ok() ? 0 : 1;
}

// Tiny two-object scene entirely in memory for the full network + render chain.
struct E2eSetup {
    UNetConfig cfg;
    DynContext ctx;
    GaussianFrame base;                  // state at t
    std::vector<ad::Tensor> history;     // positions at t-2, t-1, t
    ad::Tensor target_pos;               // positions at t+1 (active rows)
    std::vector<ImageF> target_images;
    std::vector<Camera> cams;
    RenderParams rp;
};

E2eSetup make_e2e_setup() {
    E2eSetup s;
    s.cfg.rotation_mode = "direct_6d";  // fully differentiable chain for the check
    Rng rng(77);
    std::vector<RigidBody> bodies(2);
    // Surfaces about 1 cm apart so the fine and mid relation layers see cross-object
    // neighbors and receive gradients.
    bodies[0].shape = Shape::box(Vec3(0.045, 0.035, 0.04));
    bodies[0].pos = Vec3(-0.035, 0.0, 0.03);
    bodies[1].shape = Shape::box(Vec3(0.035, 0.045, 0.05));
    bodies[1].pos = Vec3(0.035, 0.01, 0.035);
    bodies[0].color = Vec3(0.8, 0.3, 0.2);
    bodies[1].color = Vec3(0.2, 0.5, 0.8);
    // Generic orientations; identical axis-aligned grids would be full of exact depth
    // ties whose sort order flips under any parameter perturbation, poisoning the FD.
    for (RigidBody& b : bodies) {
        Vec4 q(rand_normal(rng), rand_normal(rng), rand_normal(rng), rand_normal(rng));
        b.q = q.normalized();
    }
    std::vector<int> object_of;
    s.base = gaussianize(bodies, rng, &object_of);

    s.ctx.active.resize(s.base.size());
    std::iota(s.ctx.active.begin(), s.ctx.active.end(), 0);
    s.ctx.labels = object_of;
    s.ctx.voted.assign(object_of.size(), 1);
    s.ctx.num_objects = 2;

    const Vec3 v0(0.02, -0.012, 0.006), v1(-0.015, 0.008, 0.004);
    auto shifted = [&](double steps) {
        ad::Tensor x({s.base.size(), 3});
        for (int i = 0; i < s.base.size(); ++i) {
            const Vec3 v = object_of[static_cast<size_t>(i)] == 1 ? v0 : v1;
            const Vec3 p = s.base.center[static_cast<size_t>(i)] + steps * v;
            for (int d = 0; d < 3; ++d) x[static_cast<std::int64_t>(i) * 3 + d] = p[d];
        }
        return x;
    };
    s.history = {shifted(-2), shifted(-1), shifted(0)};
    s.target_pos = shifted(1.2);  // slightly off constant velocity so losses are nonzero

    s.cams = {small_camera(48, 36), Camera::look_at(Vec3(-0.5, 0.6, 0.5), Vec3(0, 0, 0.05),
                                                    Vec3(0, 0, 1), 43.0, 43.0, 48, 36)};
    s.rp.background = Vec3(0.8, 0.8, 0.8);
    GaussianFrame truth = s.base;
    for (int i = 0; i < truth.size(); ++i)
        for (int d = 0; d < 3; ++d)
            truth.center[static_cast<size_t>(i)][d] =
                s.target_pos[static_cast<std::int64_t>(i) * 3 + d];
    // Round-trip targets through 8-bit like stored training images; exact renders would
    // tie pred == target on background pixels, right at the L1 kink.
    for (const Camera& c : s.cams)
        s.target_images.push_back(to_linear(to_u8_gamma(render(truth, c, s.rp).image)));
    return s;
}

// One K=1 training objective; optionally accumulates parameter gradients.
double e2e_loss(UNetParams& params, const E2eSetup& s, bool with_grads) {
    const double lambda_r = 3.0, lambda_p = 1.0;
    ad::Tape tape;
    ad::Tape::Id x0 = tape.leaf(s.history[0]);
    ad::Tape::Id x1 = tape.leaf(s.history[1]);
    ad::Tape::Id x2 = tape.leaf(s.history[2]);
    std::vector<Vec4> q_cur(s.base.rot.begin(), s.base.rot.end());
    StepRecord step = predict_step(tape, params, s.cfg, s.ctx, x0, x1, x2, q_cur);

    ad::Tape::Id diff = tape.sub(step.x_hat, tape.leaf(s.target_pos));
    ad::Tape::Id pos_node = tape.mean_all(tape.huber(diff, 1.0));
    const double l_pos = tape.value(pos_node)[0];

    GaussianFrame next = s.base;
    for (size_t j = 0; j < next.center.size(); ++j) {
        next.center[j] = step.x_next[j];
        next.rot[j] = step.q_next[j];
    }
    const auto views = static_cast<int>(s.cams.size());
    double l_render = 0;
    ad::Tensor x_seed({s.base.size(), 3});
    std::vector<Mat3> rot_grad(static_cast<size_t>(s.base.size()), Mat3::Zero());
    for (int v = 0; v < views; ++v) {
        RenderOutput rr = render(next, s.cams[static_cast<size_t>(v)], s.rp);
        ImageF d_pred;
        l_render +=
            l1_image_loss(rr.image, s.target_images[static_cast<size_t>(v)], &d_pred, nullptr);
        if (with_grads) {
            RenderGrads g =
                render_backward(next, s.cams[static_cast<size_t>(v)], s.rp, d_pred);
            for (int i = 0; i < s.base.size(); ++i) {
                for (int d = 0; d < 3; ++d)
                    x_seed[static_cast<std::int64_t>(i) * 3 + d] += g.d_center[static_cast<size_t>(i)][d];
                rot_grad[static_cast<size_t>(i)] += g.d_rotmat[static_cast<size_t>(i)];
            }
        }
    }
    l_render /= views;
    if (with_grads) {
        std::vector<std::pair<ad::Tape::Id, ad::Tensor>> seeds;
        ad::Tensor pos_seed(tape.value(pos_node).shape());
        pos_seed.fill(lambda_p);
        seeds.emplace_back(pos_node, std::move(pos_seed));
        const double sr = lambda_r / views;
        for (std::int64_t i = 0; i < x_seed.size(); ++i) x_seed[i] *= sr;
        seeds.emplace_back(step.x_hat, std::move(x_seed));
        for (Mat3& m : rot_grad) m *= sr;
        seeds.emplace_back(step.head, head_rotation_seed(step, s.ctx, q_cur, rot_grad,
                                                         tape.value(step.head)));
        tape.backward(seeds);
    }
    return lambda_r * l_render + lambda_p * l_pos;
}

int gradcheck_end_to_end() {
    E2eSetup s = make_e2e_setup();
    Rng rng(5);
    UNetParams params;
    params.init(s.cfg, rng);
    std::vector<ad::Param*> plist = params.all();
    // The head starts at zero, which blocks gradient flow into the trunk; jitter every
    // parameter so the whole chain is exercised. The head jitter stays small so predicted
    // motion is millimetric and the rendered prediction overlaps its target; a wild head
    // throws the blobs out of frame and the render loss stops responding at all.
    for (ad::Param* p : plist) {
        const bool head = p->name == "head.w" || p->name == "head.b";
        const double sigma = head ? 0.01 : 0.1;
        for (std::int64_t j = 0; j < p->value.size(); ++j)
            p->value[j] += sigma * rand_normal(rng);
    }
    for (ad::Param* p : plist) p->zero_grad();
    e2e_loss(params, s, true);

    // Snapshot analytic grads, then probe a spread of coordinates per tensor.
    Rng pick(99);
    FdTally tally;
    const double h = 1e-5;
    for (ad::Param* p : plist) {
        const int probes = p->value.size() > 64 ? 6 : 2;
        for (int t = 0; t < probes; ++t) {
            const std::int64_t j =
                rand_int(pick, 0, static_cast<int>(p->value.size()) - 1);
            const double analytic = p->grad[j];
            const double orig = p->value[j];
            p->value[j] = orig + h;
            const double up = e2e_loss(params, s, false);
            p->value[j] = orig - h;
            const double dn = e2e_loss(params, s, false);
            p->value[j] = orig;
            tally.add(analytic, (up - dn) / (2 * h), p->name + "[" + std::to_string(j) + "]");
        }
    }
    std::printf("end-to-end: %d/%d coords within 1e-3 (worst %.2e, %d near-zero)\n",
                tally.passed, tally.total, tally.worst, tally.tiny);
    return tally.ok() ? 0 : 1;
}

int gradcheck_tape() {
    Rng rng(31);
    ad::Tape tape;
    auto rt = [&](std::vector<int> shape) {
        ad::Tensor t(shape);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rand_normal(rng);
        return t;
    };
    ad::Tensor xv = rt({6, 3}), wv = rt({3, 5}), bv = rt({1, 5});
    ad::Tape::Id x = tape.leaf(xv, true);
    ad::Tape::Id w = tape.leaf(wv, true);
    ad::Tape::Id b = tape.leaf(bv, true);
    auto build = [&](ad::Tape& t, ad::Tape::Id xi, ad::Tape::Id wi, ad::Tape::Id bi) {
        ad::Tape::Id y = t.relu(t.add_row_bias(t.matmul(xi, wi), t.reshape(bi, {5})));
        ad::Tape::Id z = t.concat_cols({y, t.slice_cols(y, 1, 2)});
        ad::Tape::Id g = t.gather_rows(z, {0, 3, 3, 5});
        return t.mean_all(t.huber(g, 0.5));
    };
    ad::Tape::Id loss = build(tape, x, w, b);
    tape.backward(loss);

    FdTally tally;
    const double h = 1e-6;
    auto probe_leaf = [&](ad::Tensor& store, const ad::Tensor& grads) {
        for (std::int64_t j = 0; j < store.size(); ++j) {
            const double orig = store[j];
            auto eval = [&](double v) {
                store[j] = v;
                ad::Tape t2;
                const double out =
                    t2.value(build(t2, t2.leaf(xv), t2.leaf(wv), t2.leaf(bv)))[0];
                store[j] = orig;
                return out;
            };
            const double fd = (eval(orig + h) - eval(orig - h)) / (2 * h);
            tally.add(grads[j], fd);
        }
    };
    probe_leaf(xv, tape.grad(x));
    probe_leaf(wv, tape.grad(w));
    probe_leaf(bv, tape.grad(b));
    std::printf("tape: %d/%d coords within 1e-3 (worst %.2e, %d near-zero)\n", tally.passed,
                tally.total, tally.worst, tally.tiny);
    return tally.ok() ? 0 : 1;
}

int cmd_gradcheck(const std::string& module) {
    int rc = 0;
    if (module == "tape" || module == "all") rc |= gradcheck_tape();
    if (module == "splat-render" || module == "all") rc |= gradcheck_splat_render();
    if (module == "end-to-end" || module == "all") rc |= gradcheck_end_to_end();
    if (module != "tape" && module != "splat-render" && module != "end-to-end" &&
        module != "all")
        throw ConfigError("unknown gradcheck module: " + module);
    std::printf("gradcheck %s: %s\n", module.c_str(), rc == 0 ? "pass" : "FAIL");
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian-splat rigid dynamics workflow"};
    app.require_subcommand(1);
    app.fallthrough();  // lets the global --threads appear after the subcommand name
    int threads = 0;
    app.add_option("--threads", threads, "cap worker threads (default: hardware)");

    SynthGenArgs sg;
    CLI::App* c_sg = app.add_subcommand("synth-gen", "generate synthetic scenes");
    c_sg->add_option("--out", sg.out, "output dataset directory");
    c_sg->add_option("--scenario", sg.scenario, "cube_stack | bowling | mixed");
    c_sg->add_option("--prefix", sg.prefix, "scene name prefix (default: scenario)");
    c_sg->add_option("--count", sg.count, "number of scenes");
    c_sg->add_option("--start-index", sg.start_index, "first scene index");
    c_sg->add_option("--seed", sg.seed, "base seed; scene i uses seed+i");
    c_sg->add_option("--frames", sg.frames, "frames per scene");
    c_sg->add_option("--width", sg.width, "render width");
    c_sg->add_option("--height", sg.height, "render height");
    c_sg->add_option("--min-objects", sg.min_objects, "scenario-specific lower object count");
    c_sg->add_option("--max-objects", sg.max_objects, "scenario-specific upper object count");
    c_sg->add_option("--track-points", sg.track_points, "tracked surface points per object");

    std::string scene_dir;
    CLI::App* c_ids = app.add_subcommand("assign-ids", "vote Gaussian object ids from masks");
    c_ids->add_option("--scene", scene_dir, "scene directory")->required();

    std::string pl_scene;
    double pl_noise = 1.0;
    std::uint64_t pl_noise_seed = 0;
    CLI::App* c_pl = app.add_subcommand("pipeline", "tracks + depth -> poses + pseudo-labels");
    c_pl->add_option("--scene", pl_scene, "scene directory")->required();
    c_pl->add_option("--noise", pl_noise,
                     "observation noise scale (1 = 0.5 px / 2 mm, 0 = exact)");
    c_pl->add_option("--noise-seed", pl_noise_seed, "seed for the noise stream");

    std::string tr_data, tr_out = "run", tr_config;
    TrainConfig tcfg;
    CLI::App* c_tr = app.add_subcommand("train", "train the dynamics model");
    c_tr->add_option("--data", tr_data, "dataset root")->required();
    c_tr->add_option("--out", tr_out, "run directory (checkpoints, log)");
    c_tr->add_option("--config", tr_config, "JSON config; explicit flags override it");
    auto* o_seed = c_tr->add_option("--seed", tcfg.seed, "rng seed");
    auto* o_epochs = c_tr->add_option("--epochs", tcfg.epochs, "training epochs");
    auto* o_k = c_tr->add_option("--k", tcfg.k, "autoregressive steps");
    auto* o_batch = c_tr->add_option("--batch", tcfg.batch, "examples per step");
    auto* o_lr = c_tr->add_option("--lr", tcfg.lr, "initial learning rate");
    auto* o_sampler = c_tr->add_option("--sampler", tcfg.sampler, "uniform | hard_mining");
    auto* o_lrend = c_tr->add_option("--lambda-render", tcfg.lambda_render, "render loss weight");
    auto* o_lpos = c_tr->add_option("--lambda-pos", tcfg.lambda_pos, "position loss weight");
    auto* o_rot = c_tr->add_option("--rotation-mode", tcfg.net.rotation_mode,
                                   "pose_fit | direct_6d");
    auto* o_pred = c_tr->add_option("--prediction-mode", tcfg.net.prediction_mode,
                                    "velocity | acceleration");
    auto* o_sps = c_tr->add_option("--samples-per-scene", tcfg.samples_per_scene,
                                   "anchors per scene per epoch");
    auto* o_vale = c_tr->add_option("--val-every", tcfg.val_every, "epochs between validations");
    auto* o_valh = c_tr->add_option("--val-horizon", tcfg.val_horizon, "validation rollout steps");
    auto* o_mask = c_tr->add_flag("--mask-loss", tcfg.mask_loss,
                                  "restrict render L1 to dilated object masks");

    std::string ro_ckpt, ro_scene, ro_out = "rollout_out";
    int ro_horizon = 10;
    bool ro_no_images = false;
    CLI::App* c_ro = app.add_subcommand("rollout", "unroll a checkpoint on a scene");
    c_ro->add_option("--ckpt", ro_ckpt, "checkpoint path")->required();
    c_ro->add_option("--scene", ro_scene, "scene directory")->required();
    c_ro->add_option("--horizon", ro_horizon, "steps to predict (0 = just copy the input)");
    c_ro->add_option("--out", ro_out, "output directory");
    c_ro->add_flag("--no-images", ro_no_images, "skip per-view renders");

    std::string rd_scene, rd_out = "render.png";
    int rd_frame = 0, rd_view = 0;
    bool rd_truth = false;
    CLI::App* c_rd = app.add_subcommand("render", "render one stored frame");
    c_rd->add_option("--scene", rd_scene, "scene directory")->required();
    c_rd->add_option("--frame", rd_frame, "frame index");
    c_rd->add_option("--view", rd_view, "camera index");
    c_rd->add_flag("--truth", rd_truth, "render the truth sidecar frame");
    c_rd->add_option("--out", rd_out, "output PNG");

    EvalArgs ev;
    CLI::App* c_ev = app.add_subcommand("eval", "evaluate rollouts against truth");
    c_ev->add_option("--ckpt", ev.ckpts, "checkpoint(s); repeat for mean/std across seeds");
    c_ev->add_option("--data", ev.data, "dataset root")->required();
    c_ev->add_option("--baseline", ev.baseline,
                     "learned | const_velocity | frozen | truth_replay");
    c_ev->add_option("--horizon", ev.horizon, "rollout steps (0 = full sequence)");
    c_ev->add_flag("--no-images", ev.no_images, "skip PSNR/SSIM rendering");
    c_ev->add_option("--out", ev.out, "report JSON path");
    c_ev->add_option("--csv", ev.csv, "also write a CSV table");

    std::string gc_module = "all";
    CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    c_gc->add_option("--module", gc_module, "tape | splat-render | end-to-end | all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (threads > 0) set_thread_count(threads);
        if (c_sg->parsed()) return cmd_synth_gen(sg);
        if (c_ids->parsed()) return cmd_assign_ids(scene_dir);
        if (c_pl->parsed()) return cmd_pipeline(pl_scene, pl_noise, pl_noise_seed);
        if (c_tr->parsed()) {
            TrainConfig cfg;
            if (!tr_config.empty()) cfg = train_config_from_json(tr_config);
            if (*o_seed) cfg.seed = tcfg.seed;
            if (*o_epochs) cfg.epochs = tcfg.epochs;
            if (*o_k) cfg.k = tcfg.k;
            if (*o_batch) cfg.batch = tcfg.batch;
            if (*o_lr) cfg.lr = tcfg.lr;
            if (*o_sampler) cfg.sampler = tcfg.sampler;
            if (*o_lrend) cfg.lambda_render = tcfg.lambda_render;
            if (*o_lpos) cfg.lambda_pos = tcfg.lambda_pos;
            if (*o_rot) cfg.net.rotation_mode = tcfg.net.rotation_mode;
            if (*o_pred) cfg.net.prediction_mode = tcfg.net.prediction_mode;
            if (*o_sps) cfg.samples_per_scene = tcfg.samples_per_scene;
            if (*o_vale) cfg.val_every = tcfg.val_every;
            if (*o_valh) cfg.val_horizon = tcfg.val_horizon;
            if (*o_mask) cfg.mask_loss = tcfg.mask_loss;
            if (threads > 0) cfg.threads = threads;
            return cmd_train(cfg, tr_data, tr_out);
        }
        if (c_ro->parsed()) return cmd_rollout(ro_ckpt, ro_scene, ro_horizon, ro_out, !ro_no_images);
        if (c_rd->parsed()) return cmd_render(rd_scene, rd_frame, rd_view, rd_truth, rd_out);
        if (c_ev->parsed()) return cmd_eval(ev);
        if (c_gc->parsed()) return cmd_gradcheck(gc_module);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include <json.hpp>

#include "gsdyn/checkpoint.hpp"
#include "gsdyn/synth.hpp"
#include "json_util.hpp"

namespace gsdyn {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (k < 1) throw ConfigError("train: k must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (lambda_render < 0 || lambda_pos < 0) throw ConfigError("train: loss weights must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    for (int d : decay_epochs)
        if (d < 1) throw ConfigError("train: decay epochs must be >= 1");
    if (sampler != "uniform" && sampler != "hard_mining")
        throw ConfigError("train: unknown sampler " + sampler);
    if (samples_per_scene < 1) throw ConfigError("train: samples_per_scene must be >= 1");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
    net.validate();
}

TrainConfig train_config_from_json(const std::string& path) {
    json j = load_json_file(path);
    TrainConfig cfg;
    try {
        cfg.k = j.value("k", cfg.k);
        cfg.batch = j.value("batch", cfg.batch);
        cfg.lambda_render = j.value("lambda_render", cfg.lambda_render);
        cfg.lambda_pos = j.value("lambda_pos", cfg.lambda_pos);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.decay_epochs = j.value("decay_epochs", cfg.decay_epochs);
        cfg.decay_factor = j.value("decay_factor", cfg.decay_factor);
        cfg.sampler = j.value("sampler", cfg.sampler);
        cfg.samples_per_scene = j.value("samples_per_scene", cfg.samples_per_scene);
        cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
        cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
        cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
        cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
        cfg.mask_loss = j.value("mask_loss", cfg.mask_loss);
        cfg.mask_dilate_px = j.value("mask_dilate_px", cfg.mask_dilate_px);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.val_every = j.value("val_every", cfg.val_every);
        cfg.val_horizon = j.value("val_horizon", cfg.val_horizon);
        cfg.ckpt_every = j.value("ckpt_every", cfg.ckpt_every);
        cfg.threads = j.value("threads", cfg.threads);
        if (j.contains("net")) cfg.net = unet_config_from_json_string(j.at("net").dump());
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

void train_config_to_json(const std::string& path, const TrainConfig& cfg) {
    json j = {{"k", cfg.k},
              {"batch", cfg.batch},
              {"lambda_render", cfg.lambda_render},
              {"lambda_pos", cfg.lambda_pos},
              {"epochs", cfg.epochs},
              {"lr", cfg.lr},
              {"decay_epochs", cfg.decay_epochs},
              {"decay_factor", cfg.decay_factor},
              {"sampler", cfg.sampler},
              {"samples_per_scene", cfg.samples_per_scene},
              {"adam_beta1", cfg.adam_beta1},
              {"adam_beta2", cfg.adam_beta2},
              {"adam_eps", cfg.adam_eps},
              {"clip_norm", cfg.clip_norm},
              {"mask_loss", cfg.mask_loss},
              {"mask_dilate_px", cfg.mask_dilate_px},
              {"seed", cfg.seed},
              {"val_every", cfg.val_every},
              {"val_horizon", cfg.val_horizon},
              {"ckpt_every", cfg.ckpt_every},
              {"threads", cfg.threads},
              {"net", json::parse(unet_config_to_json_string(cfg.net))}};
    dump_json_file(path, j);
}

void AdamState::init(const std::vector<ad::Param*>& params) {
    m.clear();
    v.clear();
    for (const ad::Param* p : params) {
        m.emplace_back(p->value.shape());
        v.emplace_back(p->value.shape());
    }
    t = 0;
}

void adam_step(const std::vector<ad::Param*>& params, AdamState& st, double lr, double beta1,
               double beta2, double eps) {
    if (st.m.size() != params.size()) throw ConfigError("adam: state not initialized");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        ad::Param& p = *params[i];
        ad::Tensor& m = st.m[i];
        ad::Tensor& v = st.v[i];
        for (std::int64_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            const double mh = m[j] / bc1;
            const double vh = v[j] / bc2;
            p.value[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

double clip_global_norm(const std::vector<ad::Param*>& params, double max_norm) {
    double sq = 0.0;
    for (const ad::Param* p : params)
        for (std::int64_t j = 0; j < p->grad.size(); ++j) sq += p->grad[j] * p->grad[j];
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (ad::Param* p : params)
            for (std::int64_t j = 0; j < p->grad.size(); ++j) p->grad[j] *= s;
    }
    return norm;
}

GaussianFrame TrainScene::frame_at(int f) const {
    GaussianFrame gf = frame0;
    if (f == 0) return gf;
    for (size_t m = 0; m < members.size(); ++m)
        apply_pose(gf, members[m], poses.objects[m][static_cast<size_t>(f)]);
    return gf;
}

ad::Tensor TrainScene::active_positions(int f) const {
    ad::Tensor x({static_cast<int>(ctx.active.size()), 3});
    for (size_t j = 0; j < ctx.active.size(); ++j) {
        const size_t i = static_cast<size_t>(ctx.active[j]);
        Vec3 p = frame0.center[i];
        if (f > 0) {
            const int label = ctx.labels[j];
            p = poses.objects[static_cast<size_t>(label) - 1][static_cast<size_t>(f)].apply(p);
        }
        const auto r = static_cast<std::int64_t>(j);
        x[r * 3 + 0] = p.x();
        x[r * 3 + 1] = p.y();
        x[r * 3 + 2] = p.z();
    }
    return x;
}

TrainScene load_train_scene(const std::string& dir) {
    TrainScene ts;
    ts.scene = load_scene(dir);
    ts.frame0 = ts.scene.load_frame(0);
    if (!std::ifstream(ts.scene.poses_path()).good())
        throw ConfigError(dir + ": no poses.json (run the pipeline first)");
    ts.poses = load_poses(ts.scene.poses_path());
    ts.frames = ts.scene.frame_count;
    for (const auto& per_obj : ts.poses.objects)
        if (static_cast<int>(per_obj.size()) != ts.frames)
            throw ConfigError(dir + ": pose list length does not match frame count");

    IdParams ip;
    ts.ctx = DynContext::from_assignment(ensure_ids(ts.scene, scenario_render_params(), ip));
    ts.members.assign(static_cast<size_t>(ts.scene.num_objects), {});
    for (size_t j = 0; j < ts.ctx.active.size(); ++j) {
        const int label = ts.ctx.labels[j];
        if (label >= 1 && label <= ts.scene.num_objects)
            ts.members[static_cast<size_t>(label) - 1].push_back(ts.ctx.active[j]);
        if (ts.ctx.voted[j]) ts.voted_rows.push_back(static_cast<int>(j));
    }
    return ts;
}

namespace {

// 0/1 union of all object masks, box-dilated. Used to focus the render loss near the
// objects the way masked real-data training would.
ImageF dilated_mask_union(const ImageU8& mask, int radius) {
    const int w = mask.width, h = mask.height;
    ImageF a(w, h, 1), b(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) a.at(x, y, 0) = mask.at(x, y, 0) > 0 ? 1.0 : 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m = 0.0;
            for (int i = std::max(0, x - radius); i <= std::min(w - 1, x + radius); ++i)
                m = std::max(m, a.at(i, y, 0));
            b.at(x, y, 0) = m;
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double m = 0.0;
            for (int i = std::max(0, y - radius); i <= std::min(h - 1, y + radius); ++i)
                m = std::max(m, b.at(x, i, 0));
            a.at(x, y, 0) = m;
        }
    }
    return a;
}

}  // namespace

ExampleLosses train_example(UNetParams& params, const TrainConfig& cfg, const TrainScene& ts,
                            int anchor, int batch_size, const RenderParams& rp) {
    const int steps = cfg.k;
    const int views = ts.scene.num_views();
    const auto active_count = static_cast<std::int64_t>(ts.ctx.active.size());
    ad::Tape tape;
    ad::Tape::Id x_prev2 = tape.leaf(ts.active_positions(anchor - 2));
    ad::Tape::Id x_prev = tape.leaf(ts.active_positions(anchor - 1));
    ad::Tape::Id x_cur = tape.leaf(ts.active_positions(anchor));

    GaussianFrame full_cur = ts.frame_at(anchor);
    std::vector<Vec4> q_cur(ts.ctx.active.size());
    for (size_t j = 0; j < ts.ctx.active.size(); ++j)
        q_cur[j] = full_cur.rot[static_cast<size_t>(ts.ctx.active[j])];

    std::vector<std::pair<ad::Tape::Id, ad::Tensor>> seeds;
    ExampleLosses el;
    for (int k = 1; k <= steps; ++k) {
        StepRecord step = predict_step(tape, params, cfg.net, ts.ctx, x_prev2, x_prev, x_cur, q_cur);

        // Position supervision on the raw prediction, voted Gaussians only.
        {
            ad::Tensor target({static_cast<int>(ts.voted_rows.size()), 3});
            for (size_t r = 0; r < ts.voted_rows.size(); ++r) {
                const size_t j = static_cast<size_t>(ts.voted_rows[r]);
                const int label = ts.ctx.labels[j];
                const Vec3 p = ts.poses.objects[static_cast<size_t>(label) - 1]
                                   [static_cast<size_t>(anchor + k)]
                                       .apply(ts.frame0.center[static_cast<size_t>(ts.ctx.active[j])]);
                const auto rr = static_cast<std::int64_t>(r);
                target[rr * 3 + 0] = p.x();
                target[rr * 3 + 1] = p.y();
                target[rr * 3 + 2] = p.z();
            }
            ad::Tape::Id diff =
                tape.sub(tape.gather_rows(step.x_hat, ts.voted_rows), tape.leaf(std::move(target)));
            ad::Tape::Id pos_node = tape.mean_all(tape.huber(diff, 1.0));
            el.l_pos += tape.value(pos_node)[0];
            ad::Tensor seed(tape.value(pos_node).shape());
            seed.fill(cfg.lambda_pos / (static_cast<double>(batch_size) * steps));
            seeds.emplace_back(pos_node, std::move(seed));
        }

        // Rendering supervision through the rigidified state; gradients re-enter the tape
        // as seeds on the raw positions (and the rotation head in direct_6d mode).
        GaussianFrame full_next = full_cur;
        for (size_t j = 0; j < ts.ctx.active.size(); ++j) {
            const size_t i = static_cast<size_t>(ts.ctx.active[j]);
            full_next.center[i] = step.x_next[j];
            full_next.rot[i] = step.q_next[j];
        }
        if (cfg.lambda_render > 0) {
            ad::Tensor x_seed({static_cast<int>(active_count), 3});
            std::vector<Mat3> rot_grad(ts.ctx.active.size(), Mat3::Zero());
            double l_sum = 0.0;
            for (int v = 0; v < views; ++v) {
                const Camera& cam = ts.scene.cameras[static_cast<size_t>(v)];
                RenderOutput rr = render(full_next, cam, rp);
                const ImageF target = to_linear(ts.scene.load_image(v, anchor + k));
                ImageF d_pred;
                double l;
                if (cfg.mask_loss) {
                    const ImageF weight = dilated_mask_union(
                        ts.scene.load_mask(v, anchor + k), cfg.mask_dilate_px);
                    l = l1_image_loss(rr.image, target, &d_pred, &weight);
                } else {
                    l = l1_image_loss(rr.image, target, &d_pred, nullptr);
                }
                l_sum += l;
                RenderGrads g = render_backward(full_next, cam, rp, d_pred);
                for (size_t j = 0; j < ts.ctx.active.size(); ++j) {
                    const size_t i = static_cast<size_t>(ts.ctx.active[j]);
                    const auto row = static_cast<std::int64_t>(j);
                    x_seed[row * 3 + 0] += g.d_center[i].x();
                    x_seed[row * 3 + 1] += g.d_center[i].y();
                    x_seed[row * 3 + 2] += g.d_center[i].z();
                    rot_grad[j] += g.d_rotmat[i];
                }
            }
            el.l_render += l_sum / views;
            const double s =
                cfg.lambda_render / (static_cast<double>(batch_size) * steps * views);
            for (std::int64_t i = 0; i < x_seed.size(); ++i) x_seed[i] *= s;
            seeds.emplace_back(step.x_hat, std::move(x_seed));
            if (cfg.net.head_dim() == 9) {
                for (Mat3& m : rot_grad) m *= s;
                seeds.emplace_back(step.head, head_rotation_seed(step, ts.ctx, q_cur, rot_grad,
                                                                 tape.value(step.head)));
            }
        }

        x_prev2 = x_prev;
        x_prev = x_cur;
        x_cur = step.x_hat;
        q_cur = step.q_next;
        full_cur = std::move(full_next);
    }
    el.l_render /= steps;
    el.l_pos /= steps;
    if (!std::isfinite(el.l_render) || !std::isfinite(el.l_pos)) {
        el.finite = false;
        return el;
    }
    for (const auto& [id, seed] : seeds) {
        if (!seed.all_finite()) {
            el.finite = false;
            return el;
        }
    }
    tape.backward(seeds);
    return el;
}

namespace {

struct Anchor {
    int scene = 0;
    int t = 0;
};

std::string ckpt_name(const std::string& out_dir, int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/epoch_%03d.ckpt", epoch);
    return out_dir + buf;
}

}  // namespace

TrainResult train(const std::vector<std::string>& scene_dirs, const TrainConfig& cfg,
                  const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    std::vector<std::string> train_dirs, val_dirs;
    for (size_t i = 0; i < scene_dirs.size(); ++i)
        ((i % 10 == 9) ? val_dirs : train_dirs).push_back(scene_dirs[i]);
    if (train_dirs.empty()) throw ConfigError("train: no training scenes");

    std::vector<TrainScene> scenes;
    scenes.reserve(train_dirs.size());
    for (const std::string& d : train_dirs) scenes.push_back(load_train_scene(d));
    std::vector<TrainScene> val_scenes;
    for (const std::string& d : val_dirs) val_scenes.push_back(load_train_scene(d));

    // Valid anchors need two frames of history and k future frames.
    std::vector<int> anchor_lo(scenes.size(), 2), anchor_n(scenes.size(), 0);
    for (size_t s = 0; s < scenes.size(); ++s) {
        const int n = scenes[s].frames - cfg.k - 2;
        if (n <= 0)
            GSDYN_WARN("train: scene %s too short for k=%d, skipped",
                       scenes[s].scene.name.c_str(), cfg.k);
        anchor_n[s] = std::max(0, n);
    }

    Rng master(cfg.seed);
    UNetParams params;
    params.init(cfg.net, master);
    std::vector<ad::Param*> plist = params.all();
    AdamState adam;
    adam.init(plist);

    const int workers = cfg.threads;
    // Workers run whole examples; nested loops go serial to keep the core count honest.
    if (workers > 1) set_thread_count(1);
    std::vector<UNetParams> wparams(static_cast<size_t>(workers));
    for (auto& wp : wparams) {
        Rng scratch(0);
        wp.init(cfg.net, scratch);
    }

    const RenderParams rp = scenario_render_params();
    // Hard-example weights per (scene, anchor), refreshed with each example's last loss.
    std::vector<std::vector<double>> hem(scenes.size());
    for (size_t s = 0; s < scenes.size(); ++s)
        hem[s].assign(static_cast<size_t>(anchor_n[s]), 1.0);

    std::ofstream log(out_dir + "/train_log.jsonl");
    if (!log) throw IoError("cannot open " + out_dir + "/train_log.jsonl");
    train_config_to_json(out_dir + "/train_config.json", cfg);

    TrainResult result;
    result.best_val_cd = std::numeric_limits<double>::infinity();
    bool saved_best = false;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        int decayed = 0;
        for (int d : cfg.decay_epochs)
            if (d <= epoch) ++decayed;
        const double lr = cfg.lr * std::pow(cfg.decay_factor, decayed);

        // Sample this epoch's examples: per scene, samples_per_scene anchors, uniform in
        // epoch 1 and under the uniform sampler, else proportional to the loss table.
        std::vector<Anchor> examples;
        for (size_t s = 0; s < scenes.size(); ++s) {
            if (anchor_n[s] == 0) continue;
            for (int rep = 0; rep < cfg.samples_per_scene; ++rep) {
                int t;
                if (cfg.sampler == "hard_mining" && epoch > 1) {
                    double total = 0.0;
                    for (double w : hem[s]) total += w;
                    double x = rand_uniform(master, 0.0, total);
                    int pick = anchor_n[s] - 1;
                    for (int a = 0; a < anchor_n[s]; ++a) {
                        x -= hem[s][static_cast<size_t>(a)];
                        if (x <= 0.0) {
                            pick = a;
                            break;
                        }
                    }
                    t = anchor_lo[s] + pick;
                } else {
                    t = anchor_lo[s] + rand_int(master, 0, anchor_n[s] - 1);
                }
                examples.push_back({static_cast<int>(s), t});
            }
        }
        for (size_t i = examples.size(); i > 1; --i)
            std::swap(examples[i - 1], examples[static_cast<size_t>(rand_int(master, 0, static_cast<int>(i) - 1))]);

        double epoch_loss_sum = 0.0;
        std::int64_t epoch_steps = 0;
        for (size_t start = 0; start < examples.size(); start += static_cast<size_t>(cfg.batch)) {
            const auto t0 = std::chrono::steady_clock::now();
            const int b = static_cast<int>(
                std::min(static_cast<size_t>(cfg.batch), examples.size() - start));
            std::vector<ExampleLosses> losses(static_cast<size_t>(b));
            std::vector<std::vector<ad::Tensor>> egrads(static_cast<size_t>(b));

            auto run_worker = [&](int w) {
                UNetParams& wp = wparams[static_cast<size_t>(w)];
                std::vector<ad::Param*> wlist = wp.all();
                for (size_t i = 0; i < wlist.size(); ++i) wlist[i]->value = plist[i]->value;
                for (int e = w; e < b; e += workers) {
                    for (ad::Param* p : wlist) p->zero_grad();
                    const Anchor& a = examples[start + static_cast<size_t>(e)];
                    losses[static_cast<size_t>(e)] = train_example(
                        wp, cfg, scenes[static_cast<size_t>(a.scene)], a.t, b, rp);
                    auto& g = egrads[static_cast<size_t>(e)];
                    g.reserve(wlist.size());
                    for (ad::Param* p : wlist) g.push_back(p->grad);
                }
            };
            if (workers == 1) {
                run_worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int w = 0; w < workers; ++w) pool.emplace_back(run_worker, w);
                for (auto& th : pool) th.join();
            }

            bool all_finite = true;
            for (const auto& el : losses) all_finite = all_finite && el.finite;
            double mean_render = 0.0, mean_pos = 0.0;
            for (const auto& el : losses) {
                mean_render += el.l_render / b;
                mean_pos += el.l_pos / b;
            }
            if (!all_finite) {
                GSDYN_WARN("train: non-finite loss at epoch %d step %lld, skipping update",
                           epoch, static_cast<long long>(result.steps));
                result.skipped_steps += 1;
                continue;
            }

            // Reduce per-example gradients in example order, independent of the worker
            // layout, so results are identical for any thread count.
            for (ad::Param* p : plist) p->zero_grad();
            for (int e = 0; e < b; ++e)
                for (size_t i = 0; i < plist.size(); ++i) {
                    const ad::Tensor& g = egrads[static_cast<size_t>(e)][i];
                    for (std::int64_t j = 0; j < g.size(); ++j) plist[i]->grad[j] += g[j];
                }
            clip_global_norm(plist, cfg.clip_norm);
            adam_step(plist, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

            for (int e = 0; e < b; ++e) {
                const Anchor& a = examples[start + static_cast<size_t>(e)];
                const ExampleLosses& el = losses[static_cast<size_t>(e)];
                hem[static_cast<size_t>(a.scene)][static_cast<size_t>(a.t - 2)] =
                    std::max(1e-12, cfg.lambda_render * el.l_render + cfg.lambda_pos * el.l_pos);
            }

            result.steps += 1;
            epoch_steps += 1;
            epoch_loss_sum += cfg.lambda_render * mean_render + cfg.lambda_pos * mean_pos;
            const auto t1 = std::chrono::steady_clock::now();
            const double wall_ms =
                std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() / 1000.0;
            json line = {{"epoch", epoch},           {"step", result.steps},
                         {"l_render", mean_render},  {"l_pos", mean_pos},
                         {"lr", lr},                 {"wall_ms", wall_ms}};
            log << line.dump() << "\n";
            log.flush();
        }
        const double epoch_loss = epoch_steps > 0 ? epoch_loss_sum / epoch_steps : 0.0;
        if (epoch == 1) result.first_epoch_loss = epoch_loss;
        result.final_epoch_loss = epoch_loss;

        if (cfg.val_every > 0 && epoch % cfg.val_every == 0 && !val_scenes.empty()) {
            double cd_sum = 0.0;
            for (const TrainScene& vs : val_scenes) {
                EvalParams ep;
                ep.horizon = cfg.val_horizon;
                ep.with_images = false;
                ep.render = rp;
                cd_sum += evaluate_rollout(&params, cfg.net, &vs.ctx, RolloutModel::learned,
                                           vs.scene, ep)
                              .cd_cm;
            }
            const double val_cd = cd_sum / static_cast<double>(val_scenes.size());
            json line = {{"epoch", epoch}, {"val_cd", val_cd}};
            log << line.dump() << "\n";
            log.flush();
            if (val_cd < result.best_val_cd) {
                result.best_val_cd = val_cd;
                result.best_epoch = epoch;
                save_checkpoint(out_dir + "/best.ckpt", cfg.net, params,
                                {epoch, cfg.seed});
                saved_best = true;
            }
        }
        if (cfg.ckpt_every > 0 && epoch % cfg.ckpt_every == 0)
            save_checkpoint(ckpt_name(out_dir, epoch), cfg.net, params, {epoch, cfg.seed});
    }

    save_checkpoint(out_dir + "/final.ckpt", cfg.net, params, {cfg.epochs, cfg.seed});
    if (!saved_best) {
        GSDYN_WARN("train: no validation ran, using the final weights as best");
        save_checkpoint(out_dir + "/best.ckpt", cfg.net, params, {cfg.epochs, cfg.seed});
        result.best_epoch = cfg.epochs;
        result.best_val_cd = 0.0;
    }
    return result;
}

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsdyn/metrics.hpp"
#include "gsdyn/predict.hpp"
#include "gsdyn/scene.hpp"

namespace gsdyn {

struct TrainConfig {
    int k = 3;   // autoregressive steps per example
    int batch = 12;
    double lambda_render = 3.0;
    double lambda_pos = 1.0;
    int epochs = 50;
    double lr = 1e-3;
    std::vector<int> decay_epochs = {30, 40};  // lr *= decay_factor entering these epochs
    double decay_factor = 0.1;
    std::string sampler = "uniform";  // "uniform" | "hard_mining"
    int samples_per_scene = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;  // global gradient norm; 0 disables
    bool mask_loss = false;  // restrict render L1 to object masks dilated by mask_dilate_px
    int mask_dilate_px = 4;
    std::uint64_t seed = 0;
    int val_every = 1;    // epochs between validation rollouts (0 disables validation)
    int val_horizon = 10;
    int ckpt_every = 5;   // epochs between periodic checkpoints (0 disables)
    int threads = 1;      // batch workers; results are identical for any value
    UNetConfig net;

    void validate() const;
};

// Round trip through the JSON config file format (field names match the struct).
TrainConfig train_config_from_json(const std::string& path);
void train_config_to_json(const std::string& path, const TrainConfig& cfg);

// Adam with bias correction. Step count lives here; call init once per training run.
struct AdamState {
    std::vector<ad::Tensor> m, v;
    std::int64_t t = 0;

    void init(const std::vector<ad::Param*>& params);
};

void adam_step(const std::vector<ad::Param*>& params, AdamState& st, double lr, double beta1,
               double beta2, double eps);

// Scales all gradients by max_norm/|g| when the joint norm exceeds max_norm. Returns the
// pre-clip norm.
double clip_global_norm(const std::vector<ad::Param*>& params, double max_norm);

// Everything about one scene the trainer touches repeatedly. Pseudo-label frames are
// reconstructed on demand from frame 0 + estimated poses instead of being held in memory.
struct TrainScene {
    Scene scene;
    GaussianFrame frame0;
    PoseSet poses;
    DynContext ctx;
    std::vector<std::vector<int>> members;  // full-frame indices per object label
    std::vector<int> voted_rows;  // indices into ctx.active with directly voted ids
    int frames = 0;

    GaussianFrame frame_at(int f) const;
    // Positions of the active Gaussians at frame f, N_active x 3.
    ad::Tensor active_positions(int f) const;
};

TrainScene load_train_scene(const std::string& dir);

struct ExampleLosses {
    double l_render = 0;  // mean over the K steps (each a mean over views)
    double l_pos = 0;     // mean over the K steps
    bool finite = true;
};

// Runs one (scene, anchor) example: K autoregressive steps, position loss on the tape,
// render loss injected through position (and, in direct_6d mode, head rotation) seeds.
// Parameter gradients accumulate into `params` scaled by Eq.-style 1/(batch*K) weights;
// grad_scale multiplies them on top (the caller passes 1/batch wrapped in loss weights).
ExampleLosses train_example(UNetParams& params, const TrainConfig& cfg, const TrainScene& ts,
                            int anchor, int batch_size, const RenderParams& rp);

struct TrainResult {
    double first_epoch_loss = 0;
    double final_epoch_loss = 0;
    double best_val_cd = 0;
    int best_epoch = 0;
    std::int64_t steps = 0;
    std::int64_t skipped_steps = 0;  // aborted on non-finite loss
};

// Full training loop: per-epoch sampling, mini-batches, Adam with the decay schedule,
// JSONL step log (train_log.jsonl), periodic/best/final checkpoints under out_dir.
// Scenes whose index is 9 mod 10 are held out for validation CD.
TrainResult train(const std::vector<std::string>& scene_dirs, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gsdyn/predict.hpp"
#include "gsdyn/render.hpp"
#include "gsdyn/scene.hpp"

namespace gsdyn {

// Peak signal-to-noise ratio in dB for [0,1] images, capped at 99 (identical inputs).
double psnr(const ImageF& a, const ImageF& b);

// Mean local SSIM over all fully interior 11x11 windows (Gaussian weights, sigma 1.5,
// K1=0.01, K2=0.03), averaged over channels.
double ssim(const ImageF& a, const ImageF& b);

// Symmetric Chamfer distance in centimeters:
// 0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|) * 100.
double chamfer_cm(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Position accuracy: fraction of (point, frame) pairs with error strictly below each
// threshold in {5, 10, 20} cm, averaged over thresholds, as a percentage.
// pred[f][i] corresponds to truth[f][i].
double delta_avg(const std::vector<std::vector<Vec3>>& pred,
                 const std::vector<std::vector<Vec3>>& truth);

enum class RolloutModel { learned, const_velocity, frozen, truth_replay };
RolloutModel rollout_model_from_string(const std::string& s);

struct SceneEval {
    double psnr = 0;
    double ssim = 0;
    double cd_cm = 0;
    double delta_avg = 0;
    int horizon = 0;
};

struct EvalParams {
    int horizon = 0;  // predicted frames; 0 runs to the end of the sequence
    bool with_images = true;  // render predictions and score PSNR/SSIM (slow part)
    RenderParams render;
};

// Unrolls a model from the scene's first three stored frames and scores it against the
// generator's truth sidecar: PSNR/SSIM per predicted frame and view, Chamfer on the
// final predicted frame, delta_avg across all predicted frames. `params`/`ctx` are only
// consulted by the learned model.
SceneEval evaluate_rollout(UNetParams* params, const UNetConfig& cfg, const DynContext* ctx,
                           RolloutModel model, const Scene& scene, const EvalParams& ep);

}  // namespace gsdyn

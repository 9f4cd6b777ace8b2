// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsdyn/gaussian.hpp"
#include "gsdyn/object_id.hpp"
#include "gsdyn/unet.hpp"

namespace gsdyn {

// Everything the dynamics model needs about one example beyond its parameters: which
// Gaussians move (label > 0), their labels, and which of them carry directly voted labels
// (inherited ones are excluded from the position loss).
struct DynContext {
    std::vector<int> active;          // indices into the full frame, ascending
    std::vector<int> labels;          // per active Gaussian, 1-based
    std::vector<char> voted;          // per active Gaussian, 1 unless label was inherited
    int num_objects = 0;
    ad::Tensor soft;                  // per active Gaussian, rows over objects (may be empty)

    PointIds point_ids(bool use_soft) const;
    static DynContext from_assignment(const IdAssignment& ids);
};

// One network step recorded on a tape. `x_hat` are raw predicted positions of the active
// Gaussians (loss target and autoregressive input); `head` is the raw head output, kept for
// injecting rotation gradients in direct_6d mode. Value-level outputs carry the rigidified
// state used for rendering and rollout.
struct StepRecord {
    ad::Tape::Id x_hat = -1;
    ad::Tape::Id head = -1;
    std::vector<Vec3> x_next;      // active Gaussians, rigidified
    std::vector<Vec4> q_next;      // active Gaussians, rotation advanced per mode
    std::vector<Mat3> delta_rot;   // per active Gaussian, the applied rotation increment
};

// Runs the network on position history nodes (each N_active x 3) and composes the
// prediction per the configured mode:
//   velocity:      x_hat = x_t + v_hat
//   acceleration:  x_hat = x_t + (x_t - x_{t-1}) + a_hat
// In pose_fit mode a rigid transform is fitted per object from x_t to x_hat and applied to
// positions and rotations (objects with fewer than 3 Gaussians, or degenerate geometry,
// translate by their mean offset). In direct_6d mode positions stay raw and each Gaussian
// rotates by its decoded 6d increment.
StepRecord predict_step(ad::Tape& tape, UNetParams& params, const UNetConfig& cfg,
                        const DynContext& ctx, ad::Tape::Id x_prev2, ad::Tape::Id x_prev,
                        ad::Tape::Id x_cur, const std::vector<Vec4>& q_cur);

// Converts rendering rotation gradients into a seed tensor for the head node in direct_6d
// mode: d_rot_next rows (world rotation gradient of each active Gaussian after the step)
// are pulled back through rotation composition and the 6d decoding. Returns an N_active x 9
// tensor whose first three columns are zero.
ad::Tensor head_rotation_seed(const StepRecord& step, const DynContext& ctx,
                              const std::vector<Vec4>& q_cur,
                              const std::vector<Mat3>& d_rot_next,
                              const ad::Tensor& head_value);

// Autoregressive value-only rollout. `history` holds the positions of the three observed
// input frames (full frames); rotations and all other attributes come from `base`. Returns
// `horizon` predicted full frames, rigidified each step.
std::vector<GaussianFrame> rollout(UNetParams& params, const UNetConfig& cfg,
                                   const DynContext& ctx, const GaussianFrame& base,
                                   const std::vector<std::vector<Vec3>>& history,
                                   int horizon);

}  // namespace gsdyn

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "gsdyn/object_id.hpp"
#include "gsdyn/scene.hpp"

namespace gsdyn {

// Minimum-cost assignment (O(n^3) potentials method). Rectangular inputs are padded
// to square with a large sentinel; rows matched to a padding column come back as -1.
// Adding a constant to any row or column does not change the assignment.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

// Back-projects a subpixel track observation to a world point. Interpolates inverse
// depth bilinearly over the four surrounding pixel centers (exact on planar surfaces);
// fails when any corner is out of bounds or has no depth.
bool lift_point(const ImageF& depth, const Camera& cam, double u, double v, Vec3* out);

struct IcpParams {
    int max_iters = 50;
    // Stop when the mean inlier residual changes by less than this (meters).
    double tol = 1e-6;
    // Pair rejection radius: max(reject_factor * median NN distance, reject_floor).
    double reject_factor = 3.0;
    double reject_floor = 0.005;
};

struct IcpResult {
    SE3 pose;               // best pose seen (lowest mean inlier residual)
    double residual = 0.0;  // its mean inlier residual, meters
    int iters = 0;
    bool converged = false;  // stopped on tolerance rather than iteration cap/divergence
};

// Rigid alignment of src onto dst by iterated nearest-neighbor matching with outlier
// rejection. Three consecutive residual increases count as divergence; the best pose
// found so far is returned either way.
IcpResult icp(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, const SE3& init,
              const IcpParams& ip = {});

// Cross-view mask id reconciliation. Per-view mask ids are matched to the reference
// view (index 0) by Hungarian assignment over 3D mask centroids (mask pixels lifted
// through the depth map). Ids with no counterpart keep a fresh global id and are
// flagged unmatched.
struct ViewAssociation {
    // global_id[v][local-1] = global object id for mask value `local` in view v
    std::vector<std::vector<int>> global_id;
    std::vector<std::vector<char>> matched;
    int num_global = 0;
};

ViewAssociation associate_views(const std::vector<ImageU8>& masks,
                                const std::vector<ImageF>& depths,
                                const std::vector<Camera>& cameras);

// Expands a static frame into a trajectory: frame f moves each object's Gaussians by
// the object's pose f. Output stops at the first frame where any object lacks a pose
// (warned); pose lists of equal length F give F frames.
std::vector<GaussianFrame> build_trajectories(const GaussianFrame& frame0,
                                              const std::vector<int>& hard_ids,
                                              const PoseSet& poses);

struct PipelineParams {
    // Observation noise, disabled by setting both to 0.
    double noise_px = 0.5;      // std of u/v jitter, pixels
    double noise_depth = 0.002;  // std of lifted-depth jitter, meters
    std::uint64_t noise_seed = 0;
    IcpParams icp;
    bool write_frames = true;  // emit frames/%04d.ply for f >= 1
};

struct PipelineResult {
    PoseSet poses;
    int frames_written = 0;
    // Per frame f >= 1: count of objects that fell back (translation-only or carried
    // over from f-1) for lack of track support.
    std::vector<int> fallbacks;
    // Per object: mean ICP residual over the frames where ICP ran (0 if it never did).
    std::vector<double> mean_icp_residual;
};

// Recovers per-object rigid poses from 2D tracks + depth and writes poses.json plus
// the moved pseudo-label frames. Track points visible at frame 0 and frame f are
// lifted in every view; known correspondences give the initial fit and ICP refines.
PipelineResult run_pipeline(const Scene& scene, const IdAssignment& ids,
                            const PipelineParams& pp);

}  // namespace gsdyn

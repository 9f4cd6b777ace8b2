// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsdyn/render.hpp"
#include "gsdyn/scene.hpp"

namespace gsdyn {

struct IdParams {
    double gamma_floor = 1e-4;
    // Floater rule: Gaussians contributing in fewer views than this are left unassigned
    // before inheritance. 0 disables.
    int min_views = 0;
    // Unassigned Gaussians inherit the majority id of assigned neighbors within this
    // radius, repeated to a fixpoint. Isolated leftovers stay id 0 (frozen).
    double inherit_radius = 0.02;
};

struct IdAssignment {
    int num_objects = 0;
    std::vector<int> hard;        // per Gaussian: 1..M, or 0 if nothing could be assigned
    std::vector<char> inherited;  // id came from neighbors, not votes (excluded from loss)
    std::vector<double> confidence;  // max contribution across views
    ad::Tensor soft;                 // N x M, rows sum to 1 where any contribution exists
    ad::Tensor gamma;                // N x C x M max-contribution tensor

    int size() const { return static_cast<int>(hard.size()); }
    // One-hot (or all-zero) id row used for affinities.
    void one_hot(int i, std::vector<double>* w) const;
    // Indices with a usable id, in ascending order.
    std::vector<int> active_indices() const;
};

// Gamma[i][c][m]: max over pixels of mask m in view c of Gaussian i's rendering
// contribution. Masks are single-channel id images of the same frame.
ad::Tensor contribution_tensor(const GaussianFrame& frame, const std::vector<Camera>& cameras,
                               const std::vector<ImageU8>& masks, int num_objects,
                               const RenderParams& rp, const IdParams& ip);

// Per-view winners: N x C matrix of ids (0 = none, all contributions below the floor).
std::vector<int> per_view_argmax(const ad::Tensor& gamma, double floor);

// Full assignment: argmax per view, cross-view majority vote (ties by summed
// contribution, then lowest id), soft distribution, neighbor inheritance.
IdAssignment assign_ids(const GaussianFrame& frame, const std::vector<Camera>& cameras,
                        const std::vector<ImageU8>& masks, int num_objects,
                        const RenderParams& rp, const IdParams& ip);

// Affinity between two id rows: object layers use the dot product, relational layers
// 1 - dot.
double object_affinity(const std::vector<double>& wa, const std::vector<double>& wb);

// On-disk form keeps everything needed downstream (hard ids, inheritance flags,
// confidence, soft rows); the gamma tensor is recomputable and not stored.
void save_ids(const std::string& path, const IdAssignment& ids);
IdAssignment load_ids(const std::string& path);

// Loads the scene's cached id assignment, or computes it from frame 0 and the frame-0
// masks of every view and writes the cache.
IdAssignment ensure_ids(const Scene& scene, const RenderParams& rp, const IdParams& ip);

}  // namespace gsdyn

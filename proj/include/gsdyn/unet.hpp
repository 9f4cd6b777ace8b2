// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gsdyn/knn.hpp"
#include "gsdyn/tape.hpp"

namespace gsdyn {

// Continuous-kernel point convolution. For each query point q with neighbor set N(q) and
// per-pair weights m (object affinity, optionally relation-distance truncated):
//
//   y_q = W * vec( sum_j  m_qj / (sum_j m_qj)  *  h(dp_qj) x_j^T )
//
// where dp_qj is the neighbor offset divided by the layer's spatial scale and h is a small
// MLP mapping R^3 to R^c_mid. There is deliberately no additive bias: a query whose
// weights all vanish gets an exactly zero feature row, so relation layers contribute
// nothing for points with no cross-object neighbor in range.
struct ConvParams {
    ad::Param h_w1, h_b1, h_w2, h_b2, h_w3, h_b3;  // kernel MLP 3 -> 16 -> 16 -> c_mid
    ad::Param w;                                   // (c_mid*c_in) -> c_out
    int c_in = 0, c_out = 0, c_mid = 0;

    void init(const std::string& name, int c_in, int c_out, int c_mid, Rng& rng);
    void collect(std::vector<ad::Param*>& out);
};

// Neighborhood graph for one conv call: flat Q*k support indices plus pre-normalized
// weights for the object-affinity and relation-affinity variants of the layer.
struct ConvGraph {
    std::vector<int> nbr;
    std::vector<double> w_obj;
    std::vector<double> w_rel;
    int k = 0;
};

ad::Tape::Id pointconv(ad::Tape& tape, ConvParams& p, ad::Tape::Id support_pos,
                       ad::Tape::Id query_pos, ad::Tape::Id support_feat,
                       const std::vector<int>& nbr, const std::vector<double>& weights,
                       int k, double spatial_scale);

struct UNetConfig {
    int k = 16;                 // neighbors per query
    double cell_mid = 0.02;     // first downsampling voxel size, meters
    double cell_coarse = 0.05;  // second downsampling voxel size, meters
    double relation_radius = 0.10;
    double scale_fine = 0.03;   // kernel-MLP input scale per resolution level
    double scale_mid = 0.06;
    double scale_coarse = 0.15;
    int kernel_mid = 8;         // c_mid of every conv
    std::string rotation_mode = "pose_fit";    // or "direct_6d"
    std::string prediction_mode = "velocity";  // or "acceleration"
    bool use_soft_ids = false;

    int head_dim() const { return rotation_mode == "direct_6d" ? 9 : 3; }
    void validate() const;
};

// Encoder-decoder over three resolution levels (dense, cell_mid, cell_coarse). Every block
// except the last pairs an object-affinity conv with a residual relation-affinity conv
// (y <- relu(y + rel(y)), so isolated points keep their object features untouched). The
// decoder upsamples by convolving coarse support onto finer queries; skip features are
// concatenated into the next block's object conv.
struct UNetParams {
    ad::Param in_w, in_b;  // per-point feature MLP 8 -> 32
    ConvParams enc1_obj, enc1_rel;
    ConvParams enc2_obj, enc2_rel;
    ConvParams enc3_obj, enc3_rel;
    ConvParams bott1_obj, bott1_rel;
    ConvParams bott2_obj, bott2_rel;
    ConvParams dec1_obj, dec1_rel;
    ConvParams dec2_obj, dec2_rel;
    ConvParams dec3_obj;
    ad::Param head_w, head_b;  // 32 -> head_dim, zero-initialized

    void init(const UNetConfig& cfg, Rng& rng);
    std::vector<ad::Param*> all();
    int64_t count() const;
};

// Per-point identity used to weight neighbor pairs. With hard labels the object affinity
// of a pair is 1 when labels match, else 0; with a soft matrix it is the row dot product.
// Relation affinity is the complement, additionally truncated to relation_radius.
struct PointIds {
    std::vector<int> hard;          // 1-based labels, one per point
    const ad::Tensor* soft = nullptr;  // optional rows summing to 1, overrides hard
};

ad::Tape::Id unet_forward(ad::Tape& tape, UNetParams& params, const UNetConfig& cfg,
                          ad::Tape::Id positions, ad::Tape::Id features,
                          const PointIds& ids);

// JSON round trip of every config field, as a string so headers stay light. Parsing
// validates the result.
std::string unet_config_to_json_string(const UNetConfig& cfg);
UNetConfig unet_config_from_json_string(const std::string& s);

}  // namespace gsdyn

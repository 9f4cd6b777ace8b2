// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "gsdyn/unet.hpp"

namespace gsdyn {

// What a checkpoint carries besides weights.
struct CheckpointMeta {
    int epoch = 0;
    uint64_t seed = 0;
};

// Binary checkpoint: magic "GSDYNCK1", a little-endian u32 JSON header length, the header
// (format version, network config, meta), then each parameter as u32 name length, name
// bytes, u32 rank, u32 dims, and f64 row-major data. Loading reconstructs the parameter
// set from the stored config and fails on missing, extra, or misshapen tensors.
void save_checkpoint(const std::string& path, const UNetConfig& cfg, UNetParams& params,
                     const CheckpointMeta& meta);

void load_checkpoint(const std::string& path, UNetConfig& cfg, UNetParams& params,
                     CheckpointMeta& meta);

}  // namespace gsdyn

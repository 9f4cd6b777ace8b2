// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "gsdyn/so3.hpp"

namespace gsdyn {

// k nearest support points per query by Euclidean distance, ties by lower index. Output is
// Q*k indices, each query's neighbors sorted by (distance, index) ascending. When the
// support has fewer than k points, the tail is padded with index 0 and `valid` marks real
// entries. A query present in the support is its own neighbor (distance 0).
struct KnnResult {
    std::vector<int> idx;
    std::vector<char> valid;
    int k = 0;
};

KnnResult knn_search(const std::vector<Vec3>& support, const std::vector<Vec3>& queries,
                     int k);

// Voxel-grid downsampling: partitions points into cells of size `cell`, picks per cell the
// member nearest the member centroid (ties by lower index), and returns representative
// indices ordered by voxel key. Every input point is within half a cell diagonal of some
// representative's voxel.
std::vector<int> grid_downsample(const std::vector<Vec3>& points, double cell);

}  // namespace gsdyn

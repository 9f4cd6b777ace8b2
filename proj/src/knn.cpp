// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/knn.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>

#include "gsdyn/common.hpp"

namespace gsdyn {

KnnResult knn_search(const std::vector<Vec3>& support, const std::vector<Vec3>& queries,
                     int k) {
    if (k <= 0) throw ConfigError("knn_search: k must be positive");
    if (support.empty()) throw ConfigError("knn_search: empty support set");
    const int n = static_cast<int>(support.size());
    const int q = static_cast<int>(queries.size());
    const int keep = std::min(k, n);

    KnnResult out;
    out.k = k;
    out.idx.assign(static_cast<size_t>(q) * k, 0);
    out.valid.assign(static_cast<size_t>(q) * k, 0);

    parallel_for(q, [&](std::int64_t qi) {
        std::vector<std::pair<double, int>> cand(n);
        for (int j = 0; j < n; ++j)
            cand[j] = {(support[j] - queries[qi]).squaredNorm(), j};
        std::nth_element(cand.begin(), cand.begin() + (keep - 1), cand.end());
        std::sort(cand.begin(), cand.begin() + keep);
        for (int j = 0; j < keep; ++j) {
            out.idx[static_cast<size_t>(qi) * k + j] = cand[j].second;
            out.valid[static_cast<size_t>(qi) * k + j] = 1;
        }
    });
    return out;
}

std::vector<int> grid_downsample(const std::vector<Vec3>& points, double cell) {
    if (cell <= 0) throw ConfigError("grid_downsample: cell size must be positive");
    using Key = std::array<int64_t, 3>;
    std::map<Key, std::vector<int>> cells;
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
        Key key{static_cast<int64_t>(std::floor(points[i].x() / cell)),
                static_cast<int64_t>(std::floor(points[i].y() / cell)),
                static_cast<int64_t>(std::floor(points[i].z() / cell))};
        cells[key].push_back(i);
    }
    std::vector<int> reps;
    reps.reserve(cells.size());
    for (const auto& [key, members] : cells) {
        Vec3 centroid = Vec3::Zero();
        for (int i : members) centroid += points[i];
        centroid /= static_cast<double>(members.size());
        int best = members[0];
        double best_d = (points[best] - centroid).squaredNorm();
        for (int i : members) {
            double d = (points[i] - centroid).squaredNorm();
            if (d < best_d || (d == best_d && i < best)) {
                best = i;
                best_d = d;
            }
        }
        reps.push_back(best);
    }
    return reps;
}

}  // namespace gsdyn

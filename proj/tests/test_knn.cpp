// SPDX-License-Identifier: Apache-2.0
// Neighbor search and voxel downsampling against exhaustive reference implementations.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "gsdyn/common.hpp"
#include "gsdyn/knn.hpp"

using namespace gsdyn;

namespace {

using Rng = std::mt19937_64;

double uni(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<Vec3> random_points(Rng& rng, int n, double extent, double quantum = 0.0) {
    std::vector<Vec3> pts(static_cast<size_t>(n));
    for (auto& p : pts) {
        p = Vec3(uni(rng, -extent, extent), uni(rng, -extent, extent), uni(rng, -extent, extent));
        if (quantum > 0.0)
            for (int a = 0; a < 3; ++a) p[a] = std::round(p[a] / quantum) * quantum;
    }
    return pts;
}

// All-pairs reference: full sort by (squared distance, index) per query.
std::vector<int> brute_knn(const std::vector<Vec3>& support, const Vec3& query, int keep) {
    std::vector<std::pair<double, int>> cand;
    for (int j = 0; j < static_cast<int>(support.size()); ++j)
        cand.emplace_back((support[j] - query).squaredNorm(), j);
    std::sort(cand.begin(), cand.end());
    std::vector<int> out;
    for (int j = 0; j < keep; ++j) out.push_back(cand[static_cast<size_t>(j)].second);
    return out;
}

}  // namespace

TEST_CASE("neighbors match an exhaustive search") {
    Rng rng(111);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 1 + static_cast<int>(rng() % 200);
        int q = 1 + static_cast<int>(rng() % 50);
        int k = 1 + static_cast<int>(rng() % 12);
        // Quantized coordinates on some trials force plenty of exact distance ties.
        double quantum = (trial % 3 == 0) ? 0.25 : 0.0;
        std::vector<Vec3> support = random_points(rng, n, 1.0, quantum);
        std::vector<Vec3> queries = random_points(rng, q, 1.0, quantum);

        KnnResult res = knn_search(support, queries, k);
        REQUIRE(res.k == k);
        REQUIRE(res.idx.size() == static_cast<size_t>(q) * k);
        int keep = std::min(k, n);
        for (int qi = 0; qi < q; ++qi) {
            std::vector<int> want = brute_knn(support, queries[static_cast<size_t>(qi)], keep);
            for (int j = 0; j < k; ++j) {
                size_t slot = static_cast<size_t>(qi) * k + j;
                if (j < keep) {
                    CHECK(res.idx[slot] == want[static_cast<size_t>(j)]);
                    CHECK(res.valid[slot] == 1);
                } else {
                    CHECK(res.idx[slot] == 0);
                    CHECK(res.valid[slot] == 0);
                }
            }
        }
    }
}

TEST_CASE("exact distance ties resolve to the lower index") {
    std::vector<Vec3> support = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    std::vector<Vec3> queries = {Vec3(0, 0, 0)};
    KnnResult res = knn_search(support, queries, 4);
    // All four support points are at distance exactly 1; order is purely by index.
    CHECK(res.idx == std::vector<int>({0, 1, 2, 3}));
}

TEST_CASE("a support point queries as its own nearest neighbor") {
    Rng rng(7);
    std::vector<Vec3> pts = random_points(rng, 40, 1.0);
    KnnResult res = knn_search(pts, pts, 3);
    for (int i = 0; i < 40; ++i) CHECK(res.idx[static_cast<size_t>(i) * 3] == i);
}

TEST_CASE("short supports pad with index zero and a cleared valid mask") {
    std::vector<Vec3> support = {Vec3(0, 0, 0), Vec3(1, 1, 1)};
    std::vector<Vec3> queries = {Vec3(0.9, 0.9, 0.9)};
    KnnResult res = knn_search(support, queries, 5);
    CHECK(res.idx == std::vector<int>({1, 0, 0, 0, 0}));
    CHECK(res.valid == std::vector<char>({1, 1, 0, 0, 0}));
}

TEST_CASE("degenerate neighbor arguments are rejected") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0)};
    CHECK_THROWS_AS(knn_search(pts, pts, 0), ConfigError);
    CHECK_THROWS_AS(knn_search({}, pts, 3), ConfigError);
}

TEST_CASE("downsampling picks the member nearest its cell centroid") {
    Rng rng(2222);
    for (double cell : {0.05, 0.21}) {
        std::vector<Vec3> pts = random_points(rng, 500, 0.5);
        std::vector<int> reps = grid_downsample(pts, cell);

        // Reference partition: floor-index voxel keys, centroid per cell, nearest
        // member with ties to the lower index, cells emitted in key order.
        using Key = std::array<std::int64_t, 3>;
        std::map<Key, std::vector<int>> cells;
        for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
            Key key{static_cast<std::int64_t>(std::floor(pts[static_cast<size_t>(i)].x() / cell)),
                    static_cast<std::int64_t>(std::floor(pts[static_cast<size_t>(i)].y() / cell)),
                    static_cast<std::int64_t>(std::floor(pts[static_cast<size_t>(i)].z() / cell))};
            cells[key].push_back(i);
        }
        std::vector<int> want;
        for (const auto& [key, members] : cells) {
            Vec3 centroid = Vec3::Zero();
            for (int i : members) centroid += pts[static_cast<size_t>(i)];
            centroid /= static_cast<double>(members.size());
            int best = members[0];
            for (int i : members)
                if ((pts[static_cast<size_t>(i)] - centroid).squaredNorm() <
                    (pts[static_cast<size_t>(best)] - centroid).squaredNorm())
                    best = i;
            want.push_back(best);
        }
        CHECK(reps == want);

        // Coverage: each point's own cell has a representative within a cell diagonal.
        std::map<Key, int> rep_of;
        {
            size_t slot = 0;
            for (const auto& [key, members] : cells) rep_of[key] = reps[slot++];
        }
        for (int i = 0; i < static_cast<int>(pts.size()); ++i) {
            const Vec3& p = pts[static_cast<size_t>(i)];
            Key key{static_cast<std::int64_t>(std::floor(p.x() / cell)),
                    static_cast<std::int64_t>(std::floor(p.y() / cell)),
                    static_cast<std::int64_t>(std::floor(p.z() / cell))};
            CHECK((p - pts[static_cast<size_t>(rep_of[key])]).norm() <=
                  cell * std::sqrt(3.0) + 1e-12);
        }
    }
}

TEST_CASE("a single point per cell is its own representative") {
    std::vector<Vec3> pts = {Vec3(0.01, 0.01, 0.01), Vec3(1.0, 1.0, 1.0), Vec3(-2.0, 0.5, 0.3)};
    std::vector<int> reps = grid_downsample(pts, 0.1);
    std::vector<int> sorted = reps;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>({0, 1, 2}));
    CHECK_THROWS_AS(grid_downsample(pts, 0.0), ConfigError);
}

// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/object_id.hpp"

#include <algorithm>
#include <fstream>

#include "json_util.hpp"

namespace gsdyn {

void IdAssignment::one_hot(int i, std::vector<double>* w) const {
    w->assign(static_cast<size_t>(num_objects), 0.0);
    int id = hard[static_cast<size_t>(i)];
    if (id > 0) (*w)[static_cast<size_t>(id - 1)] = 1.0;
}

std::vector<int> IdAssignment::active_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < hard.size(); ++i)
        if (hard[i] > 0) idx.push_back(static_cast<int>(i));
    return idx;
}

ad::Tensor contribution_tensor(const GaussianFrame& frame, const std::vector<Camera>& cameras,
                               const std::vector<ImageU8>& masks, int num_objects,
                               const RenderParams& rp, const IdParams& ip) {
    int n = frame.size();
    int c_count = static_cast<int>(cameras.size());
    if (masks.size() != cameras.size())
        throw NumericsError("contribution_tensor: need one mask per camera");
    ad::Tensor gamma({n, c_count, num_objects});
    for (int c = 0; c < c_count; ++c) {
        const ImageU8& mask = masks[static_cast<size_t>(c)];
        if (mask.ch != 1 || mask.width != cameras[static_cast<size_t>(c)].width ||
            mask.height != cameras[static_cast<size_t>(c)].height)
            throw NumericsError("contribution_tensor: mask shape mismatch");
        ContributionMap map = contribution(frame, cameras[static_cast<size_t>(c)], rp);
        for (int y = 0; y < mask.height; ++y) {
            for (int x = 0; x < mask.width; ++x) {
                int m = mask.at(x, y, 0);
                if (m <= 0 || m > num_objects) continue;
                for (const auto& [i, g] : map.at(x, y)) {
                    if (g <= ip.gamma_floor) continue;
                    double& slot = gamma[(static_cast<std::int64_t>(i) * c_count + c) *
                                             num_objects +
                                         (m - 1)];
                    if (g > slot) slot = g;
                }
            }
        }
    }
    return gamma;
}

std::vector<int> per_view_argmax(const ad::Tensor& gamma, double floor) {
    int n = gamma.dim(0), c_count = gamma.dim(1), m_count = gamma.dim(2);
    std::vector<int> ids(static_cast<size_t>(n) * static_cast<size_t>(c_count), 0);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < c_count; ++c) {
            const double* row =
                gamma.data() + (static_cast<std::int64_t>(i) * c_count + c) * m_count;
            double best = floor;
            int best_m = 0;
            for (int m = 0; m < m_count; ++m) {
                if (row[m] > best) {  // strict: ties keep the lower id
                    best = row[m];
                    best_m = m + 1;
                }
            }
            ids[static_cast<size_t>(i) * c_count + c] = best_m;
        }
    }
    return ids;
}

IdAssignment assign_ids(const GaussianFrame& frame, const std::vector<Camera>& cameras,
                        const std::vector<ImageU8>& masks, int num_objects,
                        const RenderParams& rp, const IdParams& ip) {
    IdAssignment out;
    int n = frame.size();
    int c_count = static_cast<int>(cameras.size());
    out.num_objects = num_objects;
    out.gamma = contribution_tensor(frame, cameras, masks, num_objects, rp, ip);
    out.hard.assign(static_cast<size_t>(n), 0);
    out.inherited.assign(static_cast<size_t>(n), 0);
    out.confidence.assign(static_cast<size_t>(n), 0.0);
    out.soft = ad::Tensor({n, num_objects});

    std::vector<int> view_ids = per_view_argmax(out.gamma, ip.gamma_floor);
    for (int i = 0; i < n; ++i) {
        const double* g =
            out.gamma.data() + static_cast<std::int64_t>(i) * c_count * num_objects;
        // soft distribution: contributions summed over views, normalized
        double total = 0.0;
        for (int c = 0; c < c_count; ++c)
            for (int m = 0; m < num_objects; ++m) total += g[c * num_objects + m];
        if (total > 0.0)
            for (int m = 0; m < num_objects; ++m) {
                double s = 0.0;
                for (int c = 0; c < c_count; ++c) s += g[c * num_objects + m];
                out.soft[static_cast<std::int64_t>(i) * num_objects + m] = s / total;
            }
        for (int c = 0; c < c_count; ++c)
            for (int m = 0; m < num_objects; ++m)
                out.confidence[static_cast<size_t>(i)] =
                    std::max(out.confidence[static_cast<size_t>(i)], g[c * num_objects + m]);

        // majority vote over views; ties broken by summed contribution then lowest id
        std::vector<int> votes(static_cast<size_t>(num_objects) + 1, 0);
        int voting_views = 0;
        for (int c = 0; c < c_count; ++c) {
            int id = view_ids[static_cast<size_t>(i) * c_count + c];
            if (id > 0) {
                ++votes[static_cast<size_t>(id)];
                ++voting_views;
            }
        }
        if (voting_views == 0 || voting_views < ip.min_views) continue;
        int best_id = 0, best_votes = 0;
        double best_sum = 0.0;
        for (int m = 1; m <= num_objects; ++m) {
            if (votes[static_cast<size_t>(m)] == 0) continue;
            double sum = 0.0;
            for (int c = 0; c < c_count; ++c) sum += g[c * num_objects + (m - 1)];
            if (votes[static_cast<size_t>(m)] > best_votes ||
                (votes[static_cast<size_t>(m)] == best_votes && sum > best_sum)) {
                best_id = m;
                best_votes = votes[static_cast<size_t>(m)];
                best_sum = sum;
            }
        }
        out.hard[static_cast<size_t>(i)] = best_id;
    }

    // propagate ids into unassigned Gaussians from neighbors within the radius, in
    // synchronous rounds until nothing changes
    double r2 = ip.inherit_radius * ip.inherit_radius;
    for (;;) {
        std::vector<std::pair<int, int>> updates;
        for (int i = 0; i < n; ++i) {
            if (out.hard[static_cast<size_t>(i)] != 0) continue;
            std::vector<int> counts(static_cast<size_t>(num_objects) + 1, 0);
            bool any = false;
            for (int j = 0; j < n; ++j) {
                int id = out.hard[static_cast<size_t>(j)];
                if (id == 0) continue;
                double d2 = (frame.center[static_cast<size_t>(i)] -
                             frame.center[static_cast<size_t>(j)])
                                .squaredNorm();
                if (d2 <= r2) {
                    ++counts[static_cast<size_t>(id)];
                    any = true;
                }
            }
            if (!any) continue;
            int best = 0, best_c = 0;
            for (int m = 1; m <= num_objects; ++m)
                if (counts[static_cast<size_t>(m)] > best_c) {
                    best_c = counts[static_cast<size_t>(m)];
                    best = m;
                }
            updates.emplace_back(i, best);
        }
        if (updates.empty()) break;
        for (auto [i, id] : updates) {
            out.hard[static_cast<size_t>(i)] = id;
            out.inherited[static_cast<size_t>(i)] = 1;
        }
    }
    return out;
}

double object_affinity(const std::vector<double>& wa, const std::vector<double>& wb) {
    if (wa.size() != wb.size()) throw NumericsError("object_affinity: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < wa.size(); ++i) s += wa[i] * wb[i];
    return s;
}

void save_ids(const std::string& path, const IdAssignment& ids) {
    nlohmann::json j;
    j["format"] = "gsdyn-ids-v1";
    j["num_objects"] = ids.num_objects;
    j["hard"] = ids.hard;
    std::vector<int> inh(ids.inherited.begin(), ids.inherited.end());
    j["inherited"] = inh;
    j["confidence"] = ids.confidence;
    std::vector<double> soft(ids.soft.size());
    for (std::int64_t i = 0; i < ids.soft.size(); ++i) soft[static_cast<size_t>(i)] = ids.soft[i];
    j["soft"] = soft;
    dump_json_file(path, j);
}

IdAssignment ensure_ids(const Scene& scene, const RenderParams& rp, const IdParams& ip) {
    if (std::ifstream(scene.ids_path()).good()) return load_ids(scene.ids_path());
    GSDYN_INFO("computing id assignment for %s", scene.name.c_str());
    GaussianFrame frame = scene.load_frame(0);
    std::vector<ImageU8> masks;
    for (int v = 0; v < scene.num_views(); ++v) masks.push_back(scene.load_mask(v, 0));
    IdAssignment ids = assign_ids(frame, scene.cameras, masks, scene.num_objects, rp, ip);
    save_ids(scene.ids_path(), ids);
    return ids;
}

IdAssignment load_ids(const std::string& path) {
    nlohmann::json j = load_json_file(path);
    IdAssignment ids;
    try {
        if (j.at("format").get<std::string>() != "gsdyn-ids-v1")
            throw IoError(path + ": unexpected format tag");
        ids.num_objects = j.at("num_objects").get<int>();
        ids.hard = j.at("hard").get<std::vector<int>>();
        auto inh = j.at("inherited").get<std::vector<int>>();
        ids.inherited.assign(inh.begin(), inh.end());
        ids.confidence = j.at("confidence").get<std::vector<double>>();
        auto soft = j.at("soft").get<std::vector<double>>();
        const int n = static_cast<int>(ids.hard.size());
        if (ids.num_objects < 0 || inh.size() != ids.hard.size() ||
            ids.confidence.size() != ids.hard.size() ||
            soft.size() != ids.hard.size() * static_cast<size_t>(ids.num_objects))
            throw IoError(path + ": inconsistent array lengths");
        ids.soft = ad::Tensor({n, ids.num_objects});
        for (std::int64_t i = 0; i < ids.soft.size(); ++i) ids.soft[i] = soft[static_cast<size_t>(i)];
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return ids;
}

}  // namespace gsdyn

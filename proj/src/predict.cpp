// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/predict.hpp"

#include <map>

#include "gsdyn/common.hpp"
#include "gsdyn/rigid.hpp"

namespace gsdyn {

PointIds DynContext::point_ids(bool use_soft) const {
    PointIds ids;
    ids.hard = labels;
    if (use_soft) {
        if (soft.empty()) throw ConfigError("DynContext: soft ids requested but absent");
        ids.soft = &soft;
    }
    return ids;
}

DynContext DynContext::from_assignment(const IdAssignment& ids) {
    DynContext ctx;
    ctx.num_objects = ids.num_objects;
    const int n = static_cast<int>(ids.hard.size());
    for (int i = 0; i < n; ++i) {
        if (ids.hard[static_cast<size_t>(i)] <= 0) continue;
        ctx.active.push_back(i);
        ctx.labels.push_back(ids.hard[static_cast<size_t>(i)]);
        ctx.voted.push_back(ids.inherited[static_cast<size_t>(i)] ? 0 : 1);
    }
    if (!ids.soft.empty() && ids.num_objects > 0) {
        ctx.soft = ad::Tensor({static_cast<int>(ctx.active.size()), ids.num_objects});
        const std::int64_t m = ids.num_objects;
        for (std::int64_t r = 0; r < static_cast<std::int64_t>(ctx.active.size()); ++r)
            for (std::int64_t c = 0; c < m; ++c)
                ctx.soft[r * m + c] = ids.soft[ctx.active[static_cast<size_t>(r)] * m + c];
    }
    return ctx;
}

namespace {

std::vector<Vec3> tensor_rows(const ad::Tensor& t) {
    std::vector<Vec3> out(static_cast<size_t>(t.rows()));
    for (int i = 0; i < t.rows(); ++i)
        out[static_cast<size_t>(i)] = Vec3(t[static_cast<size_t>(i) * 3],
                                           t[static_cast<size_t>(i) * 3 + 1],
                                           t[static_cast<size_t>(i) * 3 + 2]);
    return out;
}

}  // namespace

StepRecord predict_step(ad::Tape& tape, UNetParams& params, const UNetConfig& cfg,
                        const DynContext& ctx, ad::Tape::Id x_prev2, ad::Tape::Id x_prev,
                        ad::Tape::Id x_cur, const std::vector<Vec4>& q_cur) {
    using Id = ad::Tape::Id;
    const int n = tape.value(x_cur).rows();
    if (static_cast<int>(ctx.active.size()) != n || static_cast<int>(q_cur.size()) != n)
        throw ConfigError("predict_step: active set size mismatch");

    Id v_prev = tape.sub(x_prev, x_prev2);
    Id v_cur = tape.sub(x_cur, x_prev);
    Id z_prev = tape.slice_cols(x_prev, 2, 1);
    Id z_cur = tape.slice_cols(x_cur, 2, 1);
    Id feats = tape.concat_cols({v_prev, v_cur, z_prev, z_cur});

    StepRecord rec;
    rec.head = unet_forward(tape, params, cfg, x_cur, feats,
                            ctx.point_ids(cfg.use_soft_ids));
    Id motion = cfg.head_dim() == 9 ? tape.slice_cols(rec.head, 0, 3) : rec.head;
    if (cfg.prediction_mode == "velocity")
        rec.x_hat = tape.add(x_cur, motion);
    else
        rec.x_hat = tape.add(tape.add(x_cur, v_cur), motion);

    // Rigidification happens on values only; losses see the raw prediction.
    std::vector<Vec3> xs = tensor_rows(tape.value(x_cur));
    std::vector<Vec3> xh = tensor_rows(tape.value(rec.x_hat));
    rec.x_next.resize(static_cast<size_t>(n));
    rec.q_next.resize(static_cast<size_t>(n));
    rec.delta_rot.assign(static_cast<size_t>(n), Mat3::Identity());

    if (cfg.rotation_mode == "direct_6d") {
        const ad::Tensor& head = tape.value(rec.head);
        for (int i = 0; i < n; ++i) {
            rec.x_next[static_cast<size_t>(i)] = xh[static_cast<size_t>(i)];
            double r6[6];
            for (int c = 0; c < 6; ++c)
                r6[c] = head[static_cast<size_t>(i) * 9 + 3 + c];
            Mat3 dr = Mat3::Identity();
            try {
                dr = decode_6d(r6);
            } catch (const NumericsError&) {
                GSDYN_WARN("degenerate 6d rotation at gaussian %d, using identity", i);
            }
            rec.delta_rot[static_cast<size_t>(i)] = dr;
            Vec4 q = quat_mul(mat_to_quat(dr), q_cur[static_cast<size_t>(i)]);
            rec.q_next[static_cast<size_t>(i)] = q.normalized();
        }
        return rec;
    }

    std::map<int, std::vector<int>> groups;
    for (int i = 0; i < n; ++i) groups[ctx.labels[static_cast<size_t>(i)]].push_back(i);
    for (const auto& [label, members] : groups) {
        std::vector<Vec3> s, d;
        s.reserve(members.size());
        d.reserve(members.size());
        for (int i : members) {
            s.push_back(xs[static_cast<size_t>(i)]);
            d.push_back(xh[static_cast<size_t>(i)]);
        }
        SE3 pose;
        bool fitted = false;
        if (members.size() >= 3) {
            try {
                pose = fit_rigid(s, d);
                fitted = true;
            } catch (const NumericsError&) {
                GSDYN_WARN("rigid fit degenerate for object %d, translating only", label);
            }
        }
        if (!fitted) {
            Vec3 shift = Vec3::Zero();
            for (size_t j = 0; j < s.size(); ++j) shift += d[j] - s[j];
            shift /= static_cast<double>(s.size());
            pose.r = Mat3::Identity();
            pose.t = shift;
        }
        Vec4 dq = mat_to_quat(pose.r);
        for (int i : members) {
            rec.x_next[static_cast<size_t>(i)] = pose.apply(xs[static_cast<size_t>(i)]);
            rec.delta_rot[static_cast<size_t>(i)] = pose.r;
            rec.q_next[static_cast<size_t>(i)] =
                quat_mul(dq, q_cur[static_cast<size_t>(i)]).normalized();
        }
    }
    return rec;
}

ad::Tensor head_rotation_seed(const StepRecord& step, const DynContext& ctx,
                              const std::vector<Vec4>& q_cur,
                              const std::vector<Mat3>& d_rot_next,
                              const ad::Tensor& head_value) {
    const int n = static_cast<int>(ctx.active.size());
    if (head_value.cols() != 9)
        throw ConfigError("head_rotation_seed: head is not in direct_6d layout");
    ad::Tensor seed({n, 9});
    for (int i = 0; i < n; ++i) {
        Mat3 r_cur = quat_to_mat(q_cur[static_cast<size_t>(i)]);
        Mat3 d_delta = d_rot_next[static_cast<size_t>(i)] * r_cur.transpose();
        double r6[6];
        for (int c = 0; c < 6; ++c)
            r6[c] = head_value[static_cast<size_t>(i) * 9 + 3 + c];
        double g[6];
        try {
            decode_6d_backward(r6, d_delta, g);
        } catch (const NumericsError&) {
            continue;  // decode fell back to identity in the forward, no gradient
        }
        for (int c = 0; c < 6; ++c) seed[static_cast<size_t>(i) * 9 + 3 + c] = g[c];
    }
    return seed;
}

std::vector<GaussianFrame> rollout(UNetParams& params, const UNetConfig& cfg,
                                   const DynContext& ctx, const GaussianFrame& base,
                                   const std::vector<std::vector<Vec3>>& history,
                                   int horizon) {
    if (history.size() != 3) throw ConfigError("rollout: need exactly 3 history frames");
    const int n_act = static_cast<int>(ctx.active.size());
    auto subset = [&](const std::vector<Vec3>& full) {
        ad::Tensor t({n_act, 3});
        for (int i = 0; i < n_act; ++i) {
            const Vec3& p = full[static_cast<size_t>(ctx.active[static_cast<size_t>(i)])];
            t[static_cast<size_t>(i) * 3] = p.x();
            t[static_cast<size_t>(i) * 3 + 1] = p.y();
            t[static_cast<size_t>(i) * 3 + 2] = p.z();
        }
        return t;
    };

    ad::Tensor h0 = subset(history[0]), h1 = subset(history[1]), h2 = subset(history[2]);
    std::vector<Vec4> q(static_cast<size_t>(n_act));
    for (int i = 0; i < n_act; ++i)
        q[static_cast<size_t>(i)] = base.rot[static_cast<size_t>(ctx.active[static_cast<size_t>(i)])];

    std::vector<GaussianFrame> out;
    out.reserve(static_cast<size_t>(horizon));
    GaussianFrame cur = base;
    for (size_t i = 0; i < history[2].size(); ++i) cur.center[i] = history[2][i];
    for (int step = 0; step < horizon; ++step) {
        ad::Tape tape;
        ad::Tape::Id a = tape.leaf(h0), b = tape.leaf(h1), c = tape.leaf(h2);
        StepRecord rec = predict_step(tape, params, cfg, ctx, a, b, c, q);
        GaussianFrame next = cur;
        for (int i = 0; i < n_act; ++i) {
            size_t fi = static_cast<size_t>(ctx.active[static_cast<size_t>(i)]);
            next.center[fi] = rec.x_next[static_cast<size_t>(i)];
            next.rot[fi] = rec.q_next[static_cast<size_t>(i)];
        }
        out.push_back(next);
        h0 = std::move(h1);
        h1 = std::move(h2);
        h2 = subset(next.center);
        q = rec.q_next;
        cur = std::move(next);
    }
    return out;
}

}  // namespace gsdyn

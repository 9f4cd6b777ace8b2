// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/unet.hpp"

#include <cmath>

#include <json.hpp>

#include "gsdyn/common.hpp"
#include "gsdyn/gaussian.hpp"

namespace gsdyn {

namespace {

ad::Tensor xavier(int rows, int cols, Rng& rng) {
    ad::Tensor t({rows, cols});
    double lim = std::sqrt(6.0 / (rows + cols));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rand_uniform(rng, -lim, lim);
    return t;
}

ad::Param make_linear(const std::string& name, int rows, int cols, Rng& rng) {
    return ad::Param(name, xavier(rows, cols, rng));
}

ad::Param make_bias(const std::string& name, int cols) {
    return ad::Param(name, ad::Tensor({cols}));
}

}  // namespace

void ConvParams::init(const std::string& name, int ci, int co, int cm, Rng& rng) {
    c_in = ci;
    c_out = co;
    c_mid = cm;
    h_w1 = make_linear(name + ".h1.w", 3, 16, rng);
    h_b1 = make_bias(name + ".h1.b", 16);
    h_w2 = make_linear(name + ".h2.w", 16, 16, rng);
    h_b2 = make_bias(name + ".h2.b", 16);
    h_w3 = make_linear(name + ".h3.w", 16, cm, rng);
    h_b3 = make_bias(name + ".h3.b", cm);
    w = make_linear(name + ".w", cm * ci, co, rng);
}

void ConvParams::collect(std::vector<ad::Param*>& out) {
    for (ad::Param* p : {&h_w1, &h_b1, &h_w2, &h_b2, &h_w3, &h_b3, &w})
        out.push_back(p);
}

ad::Tape::Id pointconv(ad::Tape& tape, ConvParams& p, ad::Tape::Id support_pos,
                       ad::Tape::Id query_pos, ad::Tape::Id support_feat,
                       const std::vector<int>& nbr, const std::vector<double>& weights,
                       int k, double spatial_scale) {
    using Id = ad::Tape::Id;
    Id rel = tape.relative_positions(support_pos, query_pos, nbr, k, 1.0 / spatial_scale);
    Id h = tape.relu(tape.add_row_bias(tape.matmul(rel, tape.param(p.h_w1)),
                                       tape.param(p.h_b1)));
    h = tape.relu(tape.add_row_bias(tape.matmul(h, tape.param(p.h_w2)), tape.param(p.h_b2)));
    h = tape.add_row_bias(tape.matmul(h, tape.param(p.h_w3)), tape.param(p.h_b3));
    Id gathered = tape.gather_rows(support_feat, nbr);
    Id agg = tape.weighted_pair_reduce(h, gathered, weights, k);
    return tape.matmul(agg, tape.param(p.w));
}

void UNetConfig::validate() const {
    if (k <= 0) throw ConfigError("unet: k must be positive");
    if (cell_mid <= 0 || cell_coarse <= cell_mid)
        throw ConfigError("unet: need 0 < cell_mid < cell_coarse");
    if (relation_radius <= 0) throw ConfigError("unet: relation_radius must be positive");
    if (rotation_mode != "pose_fit" && rotation_mode != "direct_6d")
        throw ConfigError("unet: unknown rotation_mode '" + rotation_mode + "'");
    if (prediction_mode != "velocity" && prediction_mode != "acceleration")
        throw ConfigError("unet: unknown prediction_mode '" + prediction_mode + "'");
}

void UNetParams::init(const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    const int cm = cfg.kernel_mid;
    in_w = make_linear("in.w", kMotionFeatureDim, 32, rng);
    in_b = make_bias("in.b", 32);
    enc1_obj.init("enc1_obj", 32, 32, cm, rng);
    enc1_rel.init("enc1_rel", 32, 32, cm, rng);
    enc2_obj.init("enc2_obj", 32, 64, cm, rng);
    enc2_rel.init("enc2_rel", 64, 64, cm, rng);
    enc3_obj.init("enc3_obj", 64, 128, cm, rng);
    enc3_rel.init("enc3_rel", 128, 128, cm, rng);
    bott1_obj.init("bott1_obj", 128, 128, cm, rng);
    bott1_rel.init("bott1_rel", 128, 128, cm, rng);
    bott2_obj.init("bott2_obj", 128, 128, cm, rng);
    bott2_rel.init("bott2_rel", 128, 128, cm, rng);
    dec1_obj.init("dec1_obj", 128, 64, cm, rng);
    dec1_rel.init("dec1_rel", 64, 64, cm, rng);
    // Decoder object convs consume the upsampled features concatenated with the encoder
    // skip of the same resolution, so their input width doubles.
    dec2_obj.init("dec2_obj", 128, 32, cm, rng);
    dec2_rel.init("dec2_rel", 32, 32, cm, rng);
    dec3_obj.init("dec3_obj", 64, 32, cm, rng);
    // Zero head makes the untrained net predict zero motion (and identity rotation).
    head_w = ad::Param("head.w", ad::Tensor({32, cfg.head_dim()}));
    head_b = ad::Param("head.b", ad::Tensor({cfg.head_dim()}));
    if (cfg.rotation_mode == "direct_6d") {
        head_b.value[3] = 1.0;  // first rotation basis column (1,0,0)
        head_b.value[7] = 1.0;  // second column (0,1,0)
    }
}

std::vector<ad::Param*> UNetParams::all() {
    std::vector<ad::Param*> out;
    out.push_back(&in_w);
    out.push_back(&in_b);
    for (ConvParams* c : {&enc1_obj, &enc1_rel, &enc2_obj, &enc2_rel, &enc3_obj, &enc3_rel,
                          &bott1_obj, &bott1_rel, &bott2_obj, &bott2_rel, &dec1_obj,
                          &dec1_rel, &dec2_obj, &dec2_rel, &dec3_obj})
        c->collect(out);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
}

int64_t UNetParams::count() const {
    int64_t n = 0;
    for (ad::Param* p : const_cast<UNetParams*>(this)->all())
        n += static_cast<int64_t>(p->value.size());
    return n;
}

namespace {

double pair_affinity(const PointIds& ids, int a, int b) {
    if (ids.soft) {
        const ad::Tensor& s = *ids.soft;
        int m = s.cols();
        double dot = 0.0;
        for (int c = 0; c < m; ++c)
            dot += s[static_cast<size_t>(a) * m + c] * s[static_cast<size_t>(b) * m + c];
        return dot;
    }
    return ids.hard[static_cast<size_t>(a)] == ids.hard[static_cast<size_t>(b)] ? 1.0 : 0.0;
}

// One KNN build serves both the object-affinity and relation-affinity convs of a block.
ConvGraph build_graph(const std::vector<Vec3>& support, const std::vector<Vec3>& queries,
                      const std::vector<int>& sup_map, const std::vector<int>& qry_map,
                      const PointIds& ids, int k, double radius) {
    KnnResult nn = knn_search(support, queries, k);
    const int q = static_cast<int>(queries.size());
    ConvGraph g;
    g.k = k;
    g.nbr = std::move(nn.idx);
    g.w_obj.assign(static_cast<size_t>(q) * k, 0.0);
    g.w_rel.assign(static_cast<size_t>(q) * k, 0.0);
    const double r2 = radius * radius;
    for (int qi = 0; qi < q; ++qi) {
        double sum_obj = 0.0, sum_rel = 0.0;
        for (int j = 0; j < k; ++j) {
            size_t f = static_cast<size_t>(qi) * k + j;
            if (!nn.valid[f]) continue;
            int sj = g.nbr[f];
            double a = pair_affinity(ids, sup_map[sj], qry_map[qi]);
            g.w_obj[f] = a;
            sum_obj += a;
            if ((support[sj] - queries[qi]).squaredNorm() <= r2) {
                g.w_rel[f] = 1.0 - a;
                sum_rel += 1.0 - a;
            } else {
                g.w_rel[f] = 0.0;
            }
        }
        if (sum_obj > 0)
            for (int j = 0; j < k; ++j) g.w_obj[static_cast<size_t>(qi) * k + j] /= sum_obj;
        if (sum_rel > 0)
            for (int j = 0; j < k; ++j) g.w_rel[static_cast<size_t>(qi) * k + j] /= sum_rel;
    }
    return g;
}

std::vector<Vec3> rows_to_points(const ad::Tensor& t) {
    std::vector<Vec3> out(static_cast<size_t>(t.rows()));
    for (int i = 0; i < t.rows(); ++i)
        out[static_cast<size_t>(i)] = Vec3(t[static_cast<size_t>(i) * 3],
                                           t[static_cast<size_t>(i) * 3 + 1],
                                           t[static_cast<size_t>(i) * 3 + 2]);
    return out;
}

}  // namespace

ad::Tape::Id unet_forward(ad::Tape& tape, UNetParams& params, const UNetConfig& cfg,
                          ad::Tape::Id positions, ad::Tape::Id features,
                          const PointIds& ids) {
    using Id = ad::Tape::Id;
    cfg.validate();
    const ad::Tensor& pos_val = tape.value(positions);
    if (pos_val.cols() != 3) throw ConfigError("unet_forward: positions must be N x 3");
    const int n = pos_val.rows();
    if (!ids.soft && static_cast<int>(ids.hard.size()) != n)
        throw ConfigError("unet_forward: id count mismatch");
    if (ids.soft && ids.soft->rows() != n)
        throw ConfigError("unet_forward: soft id row count mismatch");

    // Resolution levels. Indices of the mid and coarse levels refer back to the dense set
    // so that identity labels can be looked up, and positions stay on the tape so pull-back
    // through the kernel MLP reaches the inputs.
    std::vector<Vec3> p0 = rows_to_points(pos_val);
    std::vector<int> idx0(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx0[static_cast<size_t>(i)] = i;
    std::vector<int> sel1 = grid_downsample(p0, cfg.cell_mid);
    std::vector<Vec3> p1(sel1.size());
    for (size_t i = 0; i < sel1.size(); ++i) p1[i] = p0[static_cast<size_t>(sel1[i])];
    std::vector<int> sel2_local = grid_downsample(p1, cfg.cell_coarse);
    std::vector<int> sel2(sel2_local.size());
    std::vector<Vec3> p2(sel2_local.size());
    for (size_t i = 0; i < sel2_local.size(); ++i) {
        sel2[i] = sel1[static_cast<size_t>(sel2_local[i])];
        p2[i] = p1[static_cast<size_t>(sel2_local[i])];
    }
    Id pos0 = positions;
    Id pos1 = tape.gather_rows(pos0, sel1);
    Id pos2 = tape.gather_rows(pos1, sel2_local);

    const int k = cfg.k;
    const double rr = cfg.relation_radius;
    ConvGraph g00 = build_graph(p0, p0, idx0, idx0, ids, k, rr);
    ConvGraph g01 = build_graph(p0, p1, idx0, sel1, ids, k, rr);
    ConvGraph g11 = build_graph(p1, p1, sel1, sel1, ids, k, rr);
    ConvGraph g12 = build_graph(p1, p2, sel1, sel2, ids, k, rr);
    ConvGraph g22 = build_graph(p2, p2, sel2, sel2, ids, k, rr);
    ConvGraph g21 = build_graph(p2, p1, sel2, sel1, ids, k, rr);
    ConvGraph g10 = build_graph(p1, p0, sel1, idx0, ids, k, rr);

    // A relation layer only produces output where cross-object neighbors exist; adding it
    // residually leaves every other point's object features untouched.
    auto block = [&](ConvParams& obj, ConvParams* rel, Id feat, const ConvGraph& down,
                     const ConvGraph& same, Id sup_pos, Id qry_pos, double scale) {
        Id y = tape.relu(pointconv(tape, obj, sup_pos, qry_pos, feat, down.nbr, down.w_obj,
                                   k, scale));
        if (rel)
            y = tape.relu(tape.add(y, pointconv(tape, *rel, qry_pos, qry_pos, y, same.nbr,
                                                same.w_rel, k, cfg.relation_radius)));
        return y;
    };

    Id f0 = tape.relu(tape.add_row_bias(tape.matmul(features, tape.param(params.in_w)),
                                        tape.param(params.in_b)));

    Id x0 = block(params.enc1_obj, &params.enc1_rel, f0, g00, g00, pos0, pos0,
                  cfg.scale_fine);
    Id x1 = block(params.enc2_obj, &params.enc2_rel, x0, g01, g11, pos0, pos1,
                  cfg.scale_mid);
    Id x2 = block(params.enc3_obj, &params.enc3_rel, x1, g12, g22, pos1, pos2,
                  cfg.scale_coarse);
    Id xb = block(params.bott1_obj, &params.bott1_rel, x2, g22, g22, pos2, pos2,
                  cfg.scale_coarse);
    xb = block(params.bott2_obj, &params.bott2_rel, xb, g22, g22, pos2, pos2,
               cfg.scale_coarse);

    Id u1 = block(params.dec1_obj, &params.dec1_rel, xb, g21, g11, pos2, pos1,
                  cfg.scale_coarse);
    Id u0 = block(params.dec2_obj, &params.dec2_rel, tape.concat_cols({u1, x1}), g10, g00,
                  pos1, pos0, cfg.scale_mid);
    u0 = block(params.dec3_obj, nullptr, tape.concat_cols({u0, x0}), g00, g00, pos0, pos0,
               cfg.scale_fine);

    return tape.add_row_bias(tape.matmul(u0, tape.param(params.head_w)),
                             tape.param(params.head_b));
}

std::string unet_config_to_json_string(const UNetConfig& cfg) {
    nlohmann::json j = {{"k", cfg.k},
                        {"cell_mid", cfg.cell_mid},
                        {"cell_coarse", cfg.cell_coarse},
                        {"relation_radius", cfg.relation_radius},
                        {"scale_fine", cfg.scale_fine},
                        {"scale_mid", cfg.scale_mid},
                        {"scale_coarse", cfg.scale_coarse},
                        {"kernel_mid", cfg.kernel_mid},
                        {"rotation_mode", cfg.rotation_mode},
                        {"prediction_mode", cfg.prediction_mode},
                        {"use_soft_ids", cfg.use_soft_ids}};
    return j.dump();
}

UNetConfig unet_config_from_json_string(const std::string& s) {
    UNetConfig cfg;
    try {
        nlohmann::json j = nlohmann::json::parse(s);
        cfg.k = j.at("k").get<int>();
        cfg.cell_mid = j.at("cell_mid").get<double>();
        cfg.cell_coarse = j.at("cell_coarse").get<double>();
        cfg.relation_radius = j.at("relation_radius").get<double>();
        cfg.scale_fine = j.at("scale_fine").get<double>();
        cfg.scale_mid = j.at("scale_mid").get<double>();
        cfg.scale_coarse = j.at("scale_coarse").get<double>();
        cfg.kernel_mid = j.at("kernel_mid").get<int>();
        cfg.rotation_mode = j.at("rotation_mode").get<std::string>();
        cfg.prediction_mode = j.at("prediction_mode").get<std::string>();
        cfg.use_soft_ids = j.at("use_soft_ids").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace gsdyn

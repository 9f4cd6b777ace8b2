// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/tape.hpp"

#include <cmath>

namespace gsdyn::ad {

namespace {

void check_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b) && a.rank() != 0 && b.rank() != 0)
        throw NumericsError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tape::Id Tape::push(Tensor value, std::function<void(Tape&)> back, const char* op) {
    if (!value.all_finite())
        throw NumericsError(std::string(op) + ": non-finite value in output");
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor(n.value.shape());
    return n.grad;
}

void Tape::check_rank2(Id a, const char* op) const {
    if (value(a).rank() != 2) throw NumericsError(std::string(op) + ": expected rank-2");
}

Tape::Id Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw NumericsError("leaf: non-finite value");
    Node n;
    n.value = std::move(value);
    n.sticky = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::param(Param& p) {
    if (!p.value.all_finite()) throw NumericsError("param " + p.name + ": non-finite value");
    Param* ptr = &p;
    Node n;
    n.value = p.value;
    Id id = static_cast<Id>(nodes_.size());
    n.back = [id, ptr](Tape& t) {
        const Tensor& g = t.grad(id);
        if (!ptr->grad.same_shape(g)) throw NumericsError("param grad shape mismatch");
        ptr->grad.mat() += g.mat();
    };
    nodes_.push_back(std::move(n));
    return id;
}

Tape::Id Tape::matmul(Id a, Id b) {
    check_rank2(a, "matmul");
    check_rank2(b, "matmul");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.dim(1) != B.dim(0)) throw NumericsError("matmul: inner dimension mismatch");
    Tensor out({A.dim(0), B.dim(1)});
    out.mat().noalias() = A.mat() * B.mat();
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, b](Tape& t) {
                    const Tensor& g = t.grad(id);
                    t.grad_buf(a).mat().noalias() += g.mat() * t.value(b).mat().transpose();
                    t.grad_buf(b).mat().noalias() += t.value(a).mat().transpose() * g.mat();
                },
                "matmul");
}

Tape::Id Tape::add(Id a, Id b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_or_scalar(A, B, "add");
    bool sa = A.rank() == 0 && B.rank() != 0;
    bool sb = B.rank() == 0 && A.rank() != 0;
    Tensor out(sa ? B.shape() : A.shape());
    if (sa)
        out.mat() = B.mat().array() + A[0];
    else if (sb)
        out.mat() = A.mat().array() + B[0];
    else
        out.mat() = A.mat() + B.mat();
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, b, sa, sb](Tape& t) {
                    const Tensor& g = t.grad(id);
                    if (sa)
                        t.grad_buf(a)[0] += g.mat().sum();
                    else
                        t.grad_buf(a).mat() += g.mat();
                    if (sb)
                        t.grad_buf(b)[0] += g.mat().sum();
                    else
                        t.grad_buf(b).mat() += g.mat();
                },
                "add");
}

Tape::Id Tape::sub(Id a, Id b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_or_scalar(A, B, "sub");
    bool sa = A.rank() == 0 && B.rank() != 0;
    bool sb = B.rank() == 0 && A.rank() != 0;
    Tensor out(sa ? B.shape() : A.shape());
    if (sa)
        out.mat() = A[0] - B.mat().array();
    else if (sb)
        out.mat() = A.mat().array() - B[0];
    else
        out.mat() = A.mat() - B.mat();
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, b, sa, sb](Tape& t) {
                    const Tensor& g = t.grad(id);
                    if (sa)
                        t.grad_buf(a)[0] += g.mat().sum();
                    else
                        t.grad_buf(a).mat() += g.mat();
                    if (sb)
                        t.grad_buf(b)[0] -= g.mat().sum();
                    else
                        t.grad_buf(b).mat() -= g.mat();
                },
                "sub");
}

Tape::Id Tape::mul(Id a, Id b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_or_scalar(A, B, "mul");
    bool sa = A.rank() == 0 && B.rank() != 0;
    bool sb = B.rank() == 0 && A.rank() != 0;
    Tensor out(sa ? B.shape() : A.shape());
    if (sa)
        out.mat() = B.mat().array() * A[0];
    else if (sb)
        out.mat() = A.mat().array() * B[0];
    else
        out.mat() = A.mat().array() * B.mat().array();
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, b, sa, sb](Tape& t) {
                    const Tensor& g = t.grad(id);
                    const Tensor& A2 = t.value(a);
                    const Tensor& B2 = t.value(b);
                    if (sa) {
                        t.grad_buf(a)[0] += (g.mat().array() * B2.mat().array()).sum();
                        t.grad_buf(b).mat().array() += g.mat().array() * A2[0];
                    } else if (sb) {
                        t.grad_buf(a).mat().array() += g.mat().array() * B2[0];
                        t.grad_buf(b)[0] += (g.mat().array() * A2.mat().array()).sum();
                    } else {
                        t.grad_buf(a).mat().array() += g.mat().array() * B2.mat().array();
                        t.grad_buf(b).mat().array() += g.mat().array() * A2.mat().array();
                    }
                },
                "mul");
}

Tape::Id Tape::relu(Id a) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a](Tape& t) {
                    const Tensor& g = t.grad(id);
                    const Tensor& A2 = t.value(a);
                    Tensor& ga = t.grad_buf(a);
                    for (std::int64_t i = 0; i < A2.size(); ++i)
                        if (A2[i] > 0.0) ga[i] += g[i];
                },
                "relu");
}

Tape::Id Tape::abs(Id a) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = std::abs(A[i]);
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a](Tape& t) {
                    const Tensor& g = t.grad(id);
                    const Tensor& A2 = t.value(a);
                    Tensor& ga = t.grad_buf(a);
                    // subgradient 0 at the kink
                    for (std::int64_t i = 0; i < A2.size(); ++i)
                        ga[i] += A2[i] > 0.0 ? g[i] : (A2[i] < 0.0 ? -g[i] : 0.0);
                },
                "abs");
}

Tape::Id Tape::huber(Id a, double delta) {
    if (delta <= 0.0) throw NumericsError("huber: delta must be positive");
    const Tensor& A = value(a);
    Tensor out(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) {
        double x = std::abs(A[i]);
        out[i] = x <= delta ? 0.5 * A[i] * A[i] : delta * (x - 0.5 * delta);
    }
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, delta](Tape& t) {
                    const Tensor& g = t.grad(id);
                    const Tensor& A2 = t.value(a);
                    Tensor& ga = t.grad_buf(a);
                    for (std::int64_t i = 0; i < A2.size(); ++i) {
                        double d = A2[i] > delta ? delta : (A2[i] < -delta ? -delta : A2[i]);
                        ga[i] += g[i] * d;
                    }
                },
                "huber");
}

Tape::Id Tape::scale(Id a, double c) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    out.mat() = A.mat() * c;
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, c](Tape& t) { t.grad_buf(a).mat() += t.grad(id).mat() * c; },
                "scale");
}

Tape::Id Tape::add_row_bias(Id m, Id bias) {
    check_rank2(m, "add_row_bias");
    const Tensor& M = value(m);
    const Tensor& B = value(bias);
    if (B.rank() != 1 || B.dim(0) != M.dim(1))
        throw NumericsError("add_row_bias: bias length must equal column count");
    Tensor out(M.shape());
    out.mat() = M.mat();
    Eigen::Map<const Eigen::RowVectorXd> bv(B.data(), B.dim(0));
    out.mat().rowwise() += bv;
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, m, bias](Tape& t) {
                    const Tensor& g = t.grad(id);
                    t.grad_buf(m).mat() += g.mat();
                    Tensor& gb = t.grad_buf(bias);
                    Eigen::Map<Eigen::RowVectorXd> gbv(gb.data(), gb.dim(0));
                    gbv += g.mat().colwise().sum();
                },
                "add_row_bias");
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw NumericsError("concat_cols: no inputs");
    int rows_n = value(parts[0]).dim(0);
    int cols_n = 0;
    for (Id p : parts) {
        check_rank2(p, "concat_cols");
        if (value(p).dim(0) != rows_n) throw NumericsError("concat_cols: row count mismatch");
        cols_n += value(p).dim(1);
    }
    Tensor out({rows_n, cols_n});
    int at = 0;
    for (Id p : parts) {
        int c = value(p).dim(1);
        out.mat().middleCols(at, c) = value(p).mat();
        at += c;
    }
    Id id = static_cast<Id>(nodes_.size());
    std::vector<Id> ps = parts;
    return push(std::move(out),
                [id, ps](Tape& t) {
                    const Tensor& g = t.grad(id);
                    int at2 = 0;
                    for (Id p : ps) {
                        int c = t.value(p).dim(1);
                        t.grad_buf(p).mat() += g.mat().middleCols(at2, c);
                        at2 += c;
                    }
                },
                "concat_cols");
}

Tape::Id Tape::slice_cols(Id a, int from, int len) {
    check_rank2(a, "slice_cols");
    const Tensor& A = value(a);
    if (from < 0 || len < 0 || from + len > A.dim(1))
        throw NumericsError("slice_cols: range out of bounds");
    Tensor out({A.dim(0), len});
    out.mat() = A.mat().middleCols(from, len);
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, from, len](Tape& t) {
                    t.grad_buf(a).mat().middleCols(from, len) += t.grad(id).mat();
                },
                "slice_cols");
}

Tape::Id Tape::gather_rows(Id a, std::vector<int> idx) {
    check_rank2(a, "gather_rows");
    const Tensor& A = value(a);
    for (int i : idx)
        if (i < 0 || i >= A.dim(0)) throw NumericsError("gather_rows: index out of range");
    Tensor out({static_cast<int>(idx.size()), A.dim(1)});
    for (size_t r = 0; r < idx.size(); ++r)
        out.mat().row(static_cast<Eigen::Index>(r)) = A.mat().row(idx[r]);
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a, idx = std::move(idx)](Tape& t) {
                    const Tensor& g = t.grad(id);
                    Tensor& ga = t.grad_buf(a);
                    for (size_t r = 0; r < idx.size(); ++r)
                        ga.mat().row(idx[r]) += g.mat().row(static_cast<Eigen::Index>(r));
                },
                "gather_rows");
}

Tape::Id Tape::mean_all(Id a) {
    const Tensor& A = value(a);
    if (A.size() == 0) throw NumericsError("mean_all: empty input");
    Tensor out = Tensor::scalar(A.mat().sum() / static_cast<double>(A.size()));
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a](Tape& t) {
                    double g = t.grad(id)[0] / static_cast<double>(t.value(a).size());
                    t.grad_buf(a).mat().array() += g;
                },
                "mean_all");
}

Tape::Id Tape::sum_all(Id a) {
    const Tensor& A = value(a);
    Tensor out = Tensor::scalar(A.mat().sum());
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a](Tape& t) { t.grad_buf(a).mat().array() += t.grad(id)[0]; },
                "sum_all");
}

Tape::Id Tape::reshape(Id a, std::vector<int> shape) {
    const Tensor& A = value(a);
    Tensor out(shape);
    if (out.size() != A.size()) throw NumericsError("reshape: element count mismatch");
    for (std::int64_t i = 0; i < A.size(); ++i) out[i] = A[i];
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, a](Tape& t) {
                    const Tensor& g = t.grad(id);
                    Tensor& ga = t.grad_buf(a);
                    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                },
                "reshape");
}

Tape::Id Tape::relative_positions(Id points, Id queries, std::vector<int> idx, int k,
                                  double inv_scale) {
    check_rank2(points, "relative_positions");
    check_rank2(queries, "relative_positions");
    const Tensor& P = value(points);
    const Tensor& Q = value(queries);
    if (P.dim(1) != 3 || Q.dim(1) != 3)
        throw NumericsError("relative_positions: inputs must be N x 3");
    if (k <= 0 || idx.size() != static_cast<size_t>(Q.dim(0)) * static_cast<size_t>(k))
        throw NumericsError("relative_positions: index count must be Q*k");
    for (int i : idx)
        if (i < 0 || i >= P.dim(0))
            throw NumericsError("relative_positions: index out of range");
    Tensor out({static_cast<int>(idx.size()), 3});
    for (size_t r = 0; r < idx.size(); ++r) {
        Eigen::Index q = static_cast<Eigen::Index>(r / static_cast<size_t>(k));
        out.mat().row(static_cast<Eigen::Index>(r)) =
            (P.mat().row(idx[r]) - Q.mat().row(q)) * inv_scale;
    }
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, points, queries, idx = std::move(idx), k, inv_scale](Tape& t) {
                    const Tensor& g = t.grad(id);
                    Tensor& gp = t.grad_buf(points);
                    Tensor& gq = t.grad_buf(queries);
                    for (size_t r = 0; r < idx.size(); ++r) {
                        Eigen::Index rr = static_cast<Eigen::Index>(r);
                        Eigen::Index q = static_cast<Eigen::Index>(r / static_cast<size_t>(k));
                        gp.mat().row(idx[r]) += g.mat().row(rr) * inv_scale;
                        gq.mat().row(q) -= g.mat().row(rr) * inv_scale;
                    }
                },
                "relative_positions");
}

Tape::Id Tape::weighted_pair_reduce(Id h, Id x, std::vector<double> w, int k) {
    check_rank2(h, "weighted_pair_reduce");
    check_rank2(x, "weighted_pair_reduce");
    const Tensor& H = value(h);
    const Tensor& X = value(x);
    if (H.dim(0) != X.dim(0)) throw NumericsError("weighted_pair_reduce: row mismatch");
    if (k <= 0 || H.dim(0) % k != 0)
        throw NumericsError("weighted_pair_reduce: rows must be a multiple of k");
    if (w.size() != static_cast<size_t>(H.dim(0)))
        throw NumericsError("weighted_pair_reduce: weight count mismatch");
    int q_count = H.dim(0) / k;
    int cm = H.dim(1);
    int ci = X.dim(1);
    Tensor out({q_count, cm * ci});
    for (int q = 0; q < q_count; ++q) {
        Eigen::Map<MatRM> e(out.data() + static_cast<std::int64_t>(q) * cm * ci, cm, ci);
        for (int j = 0; j < k; ++j) {
            int r = q * k + j;
            double wr = w[static_cast<size_t>(r)];
            if (wr == 0.0) continue;
            e.noalias() += wr * H.mat().row(r).transpose() * X.mat().row(r);
        }
    }
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, h, x, w = std::move(w), k, cm, ci](Tape& t) {
                    const Tensor& g = t.grad(id);
                    const Tensor& H2 = t.value(h);
                    const Tensor& X2 = t.value(x);
                    Tensor& gh = t.grad_buf(h);
                    Tensor& gx = t.grad_buf(x);
                    int q_count = H2.dim(0) / k;
                    for (int q = 0; q < q_count; ++q) {
                        Eigen::Map<const MatRM> gq(
                            g.data() + static_cast<std::int64_t>(q) * cm * ci, cm, ci);
                        for (int j = 0; j < k; ++j) {
                            int r = q * k + j;
                            double wr = w[static_cast<size_t>(r)];
                            if (wr == 0.0) continue;
                            gh.mat().row(r).noalias() += wr * X2.mat().row(r) * gq.transpose();
                            gx.mat().row(r).noalias() += wr * H2.mat().row(r) * gq;
                        }
                    }
                },
                "weighted_pair_reduce");
}

Tape::Id Tape::gather_mean_weighted(Id features, std::vector<int> idx,
                                    std::vector<int> offsets, std::vector<double> weights,
                                    std::vector<char>* empty_out) {
    check_rank2(features, "gather_mean_weighted");
    const Tensor& F = value(features);
    if (offsets.empty() || offsets.front() != 0 ||
        offsets.back() != static_cast<int>(idx.size()))
        throw NumericsError("gather_mean_weighted: bad offsets");
    if (weights.size() != idx.size())
        throw NumericsError("gather_mean_weighted: weight count mismatch");
    for (int i : idx)
        if (i < 0 || i >= F.dim(0))
            throw NumericsError("gather_mean_weighted: index out of range");
    int q_count = static_cast<int>(offsets.size()) - 1;
    Tensor out({q_count, F.dim(1)});
    std::vector<double> denom(static_cast<size_t>(q_count), 0.0);
    if (empty_out) empty_out->assign(static_cast<size_t>(q_count), 0);
    for (int q = 0; q < q_count; ++q) {
        double s = 0.0;
        for (int r = offsets[q]; r < offsets[q + 1]; ++r) s += weights[static_cast<size_t>(r)];
        denom[static_cast<size_t>(q)] = s;
        if (std::abs(s) < 1e-12) {
            if (empty_out) (*empty_out)[static_cast<size_t>(q)] = 1;
            continue;
        }
        for (int r = offsets[q]; r < offsets[q + 1]; ++r)
            out.mat().row(q) += (weights[static_cast<size_t>(r)] / s) * F.mat().row(idx[r]);
    }
    Id id = static_cast<Id>(nodes_.size());
    return push(std::move(out),
                [id, features, idx = std::move(idx), offsets = std::move(offsets),
                 weights = std::move(weights), denom = std::move(denom)](Tape& t) {
                    const Tensor& g = t.grad(id);
                    Tensor& gf = t.grad_buf(features);
                    int q_count = static_cast<int>(offsets.size()) - 1;
                    for (int q = 0; q < q_count; ++q) {
                        double s = denom[static_cast<size_t>(q)];
                        if (std::abs(s) < 1e-12) continue;
                        for (int r = offsets[q]; r < offsets[q + 1]; ++r)
                            gf.mat().row(idx[r]) +=
                                (weights[static_cast<size_t>(r)] / s) * g.mat().row(q);
                    }
                },
                "gather_mean_weighted");
}

void Tape::backward(const std::vector<std::pair<Id, Tensor>>& seeds) {
    for (Node& n : nodes_)
        if (!n.sticky) n.grad = Tensor();
    for (const auto& [id, seed] : seeds) {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
            throw NumericsError("backward: seed id out of range");
        Tensor& g = grad_buf(id);
        if (!g.same_shape(seed)) throw NumericsError("backward: seed shape mismatch");
        g.mat() += seed.mat();
    }
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.grad.empty() && n.back) n.back(*this);
    }
}

void Tape::backward(Id loss) {
    if (value(loss).size() != 1) throw NumericsError("backward: loss must be scalar");
    Tensor one(value(loss).shape());
    one.fill(1.0);
    backward({{loss, std::move(one)}});
}

}  // namespace gsdyn::ad

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gsdyn/tensor.hpp"

namespace gsdyn::ad {

// Named persistent parameter. Gradients accumulate across backward passes until the
// optimizer consumes and zeroes them.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape());
    }
    void zero_grad() { grad.fill(0.0); }
};

// Reverse-mode tape over f64 tensors. Usage: record a forward computation through the op
// methods, then call backward() with one or more seed gradients. Gradients of ops recorded
// later never influence earlier values, so a single reverse sweep suffices.
//
// Grad buffers of interior nodes are scratch, cleared at the start of every backward pass.
// Buffers of leaves created with requires_grad=true, and Param::grad, persist and
// accumulate (two identical backward passes double them).
//
// Reduction order everywhere is ascending index, which makes results bitwise reproducible.
class Tape {
public:
    using Id = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- graph construction -------------------------------------------------------------

    Id leaf(Tensor value, bool requires_grad = false);
    Id param(Param& p);

    // out = a @ b, rank-2 each.
    Id matmul(Id a, Id b);
    // Elementwise; shapes must match, or one side is a scalar (rank 0) which broadcasts.
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id relu(Id a);
    Id abs(Id a);
    // Elementwise Huber of the input values: 0.5 x^2 for |x| <= delta, else
    // delta (|x| - delta/2).
    Id huber(Id a, double delta);
    // out = a * c for a runtime constant c.
    Id scale(Id a, double c);
    // mat (r x c) plus a length-c bias broadcast over rows.
    Id add_row_bias(Id mat, Id bias);
    // Column-wise concatenation of rank-2 tensors with equal row counts.
    Id concat_cols(const std::vector<Id>& parts);
    Id slice_cols(Id a, int from, int len);
    // out.row(r) = a.row(idx[r])
    Id gather_rows(Id a, std::vector<int> idx);
    Id mean_all(Id a);
    Id sum_all(Id a);
    Id reshape(Id a, std::vector<int> shape);

    // out.row(r) = (points.row(idx[r]) - queries.row(r / k)) * inv_scale, for r in
    // [0, Q*k). Fused so the backward can scatter into both inputs.
    Id relative_positions(Id points, Id queries, std::vector<int> idx, int k,
                          double inv_scale);

    // Per query q: out.row(q) = vec( sum_j w[q*k+j] * H.row(q*k+j)^T X.row(q*k+j) ), the
    // weighted sum of outer products at the core of the masked point convolution. w are
    // fixed (already normalized) weights.
    Id weighted_pair_reduce(Id h, Id x, std::vector<double> w, int k);

    // Weighted mean of gathered feature rows. Ragged neighborhoods: query q owns flat
    // entries [offsets[q], offsets[q+1]). A query whose weights sum to ~0 produces a zero
    // row and is reported in *empty_out (if given).
    Id gather_mean_weighted(Id features, std::vector<int> idx, std::vector<int> offsets,
                            std::vector<double> weights, std::vector<char>* empty_out);

    // ---- execution ----------------------------------------------------------------------

    const Tensor& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    // Gradient buffer of a node; empty until touched by a backward pass.
    const Tensor& grad(Id id) const { return nodes_[static_cast<size_t>(id)].grad; }

    // Clears interior grads, applies the seeds (grad += seed), then runs one reverse sweep.
    void backward(const std::vector<std::pair<Id, Tensor>>& seeds);
    // Convenience for a scalar loss: seed 1.
    void backward(Id loss);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool sticky = false;  // grad persists across backward passes
        std::function<void(Tape&)> back;
    };

    Id push(Tensor value, std::function<void(Tape&)> back, const char* op);
    Tensor& grad_buf(Id id);
    bool has_grad(Id id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }
    void check_rank2(Id a, const char* op) const;

    std::vector<Node> nodes_;
};

}  // namespace gsdyn::ad

// SPDX-License-Identifier: Apache-2.0
// Reverse-mode tape: every op's gradient against central finite differences, plus the
// accumulation / clearing contract.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gsdyn/tape.hpp"

using namespace gsdyn;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rand_uniform(rng, lo, hi);
    return t;
}

// Builds a scalar loss from leaves stored in `inputs`, then checks d loss / d input
// against central differences for every coordinate of every input.
void check_grads(std::vector<Tensor>& inputs,
                 const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& build,
                 double h = 1e-6, double tol = 1e-5) {
    Tape tape;
    std::vector<Tape::Id> ids;
    for (Tensor& t : inputs) ids.push_back(tape.leaf(t, true));
    Tape::Id loss = build(tape, ids);
    REQUIRE(tape.value(loss).size() == 1);
    tape.backward(loss);

    auto eval = [&]() {
        Tape t2;
        std::vector<Tape::Id> ids2;
        for (Tensor& t : inputs) ids2.push_back(t2.leaf(t));
        return t2.value(build(t2, ids2))[0];
    };
    for (size_t n = 0; n < inputs.size(); ++n) {
        const Tensor& g = tape.grad(ids[n]);
        REQUIRE(g.size() == inputs[n].size());
        for (std::int64_t j = 0; j < inputs[n].size(); ++j) {
            const double orig = inputs[n][j];
            inputs[n][j] = orig + h;
            const double up = eval();
            inputs[n][j] = orig - h;
            const double dn = eval();
            inputs[n][j] = orig;
            const double fd = (up - dn) / (2 * h);
            CHECK(g[j] == doctest::Approx(fd).epsilon(tol).scale(1.0));
        }
    }
}

}  // namespace

TEST_CASE("matmul values and gradients") {
    Rng rng(1);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    {
        Tape t;
        Tape::Id y = t.matmul(t.leaf(a), t.leaf(b));
        const Tensor& v = t.value(y);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 2; ++j) {
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += a[i * 4 + k] * b[k * 2 + j];
                CHECK(v[i * 2 + j] == doctest::Approx(acc).epsilon(1e-15));
            }
    }
    std::vector<Tensor> in = {a, b};
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        return t.sum_all(t.matmul(id[0], id[1]));
    });
}

TEST_CASE("elementwise add sub mul with scalar broadcast") {
    Rng rng(2);
    std::vector<Tensor> in = {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3}),
                              random_tensor(rng, {})};
    in[2][0] = 0.7;
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        Tape::Id y = t.mul(t.add(id[0], id[1]), t.sub(id[0], id[2]));
        return t.sum_all(y);
    });
}

TEST_CASE("relu kinks away from zero") {
    Rng rng(3);
    Tensor a = random_tensor(rng, {4, 4});
    for (std::int64_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i]) < 0.05) a[i] = 0.1;  // keep FD off the kink
    std::vector<Tensor> in = {a};
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        return t.sum_all(t.relu(id[0]));
    });
    Tape t;
    Tape::Id y = t.relu(t.leaf(a));
    for (std::int64_t i = 0; i < a.size(); ++i)
        CHECK(t.value(y)[i] == (a[i] > 0 ? a[i] : 0.0));
}

TEST_CASE("abs and huber values") {
    Tensor x({4});
    x[0] = 0.3;
    x[1] = -0.3;
    x[2] = 2.0;
    x[3] = -2.0;
    Tape t;
    Tape::Id h = t.huber(t.leaf(x), 1.0);
    CHECK(t.value(h)[0] == doctest::Approx(0.045).epsilon(1e-15));   // quadratic branch
    CHECK(t.value(h)[1] == doctest::Approx(0.045).epsilon(1e-15));
    CHECK(t.value(h)[2] == doctest::Approx(1.5).epsilon(1e-15));     // linear branch
    CHECK(t.value(h)[3] == doctest::Approx(1.5).epsilon(1e-15));
    Tape::Id a = t.abs(t.leaf(x));
    CHECK(t.value(a)[2] == 2.0);
    CHECK(t.value(a)[1] == 0.3);
}

TEST_CASE("huber gradients on both branches") {
    Tensor x({6});
    double vals[] = {0.2, -0.4, 0.8, 1.7, -2.5, 3.0};
    for (int i = 0; i < 6; ++i) x[i] = vals[i];
    std::vector<Tensor> in = {x};
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        return t.sum_all(t.huber(id[0], 1.0));
    });
}

TEST_CASE("scale and add_row_bias") {
    Rng rng(4);
    std::vector<Tensor> in = {random_tensor(rng, {3, 5}), random_tensor(rng, {5})};
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        return t.mean_all(t.scale(t.add_row_bias(id[0], id[1]), 2.5));
    });
    // Bias gradient is the column sum of the upstream gradient.
    Tape t;
    ad::Param b("b", Tensor({5}));
    Tape::Id y = t.sum_all(t.add_row_bias(t.leaf(random_tensor(rng, {3, 5})), t.param(b)));
    t.backward(y);
    for (int j = 0; j < 5; ++j) CHECK(b.grad[j] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("concat slice gather compose") {
    Rng rng(5);
    std::vector<Tensor> in = {random_tensor(rng, {4, 2}), random_tensor(rng, {4, 3})};
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        Tape::Id c = t.concat_cols({id[0], id[1]});              // 4 x 5
        Tape::Id s = t.slice_cols(c, 1, 3);                      // 4 x 3
        Tape::Id g = t.gather_rows(s, {0, 2, 2, 3, 1});          // repeated row 2
        return t.mean_all(t.mul(g, g));
    });
    // A row gathered twice accumulates twice the gradient.
    Tape t;
    Tensor a = random_tensor(rng, {3, 2});
    Tape::Id x = t.leaf(a, true);
    t.backward(t.sum_all(t.gather_rows(x, {1, 1, 0})));
    CHECK(t.grad(x)[0] == 1.0);
    CHECK(t.grad(x)[2] == 2.0);
    CHECK(t.grad(x)[4] == 0.0);
}

TEST_CASE("mean sum reshape") {
    Rng rng(6);
    std::vector<Tensor> in = {random_tensor(rng, {2, 6})};
    check_grads(in, [](Tape& t, const std::vector<Tape::Id>& id) {
        Tape::Id r = t.reshape(id[0], {3, 4});
        return t.add(t.mean_all(r), t.scale(t.sum_all(r), 0.25));
    });
    Tape t;
    Tensor a = random_tensor(rng, {2, 2});
    CHECK(t.value(t.mean_all(t.leaf(a)))[0] ==
          doctest::Approx((a[0] + a[1] + a[2] + a[3]) / 4.0).epsilon(1e-15));
}

TEST_CASE("relative_positions value oracle and gradients") {
    Rng rng(7);
    Tensor pts = random_tensor(rng, {5, 3});
    Tensor qry = random_tensor(rng, {2, 3});
    const std::vector<int> idx = {0, 3, 4, 1, 2, 2};  // k = 3 per query
    const double inv_scale = 1.0 / 0.3;
    {
        Tape t;
        Tape::Id y = t.relative_positions(t.leaf(pts), t.leaf(qry), idx, 3, inv_scale);
        const Tensor& v = t.value(y);
        REQUIRE(v.rows() == 6);
        for (int r = 0; r < 6; ++r)
            for (int d = 0; d < 3; ++d)
                CHECK(v[r * 3 + d] ==
                      doctest::Approx((pts[idx[static_cast<size_t>(r)] * 3 + d] -
                                       qry[(r / 3) * 3 + d]) *
                                      inv_scale)
                          .epsilon(1e-14));
    }
    std::vector<Tensor> in = {pts, qry};
    check_grads(in, [&](Tape& t, const std::vector<Tape::Id>& id) {
        Tape::Id y = t.relative_positions(id[0], id[1], idx, 3, inv_scale);
        return t.mean_all(t.mul(y, y));
    });
}

TEST_CASE("weighted_pair_reduce value oracle and gradients") {
    Rng rng(8);
    const int q = 2, k = 3, ch = 2, cx = 4;
    Tensor hmat = random_tensor(rng, {q * k, ch});
    Tensor xmat = random_tensor(rng, {q * k, cx});
    std::vector<double> w = {0.2, 0.5, 0.3, 0.0, 1.0, 0.0};
    {
        Tape t;
        Tape::Id y = t.weighted_pair_reduce(t.leaf(hmat), t.leaf(xmat), w, k);
        const Tensor& v = t.value(y);
        REQUIRE(v.rows() == q);
        REQUIRE(v.cols() == ch * cx);
        for (int qi = 0; qi < q; ++qi)
            for (int a = 0; a < ch; ++a)
                for (int b = 0; b < cx; ++b) {
                    double acc = 0;
                    for (int j = 0; j < k; ++j) {
                        const int r = qi * k + j;
                        acc += w[static_cast<size_t>(r)] * hmat[r * ch + a] * xmat[r * cx + b];
                    }
                    CHECK(v[qi * (ch * cx) + a * cx + b] ==
                          doctest::Approx(acc).epsilon(1e-14));
                }
    }
    std::vector<Tensor> in = {hmat, xmat};
    check_grads(in, [&](Tape& t, const std::vector<Tape::Id>& id) {
        return t.sum_all(t.weighted_pair_reduce(id[0], id[1], w, k));
    });
}

TEST_CASE("gather_mean_weighted ragged mean with empty rows") {
    Rng rng(9);
    Tensor f = random_tensor(rng, {4, 2});
    const std::vector<int> idx = {0, 2, 3, 1};
    const std::vector<int> offsets = {0, 2, 2, 4};  // query 1 has no neighbors
    const std::vector<double> w = {1.0, 3.0, 0.5, 0.5};
    std::vector<char> empty;
    Tape t;
    Tape::Id y = t.gather_mean_weighted(t.leaf(f, true), idx, offsets, w, &empty);
    const Tensor& v = t.value(y);
    REQUIRE(v.rows() == 3);
    REQUIRE(empty.size() == 3);
    CHECK(!empty[0]);
    CHECK(static_cast<bool>(empty[1]));
    CHECK(!empty[2]);
    for (int c = 0; c < 2; ++c) {
        CHECK(v[0 * 2 + c] ==
              doctest::Approx((1.0 * f[0 * 2 + c] + 3.0 * f[2 * 2 + c]) / 4.0).epsilon(1e-14));
        CHECK(v[1 * 2 + c] == 0.0);
        CHECK(v[2 * 2 + c] ==
              doctest::Approx(0.5 * (f[3 * 2 + c] + f[1 * 2 + c]) / 1.0).epsilon(1e-14));
    }
    std::vector<Tensor> in = {f};
    check_grads(in, [&](Tape& tt, const std::vector<Tape::Id>& id) {
        std::vector<char> e2;
        return tt.mean_all(tt.gather_mean_weighted(id[0], idx, offsets, w, &e2));
    });
}

TEST_CASE("multi-seed backward equals summed single-seed passes") {
    Rng rng(10);
    ad::Param p("p", random_tensor(rng, {3, 3}));
    Tensor x = random_tensor(rng, {2, 3});

    auto run = [&](bool joint) {
        p.zero_grad();
        Tape t;
        Tape::Id w = t.param(p);
        Tape::Id y1 = t.matmul(t.leaf(x), w);
        Tape::Id y2 = t.relu(y1);
        Tensor s1(t.value(y1).shape()), s2(t.value(y2).shape());
        for (std::int64_t i = 0; i < s1.size(); ++i) s1[i] = 0.3 + 0.1 * static_cast<double>(i);
        for (std::int64_t i = 0; i < s2.size(); ++i) s2[i] = -0.2 + 0.05 * static_cast<double>(i);
        if (joint) {
            t.backward({{y1, s1}, {y2, s2}});
        } else {
            t.backward({{y1, s1}});
            t.backward({{y2, s2}});
        }
        return p.grad;
    };
    Tensor joint = run(true);
    Tensor split = run(false);
    for (std::int64_t i = 0; i < joint.size(); ++i)
        CHECK(joint[i] == doctest::Approx(split[i]).epsilon(1e-13));
}

TEST_CASE("interior grads reset, sticky grads accumulate") {
    Tensor x({2});
    x[0] = 1.0;
    x[1] = 2.0;
    Tape t;
    Tape::Id leaf = t.leaf(x, true);
    Tape::Id mid = t.scale(leaf, 3.0);
    Tape::Id loss = t.sum_all(mid);
    t.backward(loss);
    CHECK(t.grad(leaf)[0] == 3.0);
    CHECK(t.grad(mid)[0] == 1.0);
    t.backward(loss);
    CHECK(t.grad(leaf)[0] == 6.0);  // leaf grads persist across passes
    CHECK(t.grad(mid)[0] == 1.0);   // interior grads start from zero each pass
}

TEST_CASE("param gradients accumulate until zeroed") {
    Rng rng(11);
    ad::Param p("p", random_tensor(rng, {2, 2}));
    Tape t;
    Tape::Id loss = t.sum_all(t.param(p));
    t.backward(loss);
    t.backward(loss);
    for (std::int64_t i = 0; i < p.grad.size(); ++i) CHECK(p.grad[i] == 2.0);
    p.zero_grad();
    for (std::int64_t i = 0; i < p.grad.size(); ++i) CHECK(p.grad[i] == 0.0);
}

TEST_CASE("shape errors are rejected") {
    Tape t;
    Tape::Id a = t.leaf(Tensor({2, 3}));
    Tape::Id b = t.leaf(Tensor({2, 2}));
    CHECK_THROWS_AS(t.matmul(a, b), NumericsError);
    CHECK_THROWS_AS(t.add(a, b), NumericsError);
    CHECK_THROWS_AS(t.add_row_bias(a, t.leaf(Tensor({2}))), NumericsError);
}

#include <cmath>
#include <vector>

#include "doctest.h"
#include "repst/autodiff.hpp"
#include "repst/rng.hpp"
#include "test_util.hpp"

using namespace repst;
using diff::Tape;
using diff::Var;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian();
    return t;
}

// Collapse any tensor to a scalar by repeated mean pooling; smooth, so it is
// safe under finite differences.
Var full_mean(Tape& t, Var v) {
    while (t.value(v).numel() > 1) {
        v = t.mean_pool(v, 0);
    }
    return v;
}

// Weighted mean against fixed coefficients keeps every coordinate's gradient
// informative (a plain mean would hide sign errors that cancel).
Var weighted_mean(Tape& t, Var v, std::uint64_t seed) {
    Var c = t.constant(random_tensor(t.value(v).shape(), seed));
    return full_mean(t, t.ewmul(v, c));
}

}  // namespace

TEST_SUITE_BEGIN("compute");

TEST_CASE("softmax of a constant row is uniform") {
    Tape t;
    Var x = t.constant(Tensor({3}, {0.0, 0.0, 0.0}));
    Var y = t.softmax(x, 0);
    for (int i = 0; i < 3; ++i) CHECK(t.value(y)[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Var big = t.constant(Tensor({3}, {50.0, 0.0, 0.0}));
    Var yb = t.softmax(big, 0);
    CHECK(t.value(yb)[0] > 0.999999);
}

TEST_CASE("layer_norm standardizes [1,2,3] exactly at eps 0") {
    Tape t;
    Var x = t.constant(Tensor({3}, {1.0, 2.0, 3.0}));
    Var y = t.layer_norm(x, 0, 0.0);
    const Tensor& out = t.value(y);
    double mean = (out[0] + out[1] + out[2]) / 3.0;
    double var = (out[0] * out[0] + out[1] * out[1] + out[2] * out[2]) / 3.0;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conv1d with identity kernel passes input through") {
    Tape t;
    Tensor x = random_tensor({2, 5, 3}, 11);
    Tensor w({3, 3, 1});
    for (int c = 0; c < 3; ++c) w.at3(c, c, 0) = 1.0;
    Var y = t.conv1d_same(t.constant(x), t.constant(w), t.constant(Tensor({3})));
    CHECK(repst_test::max_abs_diff(t.value(y), x) == 0.0);
}

TEST_CASE("grad_check on f(x) = x^2 at x = 3") {
    Tensor x = Tensor::scalar(3.0);
    double err = diff::grad_check(x, 1e-5, [](Tape& t, Var p) { return t.ewmul(p, p); });
    CHECK(err <= 1e-7);

    // And the analytic value itself is 6.
    Tape t;
    Var p = t.param(x);
    Var loss = t.ewmul(p, p);
    t.backward(loss);
    CHECK(t.grad(p)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad_check rejects out-of-range step sizes") {
    Tensor x = Tensor::scalar(1.0);
    CHECK_THROWS_AS(diff::grad_check(x, 1e-7, [](Tape& t, Var p) { return t.ewmul(p, p); }),
                    ContractViolation);
    CHECK_THROWS_AS(diff::grad_check(x, 1e-2, [](Tape& t, Var p) { return t.ewmul(p, p); }),
                    ContractViolation);
}

TEST_CASE("grad_check of MAE of a linear layer") {
    Tensor w = random_tensor({4, 3}, 21);
    Tensor x = random_tensor({5, 4}, 22);
    Tensor target = random_tensor({5, 3}, 23);
    for (std::int64_t i = 0; i < target.numel(); ++i) target[i] += 3.0;  // keep |.| off its kink
    double err = diff::grad_check(w, 1e-5, [&](Tape& t, Var p) {
        Var out = t.matmul(t.constant(x), p);
        return t.mae_loss(out, t.constant(target));
    });
    CHECK(err <= 1e-4);
}

TEST_CASE("per-primitive gradient checks stay under 1e-4") {
    const double h = 1e-5;

    SUBCASE("matmul lhs") {
        Tensor p = random_tensor({3, 4}, 31);
        Tensor b = random_tensor({4, 2}, 32);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.matmul(v, t.constant(b)), 33);
              }) <= 1e-4);
    }
    SUBCASE("matmul rhs") {
        Tensor a = random_tensor({3, 4}, 34);
        Tensor p = random_tensor({4, 2}, 35);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.matmul(t.constant(a), v), 36);
              }) <= 1e-4);
    }
    SUBCASE("transpose") {
        Tensor p = random_tensor({3, 5}, 37);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.transpose(v), 38);
              }) <= 1e-4);
    }
    SUBCASE("add same-shape and bias broadcast") {
        Tensor p = random_tensor({4}, 39);
        Tensor a = random_tensor({3, 4}, 40);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.add(t.constant(a), v), 41);
              }) <= 1e-4);
        Tensor q = random_tensor({3, 4}, 42);
        CHECK(diff::grad_check(q, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.add(v, t.constant(a)), 43);
              }) <= 1e-4);
    }
    SUBCASE("ewmul broadcast") {
        Tensor p = random_tensor({4}, 44);
        Tensor a = random_tensor({3, 4}, 45);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.ewmul(t.constant(a), v), 46);
              }) <= 1e-4);
    }
    SUBCASE("scale_rows") {
        Tensor p = random_tensor({3}, 47);
        Tensor a = random_tensor({3, 4}, 48);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.scale_rows(t.constant(a), v), 49);
              }) <= 1e-4);
    }
    SUBCASE("softmax") {
        Tensor p = random_tensor({3, 5}, 50);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.softmax(v, 1), 51);
              }) <= 1e-4);
    }
    SUBCASE("layer_norm") {
        Tensor p = random_tensor({3, 5}, 52);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.layer_norm(v, 1, 1e-5), 53);
              }) <= 1e-4);
    }
    SUBCASE("gelu") {
        Tensor p = random_tensor({7}, 54);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.gelu(v), 55);
              }) <= 1e-4);
    }
    SUBCASE("conv1d weight, input and bias") {
        Tensor x = random_tensor({2, 6, 3}, 56);
        Tensor w = random_tensor({4, 3, 3}, 57);
        Tensor b = random_tensor({4}, 58);
        CHECK(diff::grad_check(w, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.conv1d_same(t.constant(x), v, t.constant(b)), 59);
              }) <= 1e-4);
        CHECK(diff::grad_check(x, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.conv1d_same(v, t.constant(w), t.constant(b)), 60);
              }) <= 1e-4);
        CHECK(diff::grad_check(b, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.conv1d_same(t.constant(x), t.constant(w), v), 61);
              }) <= 1e-4);
    }
    SUBCASE("mean_pool middle axis") {
        Tensor p = random_tensor({2, 5, 3}, 62);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.mean_pool(v, 1), 63);
              }) <= 1e-4);
    }
    SUBCASE("scalar_scale, concat, slice, gather, reshape") {
        Tensor p = random_tensor({3, 4}, 64);
        CHECK(diff::grad_check(p, h, [&](Tape& t, Var v) {
                  Var other = t.constant(random_tensor({2, 4}, 65));
                  Var cat = t.concat({t.scalar_scale(v, 1.7), other}, 0);
                  Var sl = t.slice(cat, 0, 1, 3);
                  return weighted_mean(t, t.reshape(sl, {12}), 66);
              }) <= 1e-4);
        Tensor q = random_tensor({9}, 67);
        CHECK(diff::grad_check(q, h, [&](Tape& t, Var v) {
                  return weighted_mean(t, t.gather(v, {7, 2, 2, 0}), 68);
              }) <= 1e-4);
    }
}

TEST_CASE("mae_loss value and subgradient") {
    Tape t;
    Var p = t.param(Tensor({2}, {1.0, 2.0}));
    Var target = t.constant(Tensor({2}, {2.0, 4.0}));
    Var loss = t.mae_loss(p, target);
    CHECK(t.value(loss)[0] == doctest::Approx(1.5).epsilon(1e-12));
    t.backward(loss);
    CHECK(t.grad(p)[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(t.grad(p)[1] == doctest::Approx(-0.5).epsilon(1e-12));

    // Subgradient at zero residual is zero.
    Tape t2;
    Var p2 = t2.param(Tensor({1}, {5.0}));
    Var loss2 = t2.mae_loss(p2, t2.constant(Tensor({1}, {5.0})));
    t2.backward(loss2);
    CHECK(t2.grad(p2)[0] == 0.0);
}

TEST_CASE("identical prediction gives zero loss") {
    Tape t;
    Tensor v = random_tensor({3, 4}, 70);
    Var loss = t.mae_loss(t.constant(v), t.constant(v));
    CHECK(t.value(loss)[0] == 0.0);
}

TEST_CASE("straight_through_ones is ones forward, identity backward") {
    Tape t;
    Var p = t.param(Tensor({3}, {0.2, 0.5, 0.3}));
    Var st = t.straight_through_ones(p);
    for (int i = 0; i < 3; ++i) CHECK(t.value(st)[i] == 1.0);
    Var c = t.constant(Tensor({3}, {1.0, 2.0, 3.0}));
    Var loss = full_mean(t, t.ewmul(st, c));
    t.backward(loss);
    CHECK(t.grad(p)[0] == doctest::Approx(1.0 / 3.0));
    CHECK(t.grad(p)[1] == doctest::Approx(2.0 / 3.0));
    CHECK(t.grad(p)[2] == doctest::Approx(3.0 / 3.0));
}

TEST_CASE("backward never allocates gradients for frozen tensors") {
    Tape t;
    Tensor frozen_val = random_tensor({4, 4}, 80);
    Var frozen = t.constant(frozen_val);
    Var p = t.param(random_tensor({4, 4}, 81));
    Var out = t.matmul(frozen, p);
    Var loss = full_mean(t, out);
    t.backward(loss);
    CHECK(t.has_grad(p));
    CHECK_FALSE(t.has_grad(frozen));
    CHECK_THROWS_AS(t.grad(frozen), ContractViolation);
    // The frozen value is bit-identical after backward.
    CHECK(repst_test::max_abs_diff(t.value(frozen), frozen_val) == 0.0);
}

TEST_CASE("shape mismatches name both shapes") {
    Tape t;
    Var a = t.constant(Tensor({2, 3}));
    Var b = t.constant(Tensor({2, 3}));
    try {
        t.matmul(a, b);
        FAIL("expected ContractViolation");
    } catch (const ContractViolation& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
    }
}

TEST_SUITE_END();

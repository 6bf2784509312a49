// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "umpe/autodiff.hpp"
#include "umpe/rng.hpp"

using namespace umpe;
using namespace umpe::nn;

namespace {

Tensor random_tensor(Shape s, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

// Scalarizes y against fixed random weights so every element's gradient is
// probed with a distinct coefficient.
Var probe_loss(const Var& y, std::uint64_t seed = 99) {
  RngStream rng(seed);
  Tensor w(y->val.shape());
  for (auto& v : w.vec()) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(y, constant(std::move(w))));
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("broadcast add/mul values") {
  Var a = constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = constant(Tensor({3}, {10, 20, 30}));
  Var s = add(a, b);
  CHECK(s->val.shape() == Shape{2, 3});
  CHECK(s->val.at2(0, 0) == 11);
  CHECK(s->val.at2(1, 2) == 36);
  Var c = constant(Tensor({2, 1}, {2, 3}));
  Var m = mul(a, c);
  CHECK(m->val.at2(0, 2) == 6);
  CHECK(m->val.at2(1, 0) == 12);
}

TEST_CASE("constants are pruned from the graph") {
  Var a = constant(Tensor({2}, {1, 2}));
  Var b = constant(Tensor({2}, {3, 4}));
  Var y = mul(a, b);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("grad accumulates across re-use") {
  Var x = leaf(Tensor({2}, {1.0, 2.0}));
  Var y = sum_all(add(x, x));
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(2.0));
  CHECK(x->grad[1] == doctest::Approx(2.0));
}

TEST_CASE("matmul matches naive reference") {
  RngStream rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Var y = matmul(constant(a), constant(b));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a.at2(i, k) * b.at2(k, j);
      CHECK(y->val.at2(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("gradcheck elementwise chain") {
  RngStream rng(11);
  Var x = leaf(random_tensor({2, 3}, rng, 0.2, 1.5));
  auto f = [&] {
    Var y = gelu(sigmoid(mul_scalar(x, 1.3)));
    y = add(y, sin_op(x));
    y = mul(y, cos_op(x));
    y = add(y, exp_op(neg(x)));
    y = add(y, log_op(add_scalar(x, 2.0)));
    y = add(y, sqrt_op(add_scalar(x, 1.0)));
    y = add(y, tanh_op(x));
    return probe_loss(y);
  };
  auto r = grad_check(f, {{"x", x}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck clamp and abs away from kinks") {
  Var x = leaf(Tensor({4}, {-1.7, -0.31, 0.42, 1.9}));
  auto f = [&] {
    Var y = add(clamp(x, -0.8, 0.8), abs_op(x));
    return probe_loss(y);
  };
  auto r = grad_check(f, {{"x", x}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck broadcast binary ops") {
  RngStream rng(13);
  Var a = leaf(random_tensor({2, 1, 3}, rng));
  Var b = leaf(random_tensor({4, 1}, rng));
  auto f = [&] { return probe_loss(add(mul(a, b), sub(a, b))); };
  auto r = grad_check(f, {{"a", a}, {"b", b}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck matmul variants") {
  RngStream rng(17);
  Var a2 = leaf(random_tensor({3, 4}, rng));
  Var b2 = leaf(random_tensor({4, 2}, rng));
  Var a3 = leaf(random_tensor({2, 3, 4}, rng));
  Var b3 = leaf(random_tensor({2, 4, 2}, rng));
  auto f = [&] {
    Var y2 = matmul(a2, b2);                       // [3,2]
    Var y3 = matmul(a3, b3);                       // [2,3,2]
    Var y_shared = matmul(a3, b2);                 // [2,3,2] shared rhs
    return add(probe_loss(y2), add(probe_loss(y3), probe_loss(y_shared)));
  };
  auto r = grad_check(f, {{"a2", a2}, {"b2", b2}, {"a3", a3}, {"b3", b3}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck shape ops") {
  RngStream rng(19);
  Var a = leaf(random_tensor({2, 3, 4}, rng));
  Var b = leaf(random_tensor({2, 2, 4}, rng));
  auto f = [&] {
    Var t = transpose_last2(a);               // [2,4,3]
    Var r1 = reshape(t, {4, 6});
    Var s = slice(a, 1, 1, 2);                // [2,2,4]
    Var c = concat({s, b}, 1);                // [2,4,4]
    return add(probe_loss(r1), probe_loss(c));
  };
  auto r = grad_check(f, {{"a", a}, {"b", b}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck reductions") {
  RngStream rng(23);
  Var a = leaf(random_tensor({3, 4, 2}, rng));
  auto f = [&] {
    Var y = sum_axis(a, 1, true);
    Var z = mean_axis(a, 0, false);
    return add(probe_loss(y), add(probe_loss(z), mean_all(a)));
  };
  auto r = grad_check(f, {{"a", a}});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax rows sum to one and gradcheck") {
  RngStream rng(29);
  Var a = leaf(random_tensor({3, 5}, rng, -3.0, 3.0));
  Var y = softmax(a, -1);
  for (int i = 0; i < 3; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += y->val.at2(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto f = [&] { return probe_loss(softmax(a, -1)); };
  auto r = grad_check(f, {{"a", a}});
  CHECK(r.max_rel_err < 1e-6);

  // Softmax over a middle axis.
  Var b = leaf(random_tensor({2, 3, 4}, rng, -2.0, 2.0));
  auto g = [&] { return probe_loss(softmax(b, 1)); };
  CHECK(grad_check(g, {{"b", b}}).max_rel_err < 1e-6);
}

TEST_CASE("gradcheck layer_norm") {
  RngStream rng(31);
  Var x = leaf(random_tensor({4, 6}, rng));
  Var gm = leaf(random_tensor({6}, rng, 0.5, 1.5));
  Var bt = leaf(random_tensor({6}, rng, -0.3, 0.3));
  auto f = [&] { return probe_loss(layer_norm(x, gm, bt)); };
  auto r = grad_check(f, {{"x", x}, {"gamma", gm}, {"beta", bt}});
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck conv2d") {
  RngStream rng(37);
  Var x = leaf(random_tensor({2, 3, 5, 6}, rng));
  Var w = leaf(random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5));
  Var b = leaf(random_tensor({4}, rng, -0.2, 0.2));
  auto f = [&] { return probe_loss(conv2d(x, w, b, 2, 1)); };
  auto r = grad_check(f, {{"x", x}, {"w", w}, {"b", b}});
  CHECK(r.max_rel_err < 1e-6);

  // 1x1, stride 1, no bias.
  Var w1 = leaf(random_tensor({2, 3, 1, 1}, rng));
  auto g = [&] { return probe_loss(conv2d(x, w1, nullptr, 1, 0)); };
  CHECK(grad_check(g, {{"x", x}, {"w1", w1}}).max_rel_err < 1e-6);
}

TEST_CASE("conv2d output sizes") {
  Var x = constant(Tensor({1, 1, 5, 9}));
  Var w = constant(Tensor({1, 1, 3, 3}));
  Var y = conv2d(x, w, nullptr, 2, 1);
  CHECK(y->val.shape() == Shape{1, 1, 3, 5});
}

TEST_CASE("gradcheck bilinear_resize") {
  RngStream rng(41);
  Var x = leaf(random_tensor({1, 2, 3, 4}, rng));
  auto up = [&] { return probe_loss(bilinear_resize(x, 7, 9)); };
  CHECK(grad_check(up, {{"x", x}}).max_rel_err < 1e-6);
  auto down = [&] { return probe_loss(bilinear_resize(x, 2, 3)); };
  CHECK(grad_check(down, {{"x", x}}).max_rel_err < 1e-6);
}

TEST_CASE("affine_warp identity is exact") {
  RngStream rng(43);
  Tensor img = random_tensor({1, 2, 4, 5}, rng);
  Var y = affine_warp(constant(img), constant(Tensor({1, 2, 3}, {1, 0, 0, 0, 1, 0})));
  for (std::int64_t i = 0; i < img.numel(); ++i)
    CHECK(y->val[i] == doctest::Approx(img[i]).epsilon(1e-15));
}

TEST_CASE("affine_warp one-pixel translation shifts and zero-fills") {
  // t_x = 2/(W-1) moves the sampling grid one pixel to the right.
  const std::int64_t w = 5;
  Tensor img({1, 1, 2, w});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<double>(i);
  const double tx = 2.0 / (w - 1);
  Var y = affine_warp(constant(img), constant(Tensor({1, 2, 3}, {1, 0, tx, 0, 1, 0})));
  for (std::int64_t r = 0; r < 2; ++r) {
    for (std::int64_t c = 0; c + 1 < w; ++c)
      CHECK(y->val[r * w + c] == doctest::Approx(img[r * w + c + 1]));
    CHECK(y->val[r * w + w - 1] == doctest::Approx(0.0));
  }
}

TEST_CASE("gradcheck affine_warp wrt map and theta") {
  RngStream rng(47);
  Var x = leaf(random_tensor({2, 2, 5, 6}, rng));
  // Small pose away from bilinear cell boundaries.
  Var th = leaf(Tensor({2, 2, 3}, {0.998, -0.06, 0.0731, 0.06, 0.998, -0.0457,
                                   0.999, 0.04, -0.0213, -0.04, 0.999, 0.0621}));
  auto f = [&] { return probe_loss(affine_warp(x, th)); };
  auto r = grad_check(f, {{"x", x}, {"theta", th}}, 1e-6);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("warp is linear in the feature map") {
  RngStream rng(53);
  Tensor a = random_tensor({1, 1, 6, 6}, rng);
  Tensor b = random_tensor({1, 1, 6, 6}, rng);
  Tensor th({1, 2, 3}, {0.99, -0.14, 0.21, 0.14, 0.99, -0.08});
  const double alpha = 0.7, beta = -1.3;
  Tensor mix({1, 1, 6, 6});
  for (std::int64_t i = 0; i < mix.numel(); ++i)
    mix[i] = alpha * a[i] + beta * b[i];
  Var wa = affine_warp(constant(a), constant(th));
  Var wb = affine_warp(constant(b), constant(th));
  Var wm = affine_warp(constant(mix), constant(th));
  for (std::int64_t i = 0; i < mix.numel(); ++i)
    CHECK(wm->val[i] ==
          doctest::Approx(alpha * wa->val[i] + beta * wb->val[i]).epsilon(1e-10));
}

TEST_CASE("gradcheck bce_with_logits") {
  RngStream rng(59);
  Var x = leaf(random_tensor({3, 4}, rng, -2.0, 2.0));
  Tensor t({3, 4});
  for (auto& v : t.vec()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Var tv = constant(std::move(t));
  auto f = [&] { return bce_with_logits(x, tv, 2.5); };
  CHECK(grad_check(f, {{"x", x}}).max_rel_err < 1e-6);

  // Value cross-check on a scalar case: x=0, t=1 -> log 2.
  Var x0 = constant(Tensor({1}, {0.0}));
  Var t1 = constant(Tensor({1}, {1.0}));
  CHECK(bce_with_logits(x0, t1, 1.0)->val[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_SUITE_END();

#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "psr/rng.hpp"

using namespace psr;
using psr::testing::gradcheck;

namespace {

Tensor randn(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Weighted sum against fixed random coefficients turns any tensor output
// into a scalar with non-degenerate gradients everywhere.
VarPtr weighted_sum(const VarPtr& x, uint64_t seed) {
  Rng rng(seed);
  Tensor w(x->val.shape);
  for (double& v : w.data) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return mean_all(mul(x, make_const(w)));
}

}  // namespace

TEST_CASE("autodiff: elementwise op gradients match finite differences") {
  Rng rng(51);
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) {
        VarPtr h = mul(silu(p[0]), sigmoid(p[1]));
        h = add(h, square(sub(p[0], p[1])));
        h = add_scalar(mul_scalar(h, 1.7), 0.3);
        return weighted_sum(h, 1);
      },
      {randn(rng, {3, 4}), randn(rng, {3, 4})});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("autodiff: loss op gradients match finite differences") {
  Rng rng(52);
  Tensor a = randn(rng, {4, 4});
  Tensor b = randn(rng, {4, 4});
  // Keep |a-b| away from the L1 kink so the finite difference is clean.
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::abs(a[i] - b[i]) < 0.05) a[i] += 0.1;
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) {
        return add(l1_loss(p[0], p[1]), mse_loss(p[0], p[1]));
      },
      {a, b});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("autodiff: conv2d gradients match finite differences") {
  Rng rng(53);
  for (auto [k, stride] : std::vector<std::pair<int, int>>{{3, 1}, {3, 2}, {1, 1}, {5, 1}, {4, 2}}) {
    auto res = gradcheck(
        [k = k, stride = stride](std::vector<VarPtr>& p) {
          return weighted_sum(conv2d(p[0], p[1], p[2], stride, k / 2), 2);
        },
        {randn(rng, {2, 3, 6, 6}), randn(rng, {4, 3, k, k}, 0.5), randn(rng, {4}, 0.2)});
    CAPTURE(k);
    CAPTURE(stride);
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("autodiff: linear gradients match finite differences") {
  Rng rng(54);
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) { return weighted_sum(linear(p[0], p[1], p[2]), 3); },
      {randn(rng, {3, 5}), randn(rng, {4, 5}, 0.5), randn(rng, {4}, 0.2)});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("autodiff: group_norm gradients match finite differences") {
  Rng rng(55);
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) {
        return weighted_sum(group_norm(p[0], p[1], p[2], 2), 4);
      },
      {randn(rng, {2, 4, 3, 3}), randn(rng, {4}, 0.3), randn(rng, {4}, 0.3)});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("autodiff: upsample, concat and channel-vector add gradients") {
  Rng rng(56);
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) {
        VarPtr up = nearest_upsample2(p[0]);
        VarPtr cat = concat_channels({up, p[1]});
        return weighted_sum(add_channel_vec(cat, p[2]), 5);
      },
      {randn(rng, {2, 2, 3, 3}), randn(rng, {2, 3, 6, 6}), randn(rng, {2, 5})});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("autodiff: bmm gradients for all transpose combinations") {
  Rng rng(57);
  for (int ta = 0; ta <= 1; ++ta)
    for (int tb = 0; tb <= 1; ++tb) {
      std::vector<int64_t> ashape = ta ? std::vector<int64_t>{2, 4, 3} : std::vector<int64_t>{2, 3, 4};
      std::vector<int64_t> bshape = tb ? std::vector<int64_t>{2, 5, 4} : std::vector<int64_t>{2, 4, 5};
      auto res = gradcheck(
          [ta, tb](std::vector<VarPtr>& p) {
            return weighted_sum(bmm(p[0], p[1], ta != 0, tb != 0), 6);
          },
          {randn(rng, ashape), randn(rng, bshape)});
      CAPTURE(ta);
      CAPTURE(tb);
      CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("autodiff: softmax gradients match finite differences") {
  Rng rng(58);
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) { return weighted_sum(softmax_lastdim(p[0]), 7); },
      {randn(rng, {2, 3, 4})});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("autodiff: attention-style composite gradients") {
  Rng rng(59);
  auto res = gradcheck(
      [](std::vector<VarPtr>& p) {
        VarPtr q = p[0], k = p[1], v = p[2];
        VarPtr att = softmax_lastdim(mul_scalar(bmm(q, k, true, false), 0.5));
        return weighted_sum(bmm(v, att, false, true), 8);
      },
      {randn(rng, {1, 3, 6}), randn(rng, {1, 3, 6}), randn(rng, {1, 3, 6})});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("autodiff: gradient accumulates over reused nodes") {
  Rng rng(60);
  Tensor t = randn(rng, {3, 3});
  VarPtr x = make_param(t);
  VarPtr y = add(mul(x, x), mul_scalar(x, 2.0));  // x^2 + 2x
  VarPtr loss = mean_all(y);
  zero_grad({x});
  backward(loss);
  for (int64_t i = 0; i < t.numel(); ++i)
    CHECK(x->grad[i] == doctest::Approx((2.0 * t[i] + 2.0) / 9.0).epsilon(1e-12));
}

TEST_CASE("autodiff: constants keep no tape") {
  VarPtr a = make_const(Tensor::full({2, 2}, 1.0));
  VarPtr b = make_const(Tensor::full({2, 2}, 2.0));
  VarPtr c = mul(a, b);
  CHECK_FALSE(c->requires_grad);
  CHECK(c->parents.empty());
}

TEST_CASE("autodiff: backward requires a scalar root") {
  VarPtr x = make_param(Tensor::full({2, 2}, 1.0));
  VarPtr y = mul(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

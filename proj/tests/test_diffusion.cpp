#include <doctest.h>

#include <cmath>

#include "psr/diffusion.hpp"
#include "psr/nn.hpp"
#include "psr/rng.hpp"

using namespace psr;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor random_normal(Rng& rng, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("diffusion: linear schedule endpoints are exact") {
  NoiseSchedule s = make_schedule(2000, 1e-6, 1e-2);
  CHECK(s.beta[0] == 1e-6);
  CHECK(s.beta[1999] == 1e-2);
  s.validate();
}

TEST_CASE("diffusion: two-step constant schedule products") {
  NoiseSchedule s = make_schedule(2, 0.5, 0.5);
  CHECK(s.alpha_bar[0] == 0.5);
  CHECK(s.alpha_bar[1] == 0.25);
}

TEST_CASE("diffusion: alpha_bar matches a brute-force long double product") {
  NoiseSchedule s = make_schedule(2000, 1e-6, 1e-2);
  long double prod = 1.0L;
  for (int64_t t = 0; t < 2000; ++t) {
    prod *= 1.0L - static_cast<long double>(s.beta[static_cast<size_t>(t)]);
    double expected = static_cast<double>(prod);
    CHECK(std::abs(s.alpha_bar[static_cast<size_t>(t)] - expected) <=
          1e-12 * std::abs(expected));
  }
}

TEST_CASE("diffusion: SNR is strictly decreasing") {
  NoiseSchedule s = make_schedule(2000, 1e-6, 1e-2);
  double prev = s.alpha_bar[0] / (1.0 - s.alpha_bar[0]);
  for (int64_t t = 1; t < s.T; ++t) {
    double snr = s.alpha_bar[static_cast<size_t>(t)] / (1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    CHECK(snr < prev);
    prev = snr;
  }
}

TEST_CASE("diffusion: schedule rejects invalid bounds") {
  CHECK_THROWS_AS(make_schedule(1, 1e-6, 1e-2), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 1e-2), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 1e-2, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 1e-3, 1.0), std::invalid_argument);
}

TEST_CASE("diffusion: forward with zero noise scales by sqrt(alpha_bar)") {
  NoiseSchedule s = make_schedule(100, 1e-4, 2e-2);
  Rng rng(41);
  Tensor x0 = random_tensor(rng, {4, 4});
  Tensor eps = Tensor::zeros({4, 4});
  Tensor xt = forward_diffuse(x0, 57, eps, s);
  double sa = std::sqrt(s.alpha_bar[57]);
  for (int64_t i = 0; i < x0.numel(); ++i) CHECK(xt[i] == sa * x0[i]);
}

TEST_CASE("diffusion: forward scalar check against the closed form") {
  NoiseSchedule s;
  s.T = 2;
  s.beta = {0.5, 0.75};
  s.alpha = {0.5, 0.25};
  s.alpha_bar = {0.5, 0.25};  // alpha_bar[1] = 0.25 drives the check
  Tensor x0({1}), eps({1});
  x0[0] = 1.0;
  eps[0] = 1.0;
  Tensor xt = forward_diffuse(x0, 1, eps, s);
  CHECK(xt[0] == doctest::Approx(0.5 + std::sqrt(0.75)).epsilon(1e-12));
  CHECK_THROWS_AS(forward_diffuse(x0, 2, eps, s), std::out_of_range);
}

TEST_CASE("diffusion: forward variance matches 1 - alpha_bar") {
  NoiseSchedule s = make_schedule(1000, 1e-5, 1e-2);
  int64_t t = 600;
  Rng rng(42);
  const int64_t n = 100000;
  double sum = 0.0, sumsq = 0.0;
  Tensor x0 = Tensor::zeros({1});
  for (int64_t i = 0; i < n; ++i) {
    Tensor eps({1});
    eps[0] = rng.normal();
    double v = forward_diffuse(x0, t, eps, s)[0];
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / static_cast<double>(n);
  double var = sumsq / static_cast<double>(n) - mean * mean;
  double expected = 1.0 - s.alpha_bar[static_cast<size_t>(t)];
  CHECK(std::abs(var - expected) < 0.02 * expected);
}

TEST_CASE("diffusion: ddim scalar check") {
  NoiseSchedule s;
  s.T = 2;
  s.beta = {0.5, 0.5};
  s.alpha = {0.5, 0.5};
  s.alpha_bar = {0.5, 0.25};
  Tensor xt({1}), et({1});
  xt[0] = 0.5 + std::sqrt(0.75);  // forward of x0=1 with eps=1 at abar 0.25
  et[0] = 1.0;
  Tensor prev = ddim_step(xt, et, 1, 0, s);
  // x0_hat = 1, re-noised at abar 0.5: sqrt(0.5) + sqrt(0.5).
  CHECK(prev[0] == doctest::Approx(std::sqrt(0.5) + std::sqrt(0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(ddim_step(xt, et, 0, 1, s), std::invalid_argument);
}

TEST_CASE("diffusion: ddim exactly inverts the forward map under oracle noise") {
  NoiseSchedule s = make_schedule(2000, 1e-6, 1e-2);
  Rng rng(43);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x0 = random_tensor(rng, {3, 5});
    Tensor eps = random_normal(rng, {3, 5});
    int64_t t = rng.uniform_int(1, s.T - 1);
    int64_t t_prev = rng.uniform_int(0, t - 1);
    Tensor xt = forward_diffuse(x0, t, eps, s);
    Tensor got = ddim_step(xt, eps, t, t_prev, s);
    Tensor expected = forward_diffuse(x0, t_prev, eps, s);
    worst = std::max(worst, rel_err(got, expected));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("diffusion: 40-step oracle chain recovers x0") {
  NoiseSchedule s = make_schedule(2000, 1e-6, 1e-2);
  TimestepPlan plan = make_timestep_plan(2000, 40);
  Rng rng(44);
  Tensor x0 = random_tensor(rng, {4, 4});
  Tensor eps = random_normal(rng, {4, 4});
  Tensor x = forward_diffuse(x0, plan.steps[0], eps, s);
  for (size_t i = 0; i + 1 < plan.steps.size(); ++i)
    x = ddim_step(x, eps, plan.steps[i], plan.steps[i + 1], s);
  x = ddim_final(x, eps, plan.steps.back(), s);
  CHECK(rel_err(x, x0) < 1e-6);
}

TEST_CASE("diffusion: loss identities") {
  Rng rng(45);
  Tensor a = random_normal(rng, {6, 6});
  CHECK(diffusion_loss(a, a) == 0.0);

  Tensor b = a;
  for (double& v : b.data) v += 0.5;
  CHECK(diffusion_loss(a, b) == doctest::Approx(0.25).epsilon(1e-12));

  Tensor c = random_normal(rng, {6, 6});
  CHECK(diffusion_loss(a, c) == diffusion_loss(c, a));
  CHECK(diffusion_loss(a, c) > 0.0);

  // Independent two-loop summation oracle in long double.
  long double acc = 0.0L;
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 6; ++x) {
      long double d = a.at(y, x) - c.at(y, x);
      acc += d * d;
    }
  double expected = static_cast<double>(acc / 36.0L);
  CHECK(diffusion_loss(a, c) == doctest::Approx(expected).epsilon(1e-13));

  Tensor wrong({3, 3});
  CHECK_THROWS_AS(diffusion_loss(a, wrong), std::invalid_argument);
}

TEST_CASE("diffusion: timestep plans") {
  TimestepPlan p = make_timestep_plan(2000, 40);
  CHECK(p.steps.size() == 40);
  CHECK(p.steps.front() == 1999);
  CHECK(p.steps.back() == 0);
  p.validate(2000);

  TimestepPlan full = make_timestep_plan(10, 10);
  for (int64_t i = 0; i < 10; ++i) CHECK(full.steps[static_cast<size_t>(i)] == 9 - i);

  for (auto [T, n] : std::vector<std::pair<int64_t, int64_t>>{{100, 10}, {2000, 40}, {8, 3}}) {
    TimestepPlan plan = make_timestep_plan(T, n);
    CHECK(plan.steps.size() == static_cast<size_t>(n));
    plan.validate(T);
  }

  CHECK_THROWS_AS(make_timestep_plan(10, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_timestep_plan(10, 11), std::invalid_argument);
}

TEST_CASE("diffusion: ema update semantics") {
  ModelState st;
  st.weights["w"] = Tensor::full({3}, 2.0);
  st.ema["w"] = Tensor::full({3}, 2.0);

  // Equal weights are a fixed point.
  ema_update(st, 0.9999);
  for (double v : st.ema["w"].data) CHECK(v == 2.0);

  // One step from equal init matches the definition.
  st.weights["w"].fill(3.0);
  ema_update(st, 0.9999);
  for (double v : st.ema["w"].data)
    CHECK(v == doctest::Approx(0.9999 * 2.0 + 0.0001 * 3.0).epsilon(1e-15));

  // Decay 0 copies the weights.
  ema_update(st, 0.0);
  for (double v : st.ema["w"].data) CHECK(v == 3.0);

  // Three-step scalar sequence against a hand computation.
  ModelState s2;
  s2.weights["w"] = Tensor::full({1}, 0.0);
  s2.ema["w"] = Tensor::full({1}, 0.0);
  double w_vals[3] = {1.0, 2.0, -1.0};
  double expected = 0.0;
  for (double wv : w_vals) {
    s2.weights["w"][0] = wv;
    ema_update(s2, 0.9);
    expected = 0.9 * expected + 0.1 * wv;
  }
  CHECK(s2.ema["w"][0] == doctest::Approx(expected).epsilon(1e-15));

  CHECK_THROWS_AS(ema_update(st, 1.0), std::invalid_argument);
}

TEST_CASE("diffusion: kaiming init statistics") {
  Tensor w = kaiming_init({100000, 8}, 77);  // fan_in 8
  double mean = 0.0;
  for (double v : w.data) mean += v;
  mean /= static_cast<double>(w.numel());
  double var = 0.0;
  for (double v : w.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.numel());
  double expected = 2.0 / 8.0;
  CHECK(std::abs(var - expected) < 0.03 * expected);
  // Mean of n samples has stddev sqrt(var/n); allow 3 sigma.
  CHECK(std::abs(mean) < 3.0 * std::sqrt(expected / static_cast<double>(w.numel())));

  Tensor again = kaiming_init({100000, 8}, 77);
  CHECK(again.data == w.data);

  Tensor conv = kaiming_init({4, 3, 3, 3}, 5);  // fan_in 27
  CHECK(conv.numel() == 108);
}

#include <doctest.h>

#include <cmath>

#include "psr/senet.hpp"

using namespace psr;

namespace {

SENetConfig micro_config() {
  SENetConfig cfg;
  cfg.base_channels = 4;
  cfg.num_residual_blocks = 2;
  cfg.batch_size = 4;
  cfg.epochs = 13;  // 16 samples / batch 4 -> 4 steps per epoch
  return cfg;
}

ImageTensor random_rgb(Rng& rng, int64_t h, int64_t w) {
  ImageTensor img(h, w, 3, ValueRange::Unit);
  for (double& v : img.data.data) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("senet: forward shape contract and determinism") {
  SENetConfig cfg = micro_config();
  ModelState st = senet_init(cfg, 101);
  Rng rng(102);
  ImageTensor img = random_rgb(rng, 64, 64);
  ImageTensor a = senet_forward(st, cfg, img);
  CHECK(a.height() == 64);
  CHECK(a.width() == 64);
  CHECK(a.channels() == 1);
  ImageTensor b = senet_forward(st, cfg, img);
  CHECK(a.data.data == b.data.data);
}

TEST_CASE("senet: output stays in range and finite over random inputs") {
  SENetConfig cfg = micro_config();
  Rng rng(103);
  for (int seed = 0; seed < 20; ++seed) {
    ModelState st = senet_init(cfg, static_cast<uint64_t>(seed));
    ImageTensor img = random_rgb(rng, 16, 16);
    ImageTensor out = senet_forward(st, cfg, img);
    for (double v : out.data.data) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("senet: indivisible dimensions raise") {
  SENetConfig cfg = micro_config();
  ModelState st = senet_init(cfg, 104);
  ImageTensor img(30, 30, 3, ValueRange::Unit);
  CHECK_THROWS_AS(senet_forward(st, cfg, img), std::invalid_argument);
}

TEST_CASE("senet: discriminator shape, determinism and finiteness") {
  ModelState d = discriminator_init(4, 105);
  Rng rng(106);
  ImageTensor s(64, 64, 1, ValueRange::Unit);
  for (double& v : s.data.data) v = rng.uniform();
  Tensor logits = discriminator_forward(d, 4, s);
  CHECK(logits.shape == std::vector<int64_t>{8, 8});
  Tensor again = discriminator_forward(d, 4, s);
  CHECK(logits.data == again.data);
  for (int seed = 0; seed < 20; ++seed) {
    ImageTensor r(16, 16, 1, ValueRange::Unit);
    for (double& v : r.data.data) v = rng.uniform();
    Tensor lg = discriminator_forward(d, 4, r);
    CHECK(lg.shape == std::vector<int64_t>{2, 2});
    for (double v : lg.data) CHECK(std::isfinite(v));
  }
}

TEST_CASE("senet: perceptual distance identity, symmetry and monotonicity") {
  Rng rng(107);
  ImageTensor a = random_rgb(rng, 16, 16);
  CHECK(perceptual_distance(a, a) == 0.0);

  ImageTensor b = random_rgb(rng, 16, 16);
  CHECK(perceptual_distance(a, b) == perceptual_distance(b, a));
  CHECK(perceptual_distance(a, b) > 0.0);

  for (int seed = 0; seed < 10; ++seed) {
    Rng r2(1000 + static_cast<uint64_t>(seed));
    ImageTensor base = random_rgb(r2, 16, 16);
    ImageTensor noise = random_rgb(r2, 16, 16);
    double prev = 0.0;
    for (int k = 1; k <= 9; ++k) {
      double t = 0.1 * k;
      ImageTensor blend = base;
      for (int64_t i = 0; i < blend.data.numel(); ++i)
        blend.data[i] = (1.0 - t) * base.data[i] + t * noise.data[i];
      double d = perceptual_distance(base, blend);
      CAPTURE(seed);
      CAPTURE(k);
      CHECK(d > prev);
      prev = d;
    }
  }
}

TEST_CASE("senet: loss identities") {
  Rng rng(108);
  ImageTensor target(16, 16, 1, ValueRange::Unit);
  for (double& v : target.data.data) v = rng.uniform();

  Tensor ones_logits = Tensor::full({2, 2}, 1.0);
  SENetLosses zero = senet_losses(target, target, ones_logits);
  CHECK(zero.rec == 0.0);
  CHECK(zero.perceptual == 0.0);
  CHECK(zero.gan == 0.0);
  CHECK(zero.total == 0.0);

  ImageTensor shifted = target;
  for (double& v : shifted.data.data) v += 0.1;
  SENetLosses l = senet_losses(shifted, target, ones_logits);
  CHECK(l.rec == doctest::Approx(0.1).epsilon(1e-12));

  // Total recombines from the parts with the pinned weights.
  Tensor logits({2, 2});
  logits.data = {0.3, -0.2, 0.9, 1.4};
  SENetLosses f = senet_losses(shifted, target, logits);
  double gan = 0.0;
  for (double v : logits.data) gan += (v - 1.0) * (v - 1.0);
  gan /= 4.0;
  CHECK(f.gan == doctest::Approx(gan).epsilon(1e-12));
  CHECK(f.total == doctest::Approx(f.rec + 0.5 * f.perceptual + 0.25 * f.gan).epsilon(1e-12));
}

TEST_CASE("senet: short training run reduces the total loss") {
  auto dataset = build_senet_dataset(16, 2024);
  SENetConfig cfg = micro_config();
  SENetTrainResult res = train_senet(dataset, cfg, 7);
  REQUIRE(res.total_loss_history.size() >= 50);
  CHECK(res.total_loss_history[49] < res.total_loss_history[0]);
  CHECK(res.state.step >= 50);
}

TEST_CASE("senet: training is deterministic for a fixed seed") {
  auto dataset = build_senet_dataset(8, 11);
  SENetConfig cfg = micro_config();
  cfg.epochs = 2;
  SENetTrainResult a = train_senet(dataset, cfg, 5);
  SENetTrainResult b = train_senet(dataset, cfg, 5);
  for (const auto& [name, w] : a.state.weights) {
    CHECK(b.state.weights.at(name).data == w.data);
    CHECK(b.state.ema.at(name).data == a.state.ema.at(name).data);
  }
  CHECK_THROWS_AS(train_senet({}, cfg, 5), std::invalid_argument);
}

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "psr/image.hpp"
#include "psr/png_io.hpp"
#include "psr/rng.hpp"

using namespace psr;

namespace {

ImageTensor const_image(int64_t h, int64_t w, int64_t c, double v,
                        ValueRange r = ValueRange::Unit) {
  ImageTensor img(h, w, c, r);
  img.data.fill(v);
  return img;
}

ImageTensor random_image(Rng& rng, int64_t h, int64_t w, int64_t c) {
  ImageTensor img(h, w, c, ValueRange::Unit);
  for (double& v : img.data.data) v = rng.uniform();
  return img;
}

ShadowMask random_mask(Rng& rng, int64_t h, int64_t w, double p = 0.5) {
  ShadowMask m(h, w);
  for (double& v : m.data.data) v = rng.uniform() < p ? 1.0 : 0.0;
  return m;
}

// Independent colorimetry route in long double for the LAB oracle.
void reference_lab(double r, double g, double b, long double out[3]) {
  auto lin = [](long double v) -> long double {
    return v <= 0.04045L ? v / 12.92L : std::pow((v + 0.055L) / 1.055L, 2.4L);
  };
  long double rl = lin(r), gl = lin(g), bl = lin(b);
  long double x = 0.4124564L * rl + 0.3575761L * gl + 0.1804375L * bl;
  long double y = 0.2126729L * rl + 0.7151522L * gl + 0.0721750L * bl;
  long double z = 0.0193339L * rl + 0.1191920L * gl + 0.9503041L * bl;
  x /= 0.95047L;
  z /= 1.08883L;
  auto f = [](long double t) -> long double {
    const long double d = 6.0L / 29.0L;
    return t > d * d * d ? std::pow(t, 1.0L / 3.0L) : t / (3.0L * d * d) + 4.0L / 29.0L;
  };
  long double fx = f(x), fy = f(y), fz = f(z);
  out[0] = 116.0L * fy - 16.0L;
  out[1] = 500.0L * (fx - fy);
  out[2] = 200.0L * (fy - fz);
}

}  // namespace

TEST_CASE("imaging: composite identity cases") {
  Rng rng(11);
  ImageTensor base = random_image(rng, 16, 16, 3);
  ImageTensor overlay = random_image(rng, 16, 16, 3);

  ShadowMask zeros(16, 16);
  ImageTensor out = composite(base, overlay, zeros);
  CHECK(out.data.data == base.data.data);

  ShadowMask ones(16, 16);
  ones.data.fill(1.0);
  out = composite(base, overlay, ones);
  CHECK(out.data.data == overlay.data.data);
}

TEST_CASE("imaging: composite left-half mask") {
  ImageTensor base = const_image(8, 8, 3, 0.2);
  ImageTensor overlay = const_image(8, 8, 3, 0.8);
  ShadowMask m(8, 8);
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 4; ++x) m.at(y, x) = 1.0;
  ImageTensor out = composite(base, overlay, m);
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x)
      for (int64_t c = 0; c < 3; ++c) CHECK(out.at(y, x, c) == (x < 4 ? 0.8 : 0.2));
}

TEST_CASE("imaging: composite shape mismatch raises") {
  ImageTensor a = const_image(8, 8, 3, 0.5);
  ImageTensor b = const_image(8, 10, 3, 0.5);
  ShadowMask m(8, 8);
  CHECK_THROWS_AS(composite(a, b, m), std::invalid_argument);
}

TEST_CASE("imaging: composite idempotence properties") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    ImageTensor a = random_image(rng, 12, 12, 3);
    ImageTensor b = random_image(rng, 12, 12, 3);
    ShadowMask m = random_mask(rng, 12, 12);
    CHECK(composite(a, a, m).data.data == a.data.data);
    ImageTensor once = composite(a, b, m);
    CHECK(composite(once, b, m).data.data == once.data.data);
  }
}

TEST_CASE("imaging: rgb_to_lab anchors") {
  ImageTensor white = const_image(8, 8, 3, 1.0);
  ImageTensor lab = rgb_to_lab(white);
  // The sRGB matrix rows do not sum to the white point exactly at double
  // precision; a few 1e-6 of slack absorbs that.
  CHECK(std::abs(lab.at(0, 0, 0) - 100.0) < 1e-4);
  CHECK(std::abs(lab.at(0, 0, 1)) < 0.5);
  CHECK(std::abs(lab.at(0, 0, 2)) < 0.5);

  ImageTensor black = const_image(8, 8, 3, 0.0);
  lab = rgb_to_lab(black);
  CHECK(lab.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lab.at(0, 0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lab.at(0, 0, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("imaging: rgb_to_lab matches the reference colorimetry route") {
  long double ref[3];
  reference_lab(0.5, 0.5, 0.5, ref);
  ImageTensor gray = const_image(8, 8, 3, 0.5);
  ImageTensor lab = rgb_to_lab(gray);
  CHECK(lab.at(3, 3, 0) == doctest::Approx(static_cast<double>(ref[0])).epsilon(1e-9));
  CHECK(lab.at(3, 3, 1) == doctest::Approx(static_cast<double>(ref[1])).epsilon(1e-9));
  CHECK(lab.at(3, 3, 2) == doctest::Approx(static_cast<double>(ref[2])).epsilon(1e-9));

  // A few random colors against the same independent route.
  Rng rng(13);
  ImageTensor img = random_image(rng, 8, 8, 3);
  lab = rgb_to_lab(img);
  for (int64_t y = 0; y < 8; y += 3)
    for (int64_t x = 0; x < 8; x += 3) {
      reference_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), ref);
      for (int c = 0; c < 3; ++c)
        CHECK(lab.at(y, x, c) == doctest::Approx(static_cast<double>(ref[c])).epsilon(1e-7));
    }
}

TEST_CASE("imaging: rgb_to_lab rejects single channel") {
  ImageTensor g = const_image(8, 8, 1, 0.5);
  CHECK_THROWS_AS(rgb_to_lab(g), std::invalid_argument);
}

TEST_CASE("imaging: lab determinism") {
  Rng rng(14);
  ImageTensor img = random_image(rng, 10, 10, 3);
  ImageTensor a = rgb_to_lab(img), b = rgb_to_lab(img);
  CHECK(a.data.data == b.data.data);
}

TEST_CASE("imaging: gradient of constant image is zero") {
  ImageTensor img = const_image(16, 16, 3, 0.37);
  ShadowMask full(16, 16);
  full.data.fill(1.0);
  GradientMap g = gradient_map(img, full);
  for (double v : g.data.data) CHECK(v == 0.0);
}

TEST_CASE("imaging: gradient of a ramp matches the hand-computed slope") {
  const double s = 0.01;
  ImageTensor img(16, 16, 1, ValueRange::Unit);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) img.at(y, x, 0) = s * static_cast<double>(x);
  ShadowMask full(16, 16);
  full.data.fill(1.0);
  GradientMap g = gradient_map(img, full);
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 1; x < 15; ++x)
      CHECK(g.data.at(y, x) == doctest::Approx(s).epsilon(1e-12));
  // Replicate-padded borders see half the slope.
  CHECK(g.data.at(8, 0) == doctest::Approx(s / 2).epsilon(1e-12));
}

TEST_CASE("imaging: gradient with empty mask is identically zero") {
  Rng rng(15);
  ImageTensor img = random_image(rng, 16, 16, 3);
  ShadowMask empty(16, 16);
  GradientMap g = gradient_map(img, empty);
  for (double v : g.data.data) CHECK(v == 0.0);
}

TEST_CASE("imaging: gradient map is homogeneous of degree 1") {
  Rng rng(16);
  ImageTensor img = random_image(rng, 12, 12, 3);
  ShadowMask m = random_mask(rng, 12, 12);
  const double k = 0.35;
  ImageTensor scaled = img;
  for (double& v : scaled.data.data) v *= k;
  GradientMap g1 = gradient_map(img, m);
  GradientMap g2 = gradient_map(scaled, m);
  for (int64_t i = 0; i < g1.data.numel(); ++i)
    CHECK(g2.data[i] == doctest::Approx(k * g1.data[i]).epsilon(1e-6));
}

TEST_CASE("imaging: dilate radius 0 is the identity") {
  Rng rng(17);
  ShadowMask m = random_mask(rng, 16, 16, 0.2);
  CHECK(dilate(m, 0).data.data == m.data.data);
}

TEST_CASE("imaging: dilate single pixel by radius 1 gives the 5-pixel plus") {
  ShadowMask m(9, 9);
  m.at(4, 4) = 1.0;
  ShadowMask d = dilate(m, 1);
  int64_t count = d.count();
  CHECK(count == 5);
  CHECK(d.at(4, 4) == 1.0);
  CHECK(d.at(3, 4) == 1.0);
  CHECK(d.at(5, 4) == 1.0);
  CHECK(d.at(4, 3) == 1.0);
  CHECK(d.at(4, 5) == 1.0);
}

TEST_CASE("imaging: dilate equals brute-force disc membership") {
  Rng rng(18);
  for (int radius = 1; radius <= 3; ++radius) {
    ShadowMask m = random_mask(rng, 14, 14, 0.1);
    ShadowMask got = dilate(m, radius);
    for (int64_t y = 0; y < 14; ++y)
      for (int64_t x = 0; x < 14; ++x) {
        bool hit = false;
        for (int64_t yy = 0; yy < 14 && !hit; ++yy)
          for (int64_t xx = 0; xx < 14 && !hit; ++xx)
            if (m.at(yy, xx) != 0.0 &&
                (y - yy) * (y - yy) + (x - xx) * (x - xx) <= radius * radius)
              hit = true;
        CHECK(got.at(y, x) == (hit ? 1.0 : 0.0));
      }
  }
}

TEST_CASE("imaging: dilate full mask is a fixed point") {
  ShadowMask m(12, 12);
  m.data.fill(1.0);
  CHECK(dilate(m, 3).data.data == m.data.data);
}

TEST_CASE("imaging: dilate is monotone over nested masks") {
  Rng rng(19);
  ShadowMask a = random_mask(rng, 12, 12, 0.1);
  ShadowMask b = a;
  // b strictly contains a.
  for (int64_t i = 0; i < b.data.numel(); ++i)
    if (rng.uniform() < 0.1) b.data[i] = 1.0;
  ShadowMask da = dilate(a, 2), db = dilate(b, 2);
  for (int64_t i = 0; i < da.data.numel(); ++i)
    if (da.data[i] == 1.0) CHECK(db.data[i] == 1.0);
}

TEST_CASE("imaging: dilate rejects negative radius") {
  ShadowMask m(8, 8);
  CHECK_THROWS_AS(dilate(m, -1), std::invalid_argument);
}

TEST_CASE("imaging: png round trips") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "psr_png_test";
  fs::create_directories(dir);

  // All-zero image round trips exactly.
  ImageTensor zero = const_image(8, 8, 3, 0.0);
  save_image(zero, (dir / "zero.png").string());
  ImageTensor back = load_image((dir / "zero.png").string());
  CHECK(back.data.data == zero.data.data);

  // Random images stay within the 8-bit quantization bound.
  Rng rng(20);
  double worst = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    ImageTensor img = random_image(rng, 16, 16, 3);
    std::string path = (dir / "rt.png").string();
    save_image(img, path);
    ImageTensor rt = load_image(path);
    for (int64_t i = 0; i < img.data.numel(); ++i)
      worst = std::max(worst, std::abs(rt.data[i] - img.data[i]));
  }
  CHECK(worst <= 1.0 / 510.0 + 1e-12);

  // Masks threshold at 128.
  ShadowMask m(8, 8);
  m.at(2, 2) = 1.0;
  save_mask(m, (dir / "mask.png").string());
  ShadowMask rt = load_mask((dir / "mask.png").string());
  CHECK(rt.data.data == m.data.data);

  CHECK_THROWS(load_image((dir / "missing.png").string()));
  fs::remove_all(dir);
}

TEST_CASE("imaging: range conversions and validation") {
  Rng rng(21);
  ImageTensor img = random_image(rng, 8, 8, 3);
  ImageTensor s = to_signed(img);
  CHECK(s.range == ValueRange::Signed);
  ImageTensor u = to_unit(s);
  for (int64_t i = 0; i < img.data.numel(); ++i)
    CHECK(u.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));

  ImageTensor bad = const_image(8, 8, 3, 1.5);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ImageTensor tiny(4, 4, 3);
  CHECK_THROWS_AS(tiny.validate(), std::invalid_argument);

  ShadowMask m(8, 8);
  m.at(0, 0) = 0.5;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

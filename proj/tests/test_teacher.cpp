#include <doctest.h>

#include <cmath>

#include "psr/rng.hpp"
#include "psr/structure_teacher.hpp"

using namespace psr;

namespace {

ImageTensor const_rgb(int64_t h, int64_t w, double v) {
  ImageTensor img(h, w, 3, ValueRange::Unit);
  img.data.fill(v);
  return img;
}

}  // namespace

TEST_CASE("teacher: constant image maps to all ones") {
  ImageTensor out = extract_structure_teacher(const_rgb(24, 24, 0.6));
  for (double v : out.data.data) CHECK(v == 1.0);
}

TEST_CASE("teacher: single-pixel black line responds dark, far field stays light") {
  ImageTensor img = const_rgb(32, 32, 1.0);
  for (int64_t y = 0; y < 32; ++y)
    for (int c = 0; c < 3; ++c) img.at(y, 16, c) = 0.0;
  ImageTensor out = extract_structure_teacher(img);
  for (int64_t y = 8; y < 24; ++y) {
    CHECK(out.at(y, 16, 0) < 0.5);
    CHECK(out.at(y, 12, 0) > 0.9);  // distance 4
    CHECK(out.at(y, 21, 0) > 0.9);  // distance 5
  }
}

TEST_CASE("teacher: output range and determinism") {
  Rng rng(31);
  ImageTensor img(24, 24, 3, ValueRange::Unit);
  for (double& v : img.data.data) v = rng.uniform();
  ImageTensor a = extract_structure_teacher(img);
  ImageTensor b = extract_structure_teacher(img);
  CHECK(a.data.data == b.data.data);
  for (double v : a.data.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("teacher: invariant to a global additive luminance shift") {
  Rng rng(32);
  ImageTensor img(24, 24, 3, ValueRange::Unit);
  for (double& v : img.data.data) v = rng.uniform(0.2, 0.7);
  ImageTensor shifted = img;
  for (double& v : shifted.data.data) v += 0.1;
  ImageTensor a = extract_structure_teacher(img);
  ImageTensor b = extract_structure_teacher(shifted);
  double mad = 0.0;
  for (int64_t i = 0; i < a.data.numel(); ++i) mad += std::abs(a.data[i] - b.data[i]);
  mad /= static_cast<double>(a.data.numel());
  CHECK(mad < 0.05);
}

TEST_CASE("teacher: illumination step edge produces a line response") {
  // This sensitivity is the failure mode the trained extractor must fix.
  ImageTensor img = const_rgb(32, 32, 0.8);
  for (int64_t y = 0; y < 32; ++y)
    for (int64_t x = 16; x < 32; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.4;
  ImageTensor out = extract_structure_teacher(img);
  double darkest = 1.0, far = 1.0;
  for (int64_t y = 4; y < 28; ++y)
    for (int64_t x = 13; x <= 19; ++x) darkest = std::min(darkest, out.at(y, x, 0));
  for (int64_t y = 4; y < 28; ++y) far = std::min(far, out.at(y, 4, 0));
  CHECK(darkest < 0.5);
  CHECK(far > 0.9);
}

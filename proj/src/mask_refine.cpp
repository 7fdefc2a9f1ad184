#include "psr/mask_refine.hpp"

#include <array>
#include <cmath>

namespace psr {

namespace {

std::array<int64_t, 256> histogram256(const ImageTensor& gray) {
  std::array<int64_t, 256> hist{};
  for (double v : gray.data.data) {
    int bin = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    hist[static_cast<size_t>(bin)]++;
  }
  return hist;
}

OtsuResult otsu_from_histogram(const std::array<int64_t, 256>& hist) {
  int64_t total = 0, total_moment = 0;
  int occupied = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[static_cast<size_t>(i)];
    total_moment += static_cast<int64_t>(i) * hist[static_cast<size_t>(i)];
    occupied += hist[static_cast<size_t>(i)] > 0;
  }
  if (occupied <= 1) return {0, true};

  // sigma_b^2(k) = (m0*W - M*w0)^2 / (W^2 * w0 * (W - w0)); the constant
  // W^2 is dropped. The numerator stays in exact integer arithmetic so the
  // smallest-k tie-break is reproducible.
  int best_k = 0;
  double best = -1.0;
  int64_t w0 = 0, m0 = 0;
  for (int k = 0; k < 256; ++k) {
    w0 += hist[static_cast<size_t>(k)];
    m0 += static_cast<int64_t>(k) * hist[static_cast<size_t>(k)];
    double score = 0.0;
    if (w0 > 0 && w0 < total) {
      int64_t num = m0 * total - total_moment * w0;
      score = static_cast<double>(num) * static_cast<double>(num) /
              (static_cast<double>(w0) * static_cast<double>(total - w0));
    }
    if (score > best) {
      best = score;
      best_k = k;
    }
  }
  return {best_k, false};
}

}  // namespace

OtsuResult otsu_threshold(const ImageTensor& gray) {
  if (gray.channels() != 1) throw std::invalid_argument("otsu: requires single channel");
  return otsu_from_histogram(histogram256(gray));
}

ShadowMask refine_mask(const ImageTensor& input, const ImageTensor& removed) {
  check_same_shape(input.data, removed.data, "refine_mask");
  int64_t h = input.height(), w = input.width(), c = input.channels();
  ImageTensor diff(h, w, 1, ValueRange::Unit);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t k = 0; k < c; ++k) acc += std::abs(input.at(y, x, k) - removed.at(y, x, k));
      diff.at(y, x, 0) = acc / static_cast<double>(c);
    }

  OtsuResult otsu = otsu_threshold(diff);
  ShadowMask refined(h, w);
  if (otsu.degenerate) return refined;  // no separable change: keep the input everywhere
  double thr = static_cast<double>(otsu.threshold) / 255.0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) refined.at(y, x) = diff.at(y, x, 0) > thr ? 1.0 : 0.0;
  return refined;
}

ImageTensor composite_update(const ImageTensor& input, const ImageTensor& removed,
                             const ShadowMask& refined) {
  return composite(input, removed, refined);
}

}  // namespace psr

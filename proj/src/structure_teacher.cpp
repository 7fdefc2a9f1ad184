#include "psr/structure_teacher.hpp"

#include <cmath>

namespace psr {

namespace {
constexpr double kSigma = 1.0;
constexpr double kSigmaRatio = 1.6;
constexpr double kSoftThreshold = 0.02;
constexpr double kLogisticSharpness = 40.0;

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

ImageTensor extract_structure_teacher(const ImageTensor& img) {
  if (img.range != ValueRange::Unit)
    throw std::invalid_argument("structure teacher: requires unit-range input");
  ImageTensor lum = luminance(img);
  int64_t h = lum.height(), w = lum.width();

  Tensor plane({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) plane.at(y, x) = lum.at(y, x, 0);

  Tensor fine = gaussian_blur(plane, kSigma);
  Tensor coarse = gaussian_blur(plane, kSigma * kSigmaRatio);

  // Dark-centered response: DoG < 0 where the center is darker than its
  // surround (lines, moles, the dark side of a shadow edge). The logistic
  // gate is renormalized so a zero response maps to exactly 0.
  const double gate0 = logistic(-kLogisticSharpness * kSoftThreshold);
  ImageTensor out(h, w, 1, ValueRange::Unit);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double dog = fine.at(y, x) - coarse.at(y, x);
      double response = std::max(0.0, -dog);
      double gate = logistic(kLogisticSharpness * (response - kSoftThreshold));
      double strength = (gate - gate0) / (1.0 - gate0);
      out.at(y, x, 0) = 1.0 - strength;
    }
  return out;
}

}  // namespace psr

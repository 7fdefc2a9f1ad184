#pragma once

#include <optional>

#include "psr/tensor.hpp"

namespace psr {

enum class ValueRange { Unit, Signed };  // [0,1] or [-1,1]

// H x W x C raster. Carrier for portraits, condition maps and results.
struct ImageTensor {
  Tensor data;  // [H, W, C]
  ValueRange range = ValueRange::Unit;

  ImageTensor() = default;
  ImageTensor(int64_t h, int64_t w, int64_t c, ValueRange r = ValueRange::Unit)
      : data(Tensor({h, w, c})), range(r) {}

  int64_t height() const { return data.dim(0); }
  int64_t width() const { return data.dim(1); }
  int64_t channels() const { return data.dim(2); }

  double& at(int64_t y, int64_t x, int64_t c) { return data.at(y, x, c); }
  double at(int64_t y, int64_t x, int64_t c) const { return data.at(y, x, c); }

  // Enforces the declared invariants (range within tolerance, supported dims).
  void validate(double tol = 1e-6) const;
};

// H x W binary raster, values exactly 0 or 1.
struct ShadowMask {
  Tensor data;  // [H, W]

  ShadowMask() = default;
  ShadowMask(int64_t h, int64_t w) : data(Tensor({h, w})) {}

  int64_t height() const { return data.dim(0); }
  int64_t width() const { return data.dim(1); }

  double& at(int64_t y, int64_t x) { return data.at(y, x); }
  double at(int64_t y, int64_t x) const { return data.at(y, x); }

  bool empty() const;         // no pixel set
  int64_t count() const;      // number of set pixels
  void validate() const;      // values in {0,1} exactly
};

// Non-negative magnitude field, zero outside the generating mask.
struct GradientMap {
  Tensor data;  // [H, W]

  GradientMap() = default;
  GradientMap(int64_t h, int64_t w) : data(Tensor({h, w})) {}

  int64_t height() const { return data.dim(0); }
  int64_t width() const { return data.dim(1); }
};

// out = mask*overlay + (1-mask)*base, per pixel and channel.
ImageTensor composite(const ImageTensor& base, const ImageTensor& overlay, const ShadowMask& mask);

// sRGB (D65) unit-range image -> CIELAB. L in [0,100].
ImageTensor rgb_to_lab(const ImageTensor& img);

// ITU-R BT.601 luminance; single-channel input passes through.
ImageTensor luminance(const ImageTensor& img);

// Central-difference gradient magnitude of the luminance, replicate-padded
// at the borders, multiplied by the mask.
GradientMap gradient_map(const ImageTensor& img, const ShadowMask& mask);

// Morphological dilation with a disc structuring element.
ShadowMask dilate(const ShadowMask& mask, int radius);

// Range conversions between unit [0,1] and signed [-1,1] images.
ImageTensor to_signed(const ImageTensor& img);
ImageTensor to_unit(const ImageTensor& img);
ImageTensor clip_to_range(const ImageTensor& img);

// Gaussian blur with replicate padding; sigma <= 0 returns the input.
Tensor gaussian_blur(const Tensor& plane, double sigma);
ImageTensor gaussian_blur(const ImageTensor& img, double sigma);

}  // namespace psr

#include "psr/image.hpp"

#include <algorithm>
#include <cmath>

namespace psr {

void ImageTensor::validate(double tol) const {
  if (data.ndim() != 3) throw std::invalid_argument("image: expected rank-3 data");
  int64_t h = height(), w = width(), c = channels();
  if (h < 8 || w < 8) throw std::invalid_argument("image: H, W must be >= 8");
  if (c != 1 && c != 3) throw std::invalid_argument("image: C must be 1 or 3");
  double lo = range == ValueRange::Unit ? 0.0 : -1.0;
  for (double v : data.data) {
    if (!(v >= lo - tol && v <= 1.0 + tol))
      throw std::invalid_argument("image: value outside declared range");
  }
}

bool ShadowMask::empty() const {
  for (double v : data.data)
    if (v != 0.0) return false;
  return true;
}

int64_t ShadowMask::count() const {
  int64_t n = 0;
  for (double v : data.data) n += (v != 0.0);
  return n;
}

void ShadowMask::validate() const {
  if (data.ndim() != 2) throw std::invalid_argument("mask: expected rank-2 data");
  for (double v : data.data)
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask: values must be exactly 0 or 1");
}

ImageTensor composite(const ImageTensor& base, const ImageTensor& overlay, const ShadowMask& mask) {
  check_same_shape(base.data, overlay.data, "composite");
  if (base.range != overlay.range)
    throw std::invalid_argument("composite: base/overlay range mismatch");
  if (mask.height() != base.height() || mask.width() != base.width())
    throw std::invalid_argument("composite: mask dimensions mismatch");
  ImageTensor out = base;
  int64_t h = base.height(), w = base.width(), c = base.channels();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double m = mask.at(y, x);
      for (int64_t k = 0; k < c; ++k)
        out.at(y, x, k) = m * overlay.at(y, x, k) + (1.0 - m) * base.at(y, x, k);
    }
  return out;
}

namespace {

inline double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

}  // namespace

ImageTensor rgb_to_lab(const ImageTensor& img) {
  if (img.channels() != 3) throw std::invalid_argument("rgb_to_lab: requires 3 channels");
  if (img.range != ValueRange::Unit) throw std::invalid_argument("rgb_to_lab: requires unit range");
  // D65 reference white.
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  ImageTensor out(img.height(), img.width(), 3, ValueRange::Unit);
  for (int64_t y = 0; y < img.height(); ++y)
    for (int64_t x = 0; x < img.width(); ++x) {
      double r = srgb_to_linear(img.at(y, x, 0));
      double g = srgb_to_linear(img.at(y, x, 1));
      double b = srgb_to_linear(img.at(y, x, 2));
      double xx = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
      double yy = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
      double zz = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
      double fx = lab_f(xx / xn), fy = lab_f(yy / yn), fz = lab_f(zz / zn);
      out.at(y, x, 0) = 116.0 * fy - 16.0;
      out.at(y, x, 1) = 500.0 * (fx - fy);
      out.at(y, x, 2) = 200.0 * (fy - fz);
    }
  return out;
}

ImageTensor luminance(const ImageTensor& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) throw std::invalid_argument("luminance: requires 1 or 3 channels");
  ImageTensor out(img.height(), img.width(), 1, img.range);
  for (int64_t y = 0; y < img.height(); ++y)
    for (int64_t x = 0; x < img.width(); ++x)
      out.at(y, x, 0) =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  return out;
}

GradientMap gradient_map(const ImageTensor& img, const ShadowMask& mask) {
  if (mask.height() != img.height() || mask.width() != img.width())
    throw std::invalid_argument("gradient_map: mask dimensions mismatch");
  ImageTensor lum = luminance(img);
  int64_t h = img.height(), w = img.width();
  GradientMap out(h, w);
  auto clampi = [](int64_t v, int64_t hi) { return std::max<int64_t>(0, std::min(v, hi)); };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0.0) continue;
      double gx = 0.5 * (lum.at(y, clampi(x + 1, w - 1), 0) - lum.at(y, clampi(x - 1, w - 1), 0));
      double gy = 0.5 * (lum.at(clampi(y + 1, h - 1), x, 0) - lum.at(clampi(y - 1, h - 1), x, 0));
      out.data.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

ShadowMask dilate(const ShadowMask& mask, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate: negative radius");
  if (radius == 0) return mask;
  int64_t h = mask.height(), w = mask.width();
  // Precompute the disc offsets once; dx^2+dy^2 <= r^2 membership.
  std::vector<std::pair<int, int>> disc;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) disc.emplace_back(dy, dx);
  ShadowMask out(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0.0) continue;
      for (auto [dy, dx] : disc) {
        int64_t yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) out.at(yy, xx) = 1.0;
      }
    }
  return out;
}

ImageTensor to_signed(const ImageTensor& img) {
  if (img.range == ValueRange::Signed) return img;
  ImageTensor out = img;
  out.range = ValueRange::Signed;
  for (double& v : out.data.data) v = 2.0 * v - 1.0;
  return out;
}

ImageTensor to_unit(const ImageTensor& img) {
  if (img.range == ValueRange::Unit) return img;
  ImageTensor out = img;
  out.range = ValueRange::Unit;
  for (double& v : out.data.data) v = (v + 1.0) * 0.5;
  return out;
}

ImageTensor clip_to_range(const ImageTensor& img) {
  ImageTensor out = img;
  double lo = img.range == ValueRange::Unit ? 0.0 : -1.0;
  for (double& v : out.data.data) v = std::clamp(v, lo, 1.0);
  return out;
}

Tensor gaussian_blur(const Tensor& plane, double sigma) {
  if (plane.ndim() != 2) throw std::invalid_argument("gaussian_blur: expected rank-2 plane");
  if (sigma <= 0.0) return plane;
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  int64_t h = plane.dim(0), w = plane.dim(1);
  auto clampi = [](int64_t v, int64_t hi) { return std::max<int64_t>(0, std::min(v, hi)); };
  Tensor tmp({h, w}), out({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * plane.at(y, clampi(x + i, w - 1));
      tmp.at(y, x) = acc;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(clampi(y + i, h - 1), x);
      out.at(y, x) = acc;
    }
  return out;
}

ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  if (sigma <= 0.0) return img;
  ImageTensor out = img;
  int64_t h = img.height(), w = img.width();
  for (int64_t c = 0; c < img.channels(); ++c) {
    Tensor plane({h, w});
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) plane.at(y, x) = img.at(y, x, c);
    Tensor blurred = gaussian_blur(plane, sigma);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at(y, x, c) = blurred.at(y, x);
  }
  return out;
}

}  // namespace psr

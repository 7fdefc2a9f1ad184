#include "psr/metrics.hpp"

#include <cmath>
#include <sstream>

#include "psr/senet.hpp"

namespace psr {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gauss_kernel_1d() {
  static const std::vector<double> kernel = [] {
    std::vector<double> k(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      double d = static_cast<double>(i - kHalf);
      k[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (kSigma * kSigma));
      sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  return kernel;
}

// Separable Gaussian filter, valid region only ([kHalf, H-kHalf)).
Tensor gauss_filter_valid(const Tensor& plane) {
  const auto& k = gauss_kernel_1d();
  int64_t h = plane.dim(0), w = plane.dim(1);
  Tensor tmp({h, w}), out({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = kHalf; x < w - kHalf; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[static_cast<size_t>(i)] * plane.at(y, x + i - kHalf);
      tmp.at(y, x) = acc;
    }
  for (int64_t y = kHalf; y < h - kHalf; ++y)
    for (int64_t x = kHalf; x < w - kHalf; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[static_cast<size_t>(i)] * tmp.at(y + i - kHalf, x);
      out.at(y, x) = acc;
    }
  return out;
}

Tensor lum_plane(const ImageTensor& img) {
  ImageTensor lum = luminance(img);
  Tensor p({img.height(), img.width()});
  for (int64_t i = 0; i < p.numel(); ++i) p[i] = lum.data[i];
  return p;
}

}  // namespace

std::optional<double> ssim(const ImageTensor& a, const ImageTensor& b, const ShadowMask* region) {
  check_same_shape(a.data, b.data, "ssim");
  int64_t h = a.height(), w = a.width();
  if (h < kWin || w < kWin) throw std::invalid_argument("ssim: image smaller than the window");

  Tensor pa = lum_plane(a), pb = lum_plane(b);
  Tensor paa({h, w}), pbb({h, w}), pab({h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    paa[i] = pa[i] * pa[i];
    pbb[i] = pb[i] * pb[i];
    pab[i] = pa[i] * pb[i];
  }
  Tensor mu_a = gauss_filter_valid(pa), mu_b = gauss_filter_valid(pb);
  Tensor m_aa = gauss_filter_valid(paa), m_bb = gauss_filter_valid(pbb);
  Tensor m_ab = gauss_filter_valid(pab);

  double acc = 0.0;
  int64_t count = 0;
  for (int64_t y = kHalf; y < h - kHalf; ++y)
    for (int64_t x = kHalf; x < w - kHalf; ++x) {
      if (region && region->at(y, x) == 0.0) continue;
      double ma = mu_a.at(y, x), mb = mu_b.at(y, x);
      double va = m_aa.at(y, x) - ma * ma;
      double vb = m_bb.at(y, x) - mb * mb;
      double cov = m_ab.at(y, x) - ma * mb;
      double s = ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      acc += s;
      count++;
    }
  if (count == 0) return std::nullopt;
  return acc / static_cast<double>(count);
}

std::optional<double> rmse_lab(const ImageTensor& a, const ImageTensor& b,
                               const ShadowMask* region) {
  check_same_shape(a.data, b.data, "rmse_lab");
  ImageTensor la = rgb_to_lab(a), lb = rgb_to_lab(b);
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t y = 0; y < a.height(); ++y)
    for (int64_t x = 0; x < a.width(); ++x) {
      if (region && region->at(y, x) == 0.0) continue;
      for (int64_t c = 0; c < 3; ++c) {
        double d = la.at(y, x, c) - lb.at(y, x, c);
        acc += d * d;
      }
      count++;
    }
  if (count == 0) return std::nullopt;
  return std::sqrt(acc / static_cast<double>(3 * count));
}

namespace {

// Perceptual distance restricted to a region: both images are zeroed
// outside the region so only region content contributes features.
double region_perceptual(const ImageTensor& a, const ImageTensor& b, const ShadowMask* region) {
  if (!region) return perceptual_distance(a, b);
  ImageTensor ma = a, mb = b;
  for (int64_t y = 0; y < a.height(); ++y)
    for (int64_t x = 0; x < a.width(); ++x)
      if (region->at(y, x) == 0.0)
        for (int64_t c = 0; c < a.channels(); ++c) {
          ma.at(y, x, c) = 0.0;
          mb.at(y, x, c) = 0.0;
        }
  return perceptual_distance(ma, mb);
}

ShadowMask invert(const ShadowMask& m) {
  ShadowMask out(m.height(), m.width());
  for (int64_t i = 0; i < m.data.numel(); ++i) out.data[i] = m.data[i] == 0.0 ? 1.0 : 0.0;
  return out;
}

}  // namespace

EvalReport evaluate_pair(const ImageTensor& result, const ImageTensor& gt,
                         const ShadowMask& shadow_mask) {
  check_same_shape(result.data, gt.data, "evaluate_pair");
  if (shadow_mask.height() != result.height() || shadow_mask.width() != result.width())
    throw std::invalid_argument("evaluate_pair: mask dimensions mismatch");
  ShadowMask non_shadow = invert(shadow_mask);

  EvalReport r;
  r.all.ssim = ssim(result, gt);
  r.all.rmse_lab = rmse_lab(result, gt);
  r.all.perceptual = perceptual_distance(result, gt);
  r.all.pixel_count = result.height() * result.width();

  r.shadow.pixel_count = shadow_mask.count();
  if (r.shadow.pixel_count > 0) {
    r.shadow.ssim = ssim(result, gt, &shadow_mask);
    r.shadow.rmse_lab = rmse_lab(result, gt, &shadow_mask);
    r.shadow.perceptual = region_perceptual(result, gt, &shadow_mask);
  }

  r.non_shadow.pixel_count = non_shadow.count();
  if (r.non_shadow.pixel_count > 0) {
    r.non_shadow.ssim = ssim(result, gt, &non_shadow);
    r.non_shadow.rmse_lab = rmse_lab(result, gt, &non_shadow);
    r.non_shadow.perceptual = region_perceptual(result, gt, &non_shadow);
  }
  return r;
}

namespace {

void accumulate(std::optional<double>& mean, int64_t& n, const std::optional<double>& v) {
  if (!v) return;
  if (!mean) {
    mean = 0.0;
    n = 0;
  }
  n++;
  *mean += (*v - *mean) / static_cast<double>(n);
}

}  // namespace

EvalReport aggregate_reports(const std::vector<EvalReport>& reports) {
  EvalReport agg;
  agg.sample_count = 0;
  int64_t ns[9] = {};
  for (const EvalReport& r : reports) {
    agg.sample_count += r.sample_count;
    accumulate(agg.all.ssim, ns[0], r.all.ssim);
    accumulate(agg.all.perceptual, ns[1], r.all.perceptual);
    accumulate(agg.all.rmse_lab, ns[2], r.all.rmse_lab);
    accumulate(agg.shadow.ssim, ns[3], r.shadow.ssim);
    accumulate(agg.shadow.perceptual, ns[4], r.shadow.perceptual);
    accumulate(agg.shadow.rmse_lab, ns[5], r.shadow.rmse_lab);
    accumulate(agg.non_shadow.ssim, ns[6], r.non_shadow.ssim);
    accumulate(agg.non_shadow.perceptual, ns[7], r.non_shadow.perceptual);
    accumulate(agg.non_shadow.rmse_lab, ns[8], r.non_shadow.rmse_lab);
    agg.all.pixel_count += r.all.pixel_count;
    agg.shadow.pixel_count += r.shadow.pixel_count;
    agg.non_shadow.pixel_count += r.non_shadow.pixel_count;
  }
  return agg;
}

namespace {

std::string cell(const std::optional<double>& v) {
  if (!v) return "      -";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%7.4f", *v);
  return buf;
}

std::string rmse_cell(const std::optional<double>& v) {
  if (!v) return "      -";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%7.3f", *v);
  return buf;
}

void format_row(std::ostringstream& os, const std::string& name, const EvalReport& r) {
  os << name;
  if (name.size() < 16) os << std::string(16 - name.size(), ' ');
  os << "  " << cell(r.all.ssim) << " " << cell(r.all.perceptual) << " "
     << rmse_cell(r.all.rmse_lab);
  os << "   " << cell(r.shadow.ssim) << " " << cell(r.shadow.perceptual) << " "
     << rmse_cell(r.shadow.rmse_lab);
  os << "   " << cell(r.non_shadow.ssim) << " " << cell(r.non_shadow.perceptual) << " "
     << rmse_cell(r.non_shadow.rmse_lab);
  os << "\n";
}

}  // namespace

std::string format_report_table(const std::vector<std::string>& names,
                                const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "sample            |          all              |        shadow             |      non-shadow\n";
  os << "                     ssim    perc    rmse        ssim    perc    rmse        ssim    perc    rmse\n";
  for (size_t i = 0; i < reports.size(); ++i)
    format_row(os, i < names.size() ? names[i] : std::to_string(i), reports[i]);
  format_row(os, "aggregate", aggregate_reports(reports));
  return os.str();
}

}  // namespace psr

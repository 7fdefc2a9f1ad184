#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psr/image.hpp"

namespace psr {

struct RegionMetrics {
  std::optional<double> ssim;
  std::optional<double> perceptual;
  std::optional<double> rmse_lab;
  int64_t pixel_count = 0;

  bool present() const { return ssim.has_value() || rmse_lab.has_value(); }
};

// Region-wise metric triples over all / shadow / non-shadow pixels.
struct EvalReport {
  RegionMetrics all;
  RegionMetrics shadow;
  RegionMetrics non_shadow;
  int64_t sample_count = 1;
};

// Mean local SSIM on luminance; 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, dynamic range 1. Only window centers with a fully
// interior window count; `region` restricts to centers inside the mask.
std::optional<double> ssim(const ImageTensor& a, const ImageTensor& b,
                           const ShadowMask* region = nullptr);

// RMSE over the three CIELAB channels jointly, restricted to region pixels.
std::optional<double> rmse_lab(const ImageTensor& a, const ImageTensor& b,
                               const ShadowMask* region = nullptr);

EvalReport evaluate_pair(const ImageTensor& result, const ImageTensor& gt,
                         const ShadowMask& shadow_mask);

// Aggregate by averaging present entries; sample_count accumulates.
EvalReport aggregate_reports(const std::vector<EvalReport>& reports);

// One row per sample plus an aggregate row, columns matching the
// all/shadow/non-shadow layout.
std::string format_report_table(const std::vector<std::string>& names,
                                const std::vector<EvalReport>& reports);

}  // namespace psr

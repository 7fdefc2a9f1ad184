#pragma once

#include <functional>
#include <vector>

#include "psr/autodiff.hpp"

namespace psr::testing {

// Central finite-difference gradient check. `build` must construct a fresh
// scalar loss graph from parameter tensors each time it is called.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

inline GradCheckResult gradcheck(
    const std::function<VarPtr(std::vector<VarPtr>&)>& build, std::vector<Tensor> init,
    double h = 1e-5, double rel_floor = 1e-4) {
  // Analytic gradients.
  std::vector<VarPtr> params;
  params.reserve(init.size());
  for (const Tensor& t : init) params.push_back(make_param(t));
  VarPtr loss = build(params);
  zero_grad(params);
  backward(loss);
  std::vector<Tensor> analytic;
  for (const VarPtr& p : params) analytic.push_back(p->grad);

  auto eval = [&](const std::vector<Tensor>& values) {
    std::vector<VarPtr> ps;
    ps.reserve(values.size());
    for (const Tensor& t : values) ps.push_back(make_param(t));
    return build(ps)->val[0];
  };

  GradCheckResult res;
  for (size_t k = 0; k < init.size(); ++k) {
    for (int64_t i = 0; i < init[k].numel(); ++i) {
      std::vector<Tensor> plus = init, minus = init;
      plus[k][i] += h;
      minus[k][i] -= h;
      double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      double an = analytic[k][i];
      double denom = std::max({std::abs(an), std::abs(fd), rel_floor});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(an - fd) / denom);
      res.checked++;
    }
  }
  return res;
}

}  // namespace psr::testing

#include "psr/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace psr {

void NoiseSchedule::validate() const {
  if (T < 2 || static_cast<int64_t>(beta.size()) != T ||
      static_cast<int64_t>(alpha.size()) != T || static_cast<int64_t>(alpha_bar.size()) != T)
    throw std::invalid_argument("schedule: inconsistent table sizes");
  for (int64_t t = 0; t < T; ++t) {
    if (!(beta[t] > 0.0 && beta[t] < 1.0))
      throw std::invalid_argument("schedule: beta out of (0,1)");
    if (t > 0 && beta[t] < beta[t - 1])
      throw std::invalid_argument("schedule: beta must be non-decreasing");
    if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < 1.0))
      throw std::invalid_argument("schedule: alpha_bar out of (0,1)");
    if (t > 0 && !(alpha_bar[t] < alpha_bar[t - 1]))
      throw std::invalid_argument("schedule: alpha_bar must be strictly decreasing");
  }
}

void TimestepPlan::validate(int64_t T) const {
  if (steps.empty()) throw std::invalid_argument("plan: empty");
  if (steps.front() != T - 1) throw std::invalid_argument("plan: must start at T-1");
  if (steps.back() != 0 && steps.size() > 1) throw std::invalid_argument("plan: must end at 0");
  for (size_t i = 1; i < steps.size(); ++i)
    if (!(steps[i] < steps[i - 1])) throw std::invalid_argument("plan: not strictly decreasing");
}

NoiseSchedule make_schedule(int64_t T, double beta_min, double beta_max) {
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw std::invalid_argument("make_schedule: invalid beta bounds");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double span = beta_max - beta_min;
  double prod = 1.0;
  for (int64_t t = 0; t < T; ++t) {
    double b = beta_min + static_cast<double>(t) * span / static_cast<double>(T - 1);
    // Pin the endpoints exactly; the interior stays on the same line.
    if (t == 0) b = beta_min;
    if (t == T - 1) b = beta_max;
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  return s;
}

Tensor forward_diffuse(const Tensor& x0, int64_t t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) throw std::out_of_range("forward_diffuse: t out of range");
  check_same_shape(x0, eps, "forward_diffuse");
  double abar = sched.alpha_bar[static_cast<size_t>(t)];
  double sa = std::sqrt(abar), sb = std::sqrt(1.0 - abar);
  Tensor out = x0;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = sa * x0[i] + sb * eps[i];
  return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& e_t, int64_t t, int64_t t_prev,
                 const NoiseSchedule& sched) {
  if (!(t > t_prev && t_prev >= 0)) throw std::invalid_argument("ddim_step: need t > t_prev >= 0");
  if (t >= sched.T) throw std::out_of_range("ddim_step: t out of range");
  check_same_shape(x_t, e_t, "ddim_step");
  double abar_t = sched.alpha_bar[static_cast<size_t>(t)];
  double abar_p = sched.alpha_bar[static_cast<size_t>(t_prev)];
  double sa_t = std::sqrt(abar_t), sb_t = std::sqrt(1.0 - abar_t);
  double sa_p = std::sqrt(abar_p), sb_p = std::sqrt(1.0 - abar_p);
  Tensor out = x_t;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double x0_hat = (x_t[i] - sb_t * e_t[i]) / sa_t;
    out[i] = sa_p * x0_hat + sb_p * e_t[i];
  }
  return out;
}

Tensor ddim_final(const Tensor& x_t, const Tensor& e_t, int64_t t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) throw std::out_of_range("ddim_final: t out of range");
  check_same_shape(x_t, e_t, "ddim_final");
  double abar_t = sched.alpha_bar[static_cast<size_t>(t)];
  double sa_t = std::sqrt(abar_t), sb_t = std::sqrt(1.0 - abar_t);
  Tensor out = x_t;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - sb_t * e_t[i]) / sa_t;
  return out;
}

double diffusion_loss(const Tensor& eps_true, const Tensor& eps_pred) {
  check_same_shape(eps_true, eps_pred, "diffusion_loss");
  double acc = 0.0;
  for (int64_t i = 0; i < eps_true.numel(); ++i) {
    double d = eps_true[i] - eps_pred[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps_true.numel());
}

TimestepPlan make_timestep_plan(int64_t T, int64_t n_steps) {
  if (n_steps < 1 || n_steps > T)
    throw std::invalid_argument("make_timestep_plan: n_steps out of range");
  int64_t stride = T / n_steps;
  TimestepPlan plan;
  plan.steps.reserve(static_cast<size_t>(n_steps));
  plan.steps.push_back(T - 1);
  for (int64_t i = 1; i < n_steps; ++i) plan.steps.push_back((n_steps - 1 - i) * stride);
  return plan;
}

}  // namespace psr

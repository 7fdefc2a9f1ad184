#pragma once

#include <cstdint>
#include <vector>

#include "psr/tensor.hpp"

namespace psr {

// Linear-beta noise schedule over T steps; all tables kept in 64-bit.
struct NoiseSchedule {
  int64_t T = 0;
  std::vector<double> beta;       // beta[t]
  std::vector<double> alpha;      // 1 - beta[t]
  std::vector<double> alpha_bar;  // prod_{i<=t} alpha[i]

  void validate() const;
};

// Strictly decreasing subsequence of [0, T-1]; first entry T-1, last 0.
struct TimestepPlan {
  std::vector<int64_t> steps;

  void validate(int64_t T) const;
};

NoiseSchedule make_schedule(int64_t T, double beta_min, double beta_max);

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, element-wise.
Tensor forward_diffuse(const Tensor& x0, int64_t t, const Tensor& eps, const NoiseSchedule& sched);

// Deterministic DDIM update from timestep t to t_prev given the predicted
// noise e_t: estimate x0, then re-noise at t_prev with the same e_t.
Tensor ddim_step(const Tensor& x_t, const Tensor& e_t, int64_t t, int64_t t_prev,
                 const NoiseSchedule& sched);

// Final denoising at timestep t: the x0 estimate itself.
Tensor ddim_final(const Tensor& x_t, const Tensor& e_t, int64_t t, const NoiseSchedule& sched);

// Mean squared error between true and predicted noise.
double diffusion_loss(const Tensor& eps_true, const Tensor& eps_pred);

// n_steps indices: T-1 followed by multiples of floor(T/n_steps) down to 0.
TimestepPlan make_timestep_plan(int64_t T, int64_t n_steps);

}  // namespace psr

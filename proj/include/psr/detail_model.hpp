#pragma once

#include <vector>

#include "psr/inpaint.hpp"
#include "psr/toyface.hpp"

namespace psr {

// Training-time stand-in for the inpainting stage's output: inside the
// mask each 4x4 block is replaced by the mean of its in-mask pixels.
// Linear, low-pass, and exactly idempotent for a fixed mask.
ImageTensor simulate_coarse(const ImageTensor& clean, const ShadowMask& mask);

// Detail restoration training on the paired synthetic dataset: target is
// the clean portrait, conditions are the simulated coarse version, the
// gradient map of the clean image inside the mask, and the mask itself.
DiffusionTrainResult train_detail(const std::vector<PairedSample>& dataset,
                                  const CondUNetConfig& cfg, const NoiseSchedule& sched,
                                  const DiffusionTrainOpts& opts, uint64_t seed);

Tensor eps_forward_detail(const ModelState& state, const CondUNetConfig& cfg,
                          const Tensor& x_t_chw, const ImageTensor& coarse,
                          const GradientMap& grad, const ShadowMask& mask, int64_t t, int64_t T,
                          WeightKind kind = WeightKind::Ema);

// Refine the coarse result under gradient guidance from the original
// (shadowed) input inside the mask; outside the mask the coarse result is
// kept bit-exact.
ImageTensor sample_detail(const ModelState& state, const CondUNetConfig& cfg,
                          const ImageTensor& coarse, const ImageTensor& original_input,
                          const ShadowMask& mask, const TimestepPlan& plan,
                          const NoiseSchedule& sched, uint64_t seed);

std::vector<ImageTensor> sample_detail_batch(const ModelState& state, const CondUNetConfig& cfg,
                                             const std::vector<ImageTensor>& coarse,
                                             const std::vector<ImageTensor>& original_inputs,
                                             const std::vector<ShadowMask>& masks,
                                             const TimestepPlan& plan, const NoiseSchedule& sched,
                                             const std::vector<uint64_t>& seeds);

}  // namespace psr

#pragma once

#include <vector>

#include "psr/diffusion.hpp"
#include "psr/senet.hpp"
#include "psr/unet.hpp"

namespace psr {

// Random reconstruction mask for inpainting training: union of 1-4
// rectangles/ellipses/brush strokes covering 10-50% of the pixels.
ShadowMask random_training_mask(int64_t seed, int64_t h, int64_t w);

struct DiffusionTrainOpts {
  int64_t steps = 1200;
  int64_t batch_size = 4;
  double learning_rate = 1e-4;
  double ema_limit = 0.9999;

  void validate() const;
};

struct DiffusionTrainResult {
  ModelState state;
  std::vector<double> loss_history;
};

// Masked-reconstruction training: per step draw a clean portrait x0 and a
// random mask M, condition on [x_t, masked input, structure map, M] and
// regress the injected noise. Structure maps come from the frozen
// extraction network; with use_structure=false that channel is zeroed
// (the unconditioned ablation).
DiffusionTrainResult train_inpaint(const std::vector<ImageTensor>& clean_portraits,
                                   const ModelState& senet_state, const SENetConfig& senet_cfg,
                                   const CondUNetConfig& cfg, const NoiseSchedule& sched,
                                   const DiffusionTrainOpts& opts, uint64_t seed,
                                   bool use_structure = true);

// Single noise prediction from raster-space conditions.
Tensor eps_forward(const ModelState& state, const CondUNetConfig& cfg, const Tensor& x_t_chw,
                   const ImageTensor& masked_input, const ImageTensor& structure,
                   const ShadowMask& mask, int64_t t, int64_t T,
                   WeightKind kind = WeightKind::Ema);

// DDIM sampling of the shadow-free content inside the mask, followed by a
// hard composite that keeps everything outside the mask bit-exact.
ImageTensor sample_inpaint(const ModelState& state, const CondUNetConfig& cfg,
                           const ImageTensor& input, const ShadowMask& mask,
                           const ImageTensor& structure, const TimestepPlan& plan,
                           const NoiseSchedule& sched, uint64_t seed);

// Batched variant; entry i uses seed seeds[i].
std::vector<ImageTensor> sample_inpaint_batch(const ModelState& state, const CondUNetConfig& cfg,
                                              const std::vector<ImageTensor>& inputs,
                                              const std::vector<ShadowMask>& masks,
                                              const std::vector<ImageTensor>& structures,
                                              const TimestepPlan& plan,
                                              const NoiseSchedule& sched,
                                              const std::vector<uint64_t>& seeds);

}  // namespace psr

#pragma once

#include <vector>

#include "psr/diffusion.hpp"
#include "psr/nn.hpp"

namespace psr {

// Conditional denoising U-Net. Conditions enter by channel concatenation
// at the input layer; the timestep enters through a sinusoidal embedding
// plus per-block channel modulation.
struct CondUNetConfig {
  int64_t base_channels = 32;
  std::vector<int64_t> channel_multipliers = {1, 2, 4};
  int64_t time_embed_dim = 128;
  bool attention_at_lowest = true;
  int64_t in_channels = 8;   // 3 (x_t) + 3 (masked/coarse image) + 1 (map) + 1 (mask)
  int64_t out_channels = 3;

  void validate() const;
};

// x [N,Cin,H,W] with per-sample integer timesteps; H, W divisible by
// 2^(levels-1).
VarPtr unet_graph(const CondUNetConfig& cfg, ParamBank& bank, const VarPtr& x_nchw,
                  const std::vector<int64_t>& timesteps);

ModelState unet_init(const CondUNetConfig& cfg, uint64_t seed);

// Batched noise prediction from condition planes already packed NCHW.
Tensor unet_predict(const ModelState& state, const CondUNetConfig& cfg, const Tensor& x_nchw,
                    const std::vector<int64_t>& timesteps, WeightKind kind);

}  // namespace psr

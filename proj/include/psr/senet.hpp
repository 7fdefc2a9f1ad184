#pragma once

#include <vector>

#include "psr/nn.hpp"
#include "psr/toyface.hpp"

namespace psr {

struct SENetConfig {
  int64_t base_channels = 16;
  int64_t num_residual_blocks = 9;
  double lambda_perceptual = 0.5;
  double lambda_gan = 0.25;
  double learning_rate = 1.5e-5;
  int64_t batch_size = 8;
  int64_t epochs = 3;
  double ema_limit = 0.9999;  // EMA decay approaches this as steps grow

  void validate() const;
};

struct SENetLosses {
  double rec = 0.0;
  double perceptual = 0.0;
  double gan = 0.0;
  double total = 0.0;
};

// Structure extraction graph: flat conv, two stride-2 down convolutions,
// num_residual_blocks residual blocks, two nearest-neighbor up blocks and
// a sigmoid head. H and W must be divisible by 4.
VarPtr senet_graph(const SENetConfig& cfg, ParamBank& bank, const VarPtr& x_nchw);

// Patch discriminator over single-channel structure maps: three stride-2
// convolutions plus two size-preserving head convolutions (70 px receptive
// field, H/8 x W/8 logits).
VarPtr discriminator_graph(int64_t base_channels, ParamBank& bank, const VarPtr& s_nchw);

ModelState senet_init(const SENetConfig& cfg, uint64_t seed);
ModelState discriminator_init(int64_t base_channels, uint64_t seed);

ImageTensor senet_forward(const ModelState& state, const SENetConfig& cfg,
                          const ImageTensor& img, WeightKind kind = WeightKind::Ema);
std::vector<ImageTensor> senet_forward_batch(const ModelState& state, const SENetConfig& cfg,
                                             const std::vector<ImageTensor>& imgs,
                                             WeightKind kind = WeightKind::Ema);

Tensor discriminator_forward(const ModelState& dstate, int64_t base_channels,
                             const ImageTensor& s_map, WeightKind kind = WeightKind::Raw);

// Frozen random-feature distance over two scales; zero iff the feature
// maps agree. Differentiable end of the perceptual training term.
VarPtr perceptual_distance_graph(const VarPtr& a_nchw, const VarPtr& b_nchw);
double perceptual_distance(const ImageTensor& a, const ImageTensor& b);

SENetLosses senet_losses(const ImageTensor& pred, const ImageTensor& target,
                         const Tensor& dlogits, double lambda_perceptual = 0.5,
                         double lambda_gan = 0.25);

struct SENetTrainResult {
  ModelState state;
  ModelState discriminator;
  std::vector<double> total_loss_history;  // generator total loss per step
};

SENetTrainResult train_senet(const std::vector<PairedSample>& dataset, const SENetConfig& cfg,
                             uint64_t seed);

}  // namespace psr

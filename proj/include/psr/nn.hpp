#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "psr/autodiff.hpp"
#include "psr/image.hpp"
#include "psr/rng.hpp"
#include "psr/tensor.hpp"

namespace psr {

// Weights plus their EMA shadow copy for any trainable component. The two
// maps always share the same name set and shapes.
struct ModelState {
  std::map<std::string, Tensor> weights;
  std::map<std::string, Tensor> ema;
  int64_t step = 0;
  uint64_t seed = 0;

  void validate() const;
};

enum class WeightKind { Raw, Ema };

// Samples ~ Normal(0, 2/fan_in). Conv shapes use Cin*kh*kw as fan-in,
// matrices their column count.
Tensor kaiming_init(const std::vector<int64_t>& shape, uint64_t seed);

// ema <- decay*ema + (1-decay)*weights, per array.
void ema_update(ModelState& state, double decay);

// EMA decay with warmup: min(limit, (1+step)/(10+step)), so the shadow
// weights track training early on and settle at the configured limit.
double ema_decay_at(int64_t step, double limit);

// Named parameter set used while building network graphs. In Init mode
// every request creates and registers a freshly initialized tensor; in
// Bind mode requests resolve against an existing map (trainable or
// constant). One builder function drives both paths, so architecture and
// checkpoint layout cannot drift apart.
class ParamBank {
 public:
  static ParamBank init_mode(uint64_t seed);
  static ParamBank bind_trainable(const std::map<std::string, Tensor>& weights);
  static ParamBank bind_const(const std::map<std::string, Tensor>& weights);

  VarPtr conv_weight(const std::string& name, int64_t co, int64_t ci, int64_t kh, int64_t kw);
  VarPtr matrix(const std::string& name, int64_t out, int64_t in);  // kaiming
  VarPtr zeros(const std::string& name, std::vector<int64_t> shape);
  VarPtr ones(const std::string& name, std::vector<int64_t> shape);

  // Creation-ordered parameter list (stable across runs).
  const std::vector<std::pair<std::string, VarPtr>>& entries() const { return entries_; }
  std::vector<VarPtr> vars() const;
  std::map<std::string, Tensor> to_map() const;
  void write_back(std::map<std::string, Tensor>& out) const;

 private:
  enum class Mode { Init, BindTrainable, BindConst };
  Mode mode_ = Mode::Init;
  uint64_t seed_ = 0;
  int64_t counter_ = 0;
  const std::map<std::string, Tensor>* source_ = nullptr;
  std::vector<std::pair<std::string, VarPtr>> entries_;
  std::unordered_map<std::string, size_t> index_;

  VarPtr create_or_bind(const std::string& name, std::vector<int64_t> shape, bool kaiming);
};

// Adam with bias correction; state is kept per parameter in list order.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<VarPtr>& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// ---- HWC <-> NCHW packing between raster types and network tensors ----
Tensor images_to_nchw(const std::vector<ImageTensor>& imgs);
Tensor image_to_nchw(const ImageTensor& img);
ImageTensor nchw_to_image(const Tensor& t, int64_t n, ValueRange range);
Tensor planes_to_nchw(const std::vector<Tensor>& planes);  // [H,W] each -> [N,1,H,W]

// Versioned checkpoint container shared by all trainable modules.
struct Checkpoint {
  std::string kind;         // "senet", "inpaint", "detail"
  std::string config_text;  // config echo in the config-file grammar
  ModelState state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace psr

#pragma once

#include <map>
#include <string>
#include <vector>

#include "psr/detail_model.hpp"
#include "psr/inpaint.hpp"
#include "psr/mask_refine.hpp"
#include "psr/senet.hpp"

namespace psr {

// Flat INI-style key/value text with [section] headers; '#' comments.
using ConfigMap = std::map<std::string, std::map<std::string, std::string>>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);
std::string serialize_config(const ConfigMap& kv);

struct StageConfig {
  CondUNetConfig unet;
  DiffusionTrainOpts train;
  int64_t sampler_steps = 40;
};

struct PipelineConfig {
  int64_t image_size = 64;
  int64_t schedule_T = 2000;
  double beta_min = 1e-6;
  double beta_max = 1e-2;
  int64_t mask_dilation = 4;
  uint64_t seed = 7;
  int64_t dataset_size = 2000;
  SENetConfig senet;
  StageConfig inpaint;
  StageConfig detail;
  std::string senet_checkpoint = "senet.ckpt";
  std::string inpaint_checkpoint = "inpaint.ckpt";
  std::string detail_checkpoint = "detail.ckpt";

  void validate() const;
};

PipelineConfig default_pipeline_config();
PipelineConfig pipeline_config_from_map(const ConfigMap& kv);
ConfigMap pipeline_config_to_map(const PipelineConfig& cfg);
std::string pipeline_config_text(const PipelineConfig& cfg);

struct PipelineModels {
  ModelState senet;
  ModelState inpaint;
  ModelState detail;
};

struct InferOutputs {
  ImageTensor result;
  ShadowMask refined_mask;
  ImageTensor structure;
  ImageTensor coarse;
  GradientMap gradient;
  bool empty_mask_warning = false;
};

// Full inference chain: structure extraction, mask dilation, diffusion
// inpainting, Otsu mask refinement, composite update, gradient-guided
// detail restoration. Pixels outside the refined mask equal the input
// bit-exact. An empty user mask short-circuits to the input with a
// warning flag.
InferOutputs infer(const PipelineModels& models, const PipelineConfig& cfg,
                   const ImageTensor& input, const ShadowMask& user_mask, uint64_t seed);

std::vector<InferOutputs> infer_batch(const PipelineModels& models, const PipelineConfig& cfg,
                                      const std::vector<ImageTensor>& inputs,
                                      const std::vector<ShadowMask>& user_masks, uint64_t seed);

}  // namespace psr

#include <doctest.h>

#include <cmath>

#include "psr/pipeline.hpp"
#include "psr/toyface.hpp"

using namespace psr;

namespace {

// Tiny untrained models: the pipeline contracts (compositing, masking,
// determinism) hold for any weights.
PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.schedule_T = 100;
  cfg.inpaint.unet.base_channels = 4;
  cfg.inpaint.unet.channel_multipliers = {1, 2};
  cfg.inpaint.unet.time_embed_dim = 8;
  cfg.inpaint.sampler_steps = 3;
  cfg.detail.unet = cfg.inpaint.unet;
  cfg.detail.sampler_steps = 3;
  cfg.senet.base_channels = 4;
  cfg.senet.num_residual_blocks = 1;
  return cfg;
}

PipelineModels tiny_models(const PipelineConfig& cfg) {
  PipelineModels m;
  m.senet = senet_init(cfg.senet, 1);
  m.inpaint = unet_init(cfg.inpaint.unet, 2);
  m.detail = unet_init(cfg.detail.unet, 3);
  return m;
}

}  // namespace

TEST_CASE("pipeline: config text round trip is stable") {
  PipelineConfig cfg = default_pipeline_config();
  std::string text = pipeline_config_text(cfg);
  PipelineConfig back = pipeline_config_from_map(parse_config_text(text));
  CHECK(pipeline_config_text(back) == text);
  CHECK(back.schedule_T == cfg.schedule_T);
  CHECK(back.beta_min == cfg.beta_min);
  CHECK(back.inpaint.unet.channel_multipliers == cfg.inpaint.unet.channel_multipliers);
  CHECK(back.senet.learning_rate == cfg.senet.learning_rate);
}

TEST_CASE("pipeline: config parser errors and comments") {
  CHECK_NOTHROW(parse_config_text("# comment only\n\n[pipeline]\nimage_size = 64\n"));
  CHECK_THROWS(parse_config_text("[broken\nkey = 1\n"));
  CHECK_THROWS(parse_config_text("keyvalue\n"));
  PipelineConfig cfg =
      pipeline_config_from_map(parse_config_text("[pipeline]\nimage_size = 128\n"));
  CHECK(cfg.image_size == 128);
  CHECK_THROWS(pipeline_config_from_map(parse_config_text("[pipeline]\nimage_size = 96\n")));
}

TEST_CASE("pipeline: empty user mask short-circuits with a warning") {
  PipelineConfig cfg = tiny_config();
  PipelineModels models = tiny_models(cfg);
  ToyPortrait p = generate_toy_portrait(8, 64);
  ShadowMask empty(64, 64);
  InferOutputs out = infer(models, cfg, p.image, empty, 5);
  CHECK(out.empty_mask_warning);
  CHECK(out.result.data.data == p.image.data.data);
  CHECK(out.refined_mask.empty());
}

TEST_CASE("pipeline: inference is deterministic and preserves non-shadow pixels") {
  PipelineConfig cfg = tiny_config();
  PipelineModels models = tiny_models(cfg);
  ToyPortrait p = generate_toy_portrait(9, 64);
  ShadowMask user = random_facial_mask(p, 4);

  InferOutputs a = infer(models, cfg, p.image, user, 5);
  InferOutputs b = infer(models, cfg, p.image, user, 5);
  CHECK(a.result.data.data == b.result.data.data);
  CHECK(a.refined_mask.data.data == b.refined_mask.data.data);

  // Outside the refined mask the pipeline output equals the input bit-exactly.
  for (int64_t y = 0; y < 64; ++y)
    for (int64_t x = 0; x < 64; ++x)
      if (a.refined_mask.at(y, x) == 0.0)
        for (int c = 0; c < 3; ++c) CHECK(a.result.at(y, x, c) == p.image.at(y, x, c));

  // The refined mask stays inside the dilated user mask: the inpainting
  // composite guarantees zero difference outside it.
  ShadowMask dilated = dilate(user, static_cast<int>(cfg.mask_dilation));
  for (int64_t y = 0; y < 64; ++y)
    for (int64_t x = 0; x < 64; ++x)
      if (a.refined_mask.at(y, x) != 0.0) CHECK(dilated.at(y, x) == 1.0);
}

TEST_CASE("pipeline: reparsed config reproduces identical outputs") {
  PipelineConfig cfg = tiny_config();
  PipelineModels models = tiny_models(cfg);
  ToyPortrait p = generate_toy_portrait(10, 64);
  ShadowMask user = random_facial_mask(p, 6);

  InferOutputs a = infer(models, cfg, p.image, user, 5);
  PipelineConfig round = pipeline_config_from_map(parse_config_text(pipeline_config_text(cfg)));
  InferOutputs b = infer(models, round, p.image, user, 5);
  CHECK(a.result.data.data == b.result.data.data);
}

TEST_CASE("pipeline: missing model weights raise") {
  PipelineConfig cfg = tiny_config();
  PipelineModels models;  // empty states
  ToyPortrait p = generate_toy_portrait(11, 64);
  ShadowMask user = random_facial_mask(p, 7);
  CHECK_THROWS_AS(infer(models, cfg, p.image, user, 5), std::invalid_argument);
}

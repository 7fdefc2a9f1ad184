#include "psr/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace psr {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap kv;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno++;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config: malformed section at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      kv[section];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    kv[section][key] = value;
  }
  return kv;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ConfigMap& kv) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, entries] : kv) {
    if (!first) os << "\n";
    first = false;
    os << "[" << section << "]\n";
    for (const auto& [key, value] : entries) os << key << " = " << value << "\n";
  }
  return os.str();
}

namespace {

const std::string* find(const ConfigMap& kv, const std::string& sec, const std::string& key) {
  auto s = kv.find(sec);
  if (s == kv.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  return &k->second;
}

void get(const ConfigMap& kv, const std::string& sec, const std::string& key, int64_t& out) {
  if (const std::string* v = find(kv, sec, key)) out = std::stoll(*v);
}
void get(const ConfigMap& kv, const std::string& sec, const std::string& key, uint64_t& out) {
  if (const std::string* v = find(kv, sec, key)) out = std::stoull(*v);
}
void get(const ConfigMap& kv, const std::string& sec, const std::string& key, double& out) {
  if (const std::string* v = find(kv, sec, key)) out = std::stod(*v);
}
void get(const ConfigMap& kv, const std::string& sec, const std::string& key, bool& out) {
  if (const std::string* v = find(kv, sec, key)) out = *v == "true" || *v == "1";
}
void get(const ConfigMap& kv, const std::string& sec, const std::string& key, std::string& out) {
  if (const std::string* v = find(kv, sec, key)) out = *v;
}
void get(const ConfigMap& kv, const std::string& sec, const std::string& key,
         std::vector<int64_t>& out) {
  if (const std::string* v = find(kv, sec, key)) {
    out.clear();
    std::istringstream is(*v);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(std::stoll(trim(item)));
  }
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string list(const std::vector<int64_t>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

void stage_from_map(const ConfigMap& kv, const std::string& sec, StageConfig& st) {
  get(kv, sec, "base_channels", st.unet.base_channels);
  get(kv, sec, "channel_multipliers", st.unet.channel_multipliers);
  get(kv, sec, "time_embed_dim", st.unet.time_embed_dim);
  get(kv, sec, "attention_at_lowest", st.unet.attention_at_lowest);
  get(kv, sec, "train_steps", st.train.steps);
  get(kv, sec, "batch_size", st.train.batch_size);
  get(kv, sec, "learning_rate", st.train.learning_rate);
  get(kv, sec, "ema_limit", st.train.ema_limit);
  get(kv, sec, "sampler_steps", st.sampler_steps);
}

void stage_to_map(ConfigMap& kv, const std::string& sec, const StageConfig& st) {
  auto& m = kv[sec];
  m["base_channels"] = std::to_string(st.unet.base_channels);
  m["channel_multipliers"] = list(st.unet.channel_multipliers);
  m["time_embed_dim"] = std::to_string(st.unet.time_embed_dim);
  m["attention_at_lowest"] = st.unet.attention_at_lowest ? "true" : "false";
  m["train_steps"] = std::to_string(st.train.steps);
  m["batch_size"] = std::to_string(st.train.batch_size);
  m["learning_rate"] = num(st.train.learning_rate);
  m["ema_limit"] = num(st.train.ema_limit);
  m["sampler_steps"] = std::to_string(st.sampler_steps);
}

}  // namespace

void PipelineConfig::validate() const {
  if (image_size != 64 && image_size != 128 && image_size != 256)
    throw std::invalid_argument("pipeline config: image_size must be 64, 128 or 256");
  if (inpaint.sampler_steps < 1 || detail.sampler_steps < 1)
    throw std::invalid_argument("pipeline config: sampler step counts must be >= 1");
  if (mask_dilation < 0) throw std::invalid_argument("pipeline config: negative mask dilation");
  senet.validate();
  inpaint.unet.validate();
  detail.unet.validate();
}

PipelineConfig default_pipeline_config() {
  PipelineConfig cfg;
  // Desk-scale training recipe: 64x64, 2000 samples, ~8k diffusion steps.
  cfg.inpaint.train.steps = 8000;
  cfg.inpaint.train.batch_size = 8;
  cfg.detail.train.steps = 8000;
  cfg.detail.train.batch_size = 8;
  return cfg;
}

PipelineConfig pipeline_config_from_map(const ConfigMap& kv) {
  PipelineConfig cfg = default_pipeline_config();
  get(kv, "pipeline", "image_size", cfg.image_size);
  get(kv, "pipeline", "mask_dilation", cfg.mask_dilation);
  get(kv, "pipeline", "seed", cfg.seed);
  get(kv, "pipeline", "dataset_size", cfg.dataset_size);
  get(kv, "schedule", "T", cfg.schedule_T);
  get(kv, "schedule", "beta_min", cfg.beta_min);
  get(kv, "schedule", "beta_max", cfg.beta_max);
  get(kv, "senet", "base_channels", cfg.senet.base_channels);
  get(kv, "senet", "num_residual_blocks", cfg.senet.num_residual_blocks);
  get(kv, "senet", "lambda_perceptual", cfg.senet.lambda_perceptual);
  get(kv, "senet", "lambda_gan", cfg.senet.lambda_gan);
  get(kv, "senet", "learning_rate", cfg.senet.learning_rate);
  get(kv, "senet", "batch_size", cfg.senet.batch_size);
  get(kv, "senet", "epochs", cfg.senet.epochs);
  get(kv, "senet", "ema_limit", cfg.senet.ema_limit);
  stage_from_map(kv, "inpaint", cfg.inpaint);
  stage_from_map(kv, "detail", cfg.detail);
  get(kv, "paths", "senet_checkpoint", cfg.senet_checkpoint);
  get(kv, "paths", "inpaint_checkpoint", cfg.inpaint_checkpoint);
  get(kv, "paths", "detail_checkpoint", cfg.detail_checkpoint);
  cfg.validate();
  return cfg;
}

ConfigMap pipeline_config_to_map(const PipelineConfig& cfg) {
  ConfigMap kv;
  auto& pipe = kv["pipeline"];
  pipe["image_size"] = std::to_string(cfg.image_size);
  pipe["mask_dilation"] = std::to_string(cfg.mask_dilation);
  pipe["seed"] = std::to_string(cfg.seed);
  pipe["dataset_size"] = std::to_string(cfg.dataset_size);
  auto& sched = kv["schedule"];
  sched["T"] = std::to_string(cfg.schedule_T);
  sched["beta_min"] = num(cfg.beta_min);
  sched["beta_max"] = num(cfg.beta_max);
  auto& se = kv["senet"];
  se["base_channels"] = std::to_string(cfg.senet.base_channels);
  se["num_residual_blocks"] = std::to_string(cfg.senet.num_residual_blocks);
  se["lambda_perceptual"] = num(cfg.senet.lambda_perceptual);
  se["lambda_gan"] = num(cfg.senet.lambda_gan);
  se["learning_rate"] = num(cfg.senet.learning_rate);
  se["batch_size"] = std::to_string(cfg.senet.batch_size);
  se["epochs"] = std::to_string(cfg.senet.epochs);
  se["ema_limit"] = num(cfg.senet.ema_limit);
  stage_to_map(kv, "inpaint", cfg.inpaint);
  stage_to_map(kv, "detail", cfg.detail);
  auto& paths = kv["paths"];
  paths["senet_checkpoint"] = cfg.senet_checkpoint;
  paths["inpaint_checkpoint"] = cfg.inpaint_checkpoint;
  paths["detail_checkpoint"] = cfg.detail_checkpoint;
  return kv;
}

std::string pipeline_config_text(const PipelineConfig& cfg) {
  return serialize_config(pipeline_config_to_map(cfg));
}

std::vector<InferOutputs> infer_batch(const PipelineModels& models, const PipelineConfig& cfg,
                                      const std::vector<ImageTensor>& inputs,
                                      const std::vector<ShadowMask>& user_masks, uint64_t seed) {
  cfg.validate();
  if (inputs.size() != user_masks.size())
    throw std::invalid_argument("infer: inputs/masks size mismatch");
  if (models.senet.weights.empty() || models.inpaint.weights.empty() ||
      models.detail.weights.empty())
    throw std::invalid_argument("infer: missing model weights");

  size_t n = inputs.size();
  NoiseSchedule sched = make_schedule(cfg.schedule_T, cfg.beta_min, cfg.beta_max);
  TimestepPlan inpaint_plan = make_timestep_plan(sched.T, cfg.inpaint.sampler_steps);
  TimestepPlan detail_plan = make_timestep_plan(sched.T, cfg.detail.sampler_steps);

  std::vector<InferOutputs> out(n);
  std::vector<size_t> active;
  for (size_t i = 0; i < n; ++i) {
    if (user_masks[i].empty()) {
      out[i].result = inputs[i];
      out[i].refined_mask = ShadowMask(inputs[i].height(), inputs[i].width());
      out[i].coarse = inputs[i];
      out[i].structure = senet_forward(models.senet, cfg.senet, inputs[i]);
      out[i].gradient = GradientMap(inputs[i].height(), inputs[i].width());
      out[i].empty_mask_warning = true;
    } else {
      active.push_back(i);
    }
  }
  if (active.empty()) return out;

  std::vector<ImageTensor> act_inputs;
  std::vector<ShadowMask> act_masks;
  std::vector<uint64_t> inpaint_seeds, detail_seeds;
  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    act_inputs.push_back(inputs[i]);
    act_masks.push_back(dilate(user_masks[i], static_cast<int>(cfg.mask_dilation)));
    inpaint_seeds.push_back(Rng::mix64(seed, 0x1000 + i));
    detail_seeds.push_back(Rng::mix64(seed, 0x2000 + i));
  }

  std::vector<ImageTensor> structures = senet_forward_batch(models.senet, cfg.senet, act_inputs);
  std::vector<ImageTensor> coarse =
      sample_inpaint_batch(models.inpaint, cfg.inpaint.unet, act_inputs, act_masks, structures,
                           inpaint_plan, sched, inpaint_seeds);

  std::vector<ImageTensor> updated(active.size());
  std::vector<ShadowMask> refined(active.size());
  for (size_t a = 0; a < active.size(); ++a) {
    refined[a] = refine_mask(act_inputs[a], coarse[a]);
    updated[a] = composite_update(act_inputs[a], coarse[a], refined[a]);
  }

  std::vector<ImageTensor> results = sample_detail_batch(
      models.detail, cfg.detail.unet, updated, act_inputs, refined, detail_plan, sched,
      detail_seeds);

  for (size_t a = 0; a < active.size(); ++a) {
    size_t i = active[a];
    out[i].result = std::move(results[a]);
    out[i].refined_mask = refined[a];
    out[i].structure = std::move(structures[a]);
    out[i].coarse = std::move(coarse[a]);
    out[i].gradient = gradient_map(act_inputs[a], refined[a]);
  }
  return out;
}

InferOutputs infer(const PipelineModels& models, const PipelineConfig& cfg,
                   const ImageTensor& input, const ShadowMask& user_mask, uint64_t seed) {
  return infer_batch(models, cfg, {input}, {user_mask}, seed)[0];
}

}  // namespace psr

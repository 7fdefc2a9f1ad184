#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "psr/metrics.hpp"
#include "psr/pipeline.hpp"
#include "psr/png_io.hpp"
#include "psr/structure_teacher.hpp"

namespace fs = std::filesystem;
using namespace psr;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_dir = ".";
};

PipelineConfig resolve_config(const GlobalOpts& g) {
  PipelineConfig cfg = g.config_path.empty()
                           ? default_pipeline_config()
                           : pipeline_config_from_map(load_config_file(g.config_path));
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

void add_global(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config_path, "pipeline config file");
  cmd->add_option("--seed", g.seed, "override the config seed");
  cmd->add_option("--out", g.out_dir, "output directory");
}

ModelState load_model(const std::string& path, const std::string& expected_kind) {
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint: " + path);
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != expected_kind)
    throw std::runtime_error("checkpoint " + path + " has kind '" + ckpt.kind + "', expected '" +
                             expected_kind + "'");
  return std::move(ckpt.state);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

int cmd_synth_data(const GlobalOpts& g, int64_t n, int64_t heldout, const std::string& clean_dir,
                   std::vector<int64_t> face_box) {
  PipelineConfig cfg = resolve_config(g);
  if (n <= 0) n = cfg.dataset_size;
  fs::create_directories(g.out_dir);

  if (!clean_dir.empty()) {
    // Real-portrait ingestion: relight user-supplied clean portraits using
    // an ellipsoid fitted to the given face box.
    if (face_box.size() != 4)
      throw std::runtime_error("--face-box needs x,y,w,h when --clean-dir is used");
    std::vector<PairedSample> samples;
    std::vector<DatasetRecord> records;
    Rng base(cfg.seed);
    int64_t index = 0;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(clean_dir))
      if (entry.path().extension() == ".png") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .png files in " + clean_dir);
    for (const auto& file : files) {
      ImageTensor img = load_image(file.string());
      ToyPortrait p = portrait_from_image(img, face_box[0], face_box[1], face_box[2], face_box[3]);
      Rng rng = base.fork(static_cast<uint64_t>(index));
      LightSpec light = random_light(rng);
      ShadowMask mask = random_facial_mask(p, static_cast<int64_t>(rng.next_u64() >> 1));
      PairedSample s;
      s.clean = p.image;
      s.input = composite(p.image, synth_relight(p, light), mask);
      s.target_structure = extract_structure_teacher(p.image);
      s.mask = mask;
      samples.push_back(std::move(s));
      DatasetRecord r;
      r.index = index++;
      r.light = light;
      r.mask_coverage =
          static_cast<double>(mask.count()) / static_cast<double>(p.face_pixel_count());
      records.push_back(r);
    }
    save_dataset(samples, records, join(g.out_dir, "train"));
    std::printf("wrote %zu ingested samples to %s/train\n", samples.size(), g.out_dir.c_str());
    return 0;
  }

  std::vector<DatasetRecord> records;
  auto samples = build_senet_dataset_with_records(n, static_cast<int64_t>(cfg.seed),
                                                  cfg.image_size, &records);
  save_dataset(samples, records, join(g.out_dir, "train"));
  if (heldout > 0) {
    std::vector<DatasetRecord> hrecords;
    auto hsamples = build_senet_dataset_with_records(
        heldout, static_cast<int64_t>(Rng::mix64(cfg.seed, 0x9e1d)), cfg.image_size, &hrecords);
    save_dataset(hsamples, hrecords, join(g.out_dir, "heldout"));
  }
  std::printf("wrote %lld train samples to %s/train\n", static_cast<long long>(n),
              g.out_dir.c_str());
  return 0;
}

int cmd_train_senet(const GlobalOpts& g, const std::string& data_dir) {
  PipelineConfig cfg = resolve_config(g);
  auto dataset = load_dataset(data_dir);
  auto res = train_senet(dataset, cfg.senet, cfg.seed);
  fs::create_directories(g.out_dir);
  std::string path = join(g.out_dir, cfg.senet_checkpoint);
  save_checkpoint({"senet", pipeline_config_text(cfg), res.state}, path);
  std::printf("senet: %zu steps, final loss %.5f, saved %s\n", res.total_loss_history.size(),
              res.total_loss_history.empty() ? 0.0 : res.total_loss_history.back(), path.c_str());
  return 0;
}

int cmd_train_inpaint(const GlobalOpts& g, const std::string& data_dir,
                      const std::string& senet_path, bool no_structure) {
  PipelineConfig cfg = resolve_config(g);
  ModelState senet = load_model(
      senet_path.empty() ? join(g.out_dir, cfg.senet_checkpoint) : senet_path, "senet");
  auto dataset = load_dataset(data_dir);
  std::vector<ImageTensor> clean;
  for (const auto& s : dataset) clean.push_back(s.clean);
  NoiseSchedule sched = make_schedule(cfg.schedule_T, cfg.beta_min, cfg.beta_max);
  auto res = train_inpaint(clean, senet, cfg.senet, cfg.inpaint.unet, sched, cfg.inpaint.train,
                           cfg.seed, !no_structure);
  fs::create_directories(g.out_dir);
  std::string path = join(g.out_dir, cfg.inpaint_checkpoint);
  save_checkpoint({"inpaint", pipeline_config_text(cfg), res.state}, path);
  std::printf("inpaint: %zu steps, final loss %.5f, saved %s\n", res.loss_history.size(),
              res.loss_history.empty() ? 0.0 : res.loss_history.back(), path.c_str());
  return 0;
}

int cmd_train_detail(const GlobalOpts& g, const std::string& data_dir) {
  PipelineConfig cfg = resolve_config(g);
  auto dataset = load_dataset(data_dir);
  NoiseSchedule sched = make_schedule(cfg.schedule_T, cfg.beta_min, cfg.beta_max);
  auto res = train_detail(dataset, cfg.detail.unet, sched, cfg.detail.train, cfg.seed);
  fs::create_directories(g.out_dir);
  std::string path = join(g.out_dir, cfg.detail_checkpoint);
  save_checkpoint({"detail", pipeline_config_text(cfg), res.state}, path);
  std::printf("detail: %zu steps, final loss %.5f, saved %s\n", res.loss_history.size(),
              res.loss_history.empty() ? 0.0 : res.loss_history.back(), path.c_str());
  return 0;
}

int cmd_infer(const GlobalOpts& g, const std::string& input_path, const std::string& mask_path,
              const std::string& model_dir, bool skip_detail, bool save_intermediates) {
  PipelineConfig cfg = resolve_config(g);
  std::string mdir = model_dir.empty() ? g.out_dir : model_dir;
  PipelineModels models;
  models.senet = load_model(join(mdir, cfg.senet_checkpoint), "senet");
  models.inpaint = load_model(join(mdir, cfg.inpaint_checkpoint), "inpaint");
  models.detail = load_model(join(mdir, cfg.detail_checkpoint), "detail");

  ImageTensor input = load_image(input_path);
  ShadowMask mask = load_mask(mask_path);
  InferOutputs out = infer(models, cfg, input, mask, cfg.seed);
  if (out.empty_mask_warning)
    std::fprintf(stderr, "warning: empty shadow mask, returning the input unchanged\n");

  fs::create_directories(g.out_dir);
  save_image(skip_detail ? composite_update(input, out.coarse, out.refined_mask) : out.result,
             join(g.out_dir, "result.png"));
  if (save_intermediates) {
    save_image(out.structure, join(g.out_dir, "structure.png"));
    save_image(out.coarse, join(g.out_dir, "coarse.png"));
    save_mask(out.refined_mask, join(g.out_dir, "refined_mask.png"));
    ImageTensor gimg(out.gradient.height(), out.gradient.width(), 1, ValueRange::Unit);
    for (int64_t i = 0; i < gimg.data.numel(); ++i)
      gimg.data[i] = std::min(1.0, out.gradient.data[i] * 4.0);
    save_image(gimg, join(g.out_dir, "gradient.png"));
  }
  std::printf("wrote %s\n", join(g.out_dir, "result.png").c_str());
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& result_dir, const std::string& gt_dir,
             const std::string& mask_dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(result_dir))
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .png files in " + result_dir);

  std::vector<std::string> names;
  std::vector<EvalReport> reports;
  for (const auto& file : files) {
    std::string name = file.filename().string();
    ImageTensor result = load_image(file.string());
    ImageTensor gt = load_image((fs::path(gt_dir) / name).string());
    ShadowMask mask = load_mask((fs::path(mask_dir) / name).string());
    reports.push_back(evaluate_pair(result, gt, mask));
    names.push_back(name);
  }
  std::string table = format_report_table(names, reports);
  std::printf("%s", table.c_str());
  fs::create_directories(g.out_dir);
  std::ofstream os(join(g.out_dir, "eval_report.txt"));
  os << table;
  return 0;
}

int cmd_structure_teacher(const GlobalOpts& g, const std::string& input_path) {
  ImageTensor input = load_image(input_path);
  fs::create_directories(g.out_dir);
  save_image(extract_structure_teacher(input), join(g.out_dir, "structure_teacher.png"));
  std::printf("wrote %s\n", join(g.out_dir, "structure_teacher.png").c_str());
  return 0;
}

int cmd_refine_mask(const GlobalOpts& g, const std::string& input_path,
                    const std::string& removed_path) {
  ImageTensor input = load_image(input_path);
  ImageTensor removed = load_image(removed_path);
  fs::create_directories(g.out_dir);
  save_mask(refine_mask(input, removed), join(g.out_dir, "refined_mask.png"));
  std::printf("wrote %s\n", join(g.out_dir, "refined_mask.png").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"portrait shadow removal via structure-guided diffusion inpainting"};
  app.require_subcommand(1);

  GlobalOpts g_synth, g_senet, g_inpaint, g_detail, g_infer, g_eval, g_teacher, g_refine;

  auto* synth = app.add_subcommand("synth-data", "generate a paired toy-portrait dataset");
  int64_t n = 0, heldout = 0;
  std::string clean_dir;
  std::vector<int64_t> face_box;
  add_global(synth, g_synth);
  synth->add_option("--n", n, "number of training samples (default from config)");
  synth->add_option("--heldout", heldout, "additional held-out samples");
  synth->add_option("--clean-dir", clean_dir, "ingest real clean portraits from this directory");
  synth->add_option("--face-box", face_box, "face bounding box x,y,w,h for --clean-dir");

  auto* tsenet = app.add_subcommand("train-senet", "train the structure extraction network");
  std::string senet_data;
  add_global(tsenet, g_senet);
  tsenet->add_option("--data", senet_data, "dataset directory")->required();

  auto* tinpaint = app.add_subcommand("train-inpaint", "train the inpainting diffusion model");
  std::string inpaint_data, senet_ckpt;
  bool no_structure = false;
  add_global(tinpaint, g_inpaint);
  tinpaint->add_option("--data", inpaint_data, "dataset directory")->required();
  tinpaint->add_option("--senet", senet_ckpt, "structure network checkpoint");
  tinpaint->add_flag("--no-structure", no_structure, "zero the structure condition (ablation)");

  auto* tdetail = app.add_subcommand("train-detail", "train the detail restoration model");
  std::string detail_data;
  add_global(tdetail, g_detail);
  tdetail->add_option("--data", detail_data, "dataset directory")->required();

  auto* infer_cmd = app.add_subcommand("infer", "remove shadows from a portrait");
  std::string in_img, in_mask, model_dir;
  bool skip_detail = false, intermediates = false;
  add_global(infer_cmd, g_infer);
  infer_cmd->add_option("--input", in_img, "input portrait PNG")->required();
  infer_cmd->add_option("--mask", in_mask, "shadow mask PNG")->required();
  infer_cmd->add_option("--models", model_dir, "directory holding the three checkpoints");
  infer_cmd->add_flag("--skip-detail", skip_detail, "stop after mask-refined inpainting");
  infer_cmd->add_flag("--intermediates", intermediates, "persist structure/coarse/mask/gradient");

  auto* eval_cmd = app.add_subcommand("eval", "region-wise metrics over a result directory");
  std::string result_dir, gt_dir, mask_dir;
  add_global(eval_cmd, g_eval);
  eval_cmd->add_option("--results", result_dir, "directory of result PNGs")->required();
  eval_cmd->add_option("--gt", gt_dir, "directory of ground-truth PNGs")->required();
  eval_cmd->add_option("--masks", mask_dir, "directory of shadow-mask PNGs")->required();

  auto* teacher_cmd = app.add_subcommand("structure-teacher", "run the analytic structure teacher");
  std::string teacher_input;
  add_global(teacher_cmd, g_teacher);
  teacher_cmd->add_option("--input", teacher_input, "input PNG")->required();

  auto* refine_cmd = app.add_subcommand("refine-mask", "Otsu mask refinement from input/result");
  std::string refine_input, refine_removed;
  add_global(refine_cmd, g_refine);
  refine_cmd->add_option("--input", refine_input, "input PNG")->required();
  refine_cmd->add_option("--removed", refine_removed, "shadow removal result PNG")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth_data(g_synth, n, heldout, clean_dir, face_box);
    if (tsenet->parsed()) return cmd_train_senet(g_senet, senet_data);
    if (tinpaint->parsed()) return cmd_train_inpaint(g_inpaint, inpaint_data, senet_ckpt, no_structure);
    if (tdetail->parsed()) return cmd_train_detail(g_detail, detail_data);
    if (infer_cmd->parsed())
      return cmd_infer(g_infer, in_img, in_mask, model_dir, skip_detail, intermediates);
    if (eval_cmd->parsed()) return cmd_eval(g_eval, result_dir, gt_dir, mask_dir);
    if (teacher_cmd->parsed()) return cmd_structure_teacher(g_teacher, teacher_input);
    if (refine_cmd->parsed()) return cmd_refine_mask(g_refine, refine_input, refine_removed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

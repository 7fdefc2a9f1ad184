#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "psr/png_io.hpp"
#include "psr/toyface.hpp"

using namespace psr;
namespace fs = std::filesystem;

namespace {

#ifndef PSR_CLI_PATH
#define PSR_CLI_PATH "./psr"
#endif

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const fs::path& scratch) {
  fs::path log = scratch / "cli_out.txt";
  std::string cmd = std::string(PSR_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(log);
  std::ostringstream buf;
  buf << is.rdbuf();
  r.output = buf.str();
  return r;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli: synth-data is reproducible across runs") {
  fs::path scratch = fs::temp_directory_path() / "psr_cli_synth";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  RunResult a = run_cli("synth-data --n 8 --seed 1 --out " + (scratch / "a").string(), scratch);
  REQUIRE_MESSAGE(a.exit_code == 0, a.output);
  RunResult b = run_cli("synth-data --n 8 --seed 1 --out " + (scratch / "b").string(), scratch);
  REQUIRE(b.exit_code == 0);

  int compared = 0;
  for (const auto& entry : fs::directory_iterator(scratch / "a" / "train")) {
    fs::path other = scratch / "b" / "train" / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
    compared++;
  }
  CHECK(compared == 8 * 4 + 1);  // four rasters per sample plus the manifest
  fs::remove_all(scratch);
}

TEST_CASE("cli: infer fails cleanly when a checkpoint is missing") {
  fs::path scratch = fs::temp_directory_path() / "psr_cli_missing";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  ToyPortrait p = generate_toy_portrait(3, 64);
  save_image(p.image, (scratch / "input.png").string());
  ShadowMask m = random_facial_mask(p, 5);
  save_mask(m, (scratch / "mask.png").string());

  RunResult r = run_cli("infer --input " + (scratch / "input.png").string() + " --mask " +
                            (scratch / "mask.png").string() + " --models " + scratch.string() +
                            " --out " + scratch.string(),
                        scratch);
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("senet.ckpt") != std::string::npos);
  fs::remove_all(scratch);
}

TEST_CASE("cli: structure-teacher and refine-mask run end to end") {
  fs::path scratch = fs::temp_directory_path() / "psr_cli_tools";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  ToyPortrait p = generate_toy_portrait(4, 64);
  save_image(p.image, (scratch / "input.png").string());

  RunResult t = run_cli("structure-teacher --input " + (scratch / "input.png").string() +
                            " --out " + scratch.string(),
                        scratch);
  REQUIRE_MESSAGE(t.exit_code == 0, t.output);
  CHECK(fs::exists(scratch / "structure_teacher.png"));

  // A brightened copy stands in for a removal result.
  ImageTensor removed = p.image;
  for (double& v : removed.data.data) v = std::min(1.0, v + 0.3);
  save_image(removed, (scratch / "removed.png").string());
  RunResult rm = run_cli("refine-mask --input " + (scratch / "input.png").string() +
                             " --removed " + (scratch / "removed.png").string() + " --out " +
                             scratch.string(),
                         scratch);
  REQUIRE_MESSAGE(rm.exit_code == 0, rm.output);
  CHECK(fs::exists(scratch / "refined_mask.png"));
  fs::remove_all(scratch);
}

TEST_CASE("cli: eval emits a table over matching directories") {
  fs::path scratch = fs::temp_directory_path() / "psr_cli_eval";
  fs::remove_all(scratch);
  fs::create_directories(scratch / "results");
  fs::create_directories(scratch / "gt");
  fs::create_directories(scratch / "masks");

  for (int i = 0; i < 2; ++i) {
    ToyPortrait p = generate_toy_portrait(20 + i, 64);
    ShadowMask m = random_facial_mask(p, i);
    std::string name = "s" + std::to_string(i) + ".png";
    save_image(synth_shadow(p, m, 0.5, 0.0), (scratch / "results" / name).string());
    save_image(p.image, (scratch / "gt" / name).string());
    save_mask(m, (scratch / "masks" / name).string());
  }
  RunResult r = run_cli("eval --results " + (scratch / "results").string() + " --gt " +
                            (scratch / "gt").string() + " --masks " + (scratch / "masks").string() +
                            " --out " + scratch.string(),
                        scratch);
  REQUIRE_MESSAGE(r.exit_code == 0, r.output);
  CHECK(r.output.find("aggregate") != std::string::npos);
  CHECK(fs::exists(scratch / "eval_report.txt"));
  fs::remove_all(scratch);
}

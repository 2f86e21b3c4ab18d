// End-to-end exercise of the command line surface on a tiny run: every
// subcommand, its machine-readable outputs, and the headline error paths.

#include <cstdio>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "pacl/io.hpp"
#include "subprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using pacl::testing::run_command;

namespace {

int g_failures = 0;

void check(bool cond, const std::string& what) {
  if (!cond) {
    std::printf("FAIL: %s\n", what.c_str());
    ++g_failures;
  }
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: pacl_cli_smoke <path-to-pacl-cli>\n");
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = fs::temp_directory_path() / "pacl_cli_smoke";
  fs::remove_all(work);
  fs::create_directories(work);

  pacl::write_text_file(work / "spec.toml", R"([data]
min_objects = 1
max_objects = 2
colors = ["red", "green", "blue", "yellow"]
class_mode = "color"
seed = 3
n = 24
)");
  pacl::write_text_file(work / "cfg.toml", R"([model]
width = 16
heads = 2
text_width = 16
text_heads = 2
embed_dim = 16

[train]
batch_size = 8
epochs = 1
seed = 11
precision = "f64"
)");

  // gen-data
  auto gen = run_command(cli + " gen-data --spec " + q(work / "spec.toml") + " --out " + q(work / "data"));
  check(gen.exit_code == 0, "gen-data exits 0");
  check(fs::exists(work / "data" / "images" / "000000.ppm"), "gen-data writes images/");
  check(fs::exists(work / "data" / "labels" / "000000.pgm"), "gen-data writes labels/");
  check(fs::exists(work / "data" / "captions.tsv"), "gen-data writes captions.tsv");
  check(fs::exists(work / "data" / "classes.txt"), "gen-data writes classes.txt");
  check(fs::exists(work / "data" / "manifest.json"), "gen-data writes manifest.json");
  check(fs::exists(work / "data" / "config.toml"), "gen-data echoes the resolved config");

  // pretrain
  auto pre = run_command(cli + " pretrain --config " + q(work / "cfg.toml") + " --data " + q(work / "data") +
                         " --out " + q(work / "towers"));
  check(pre.exit_code == 0, "pretrain exits 0");
  check(fs::exists(work / "towers" / "model.ckpt"), "pretrain writes model.ckpt");
  check(fs::exists(work / "towers" / "history.csv"), "pretrain writes history.csv");
  const json pre_json = json::parse(pre.output);
  check(pre_json.at("steps").get<int64_t>() >= 1, "pretrain reports steps");

  // train-pacl
  auto pacl = run_command(cli + " train-pacl --config " + q(work / "cfg.toml") + " --towers " +
                          q(work / "towers" / "model.ckpt") + " --data " + q(work / "data") + " --out " +
                          q(work / "model"));
  check(pacl.exit_code == 0, "train-pacl exits 0");
  check(fs::exists(work / "model" / "model.ckpt"), "train-pacl writes model.ckpt");

  const std::string model = (work / "model" / "model.ckpt").string();
  const std::string data = (work / "data").string();
  const std::string classes = (work / "data" / "classes.txt").string();

  // segment on a single image: mask dims match the input image
  auto seg = run_command(cli + " segment --model '" + model + "' --image " +
                         q(work / "data" / "images" / "000000.ppm") + " --classes '" + classes +
                         "' --stride 4 --bg-entropy 1.5 --dump-scores --out " + q(work / "seg"));
  check(seg.exit_code == 0, "segment exits 0");
  check(fs::exists(work / "seg" / "000000_mask.pgm"), "segment writes the mask PGM");
  check(fs::exists(work / "seg" / "000000_scores.ckpt"), "segment dumps score maps on request");
  if (fs::exists(work / "seg" / "000000_mask.pgm")) {
    const auto mask = pacl::load_pgm(work / "seg" / "000000_mask.pgm");
    check(mask.h == 32 && mask.w == 32, "mask dims equal the image dims");
  }

  // eval-seg
  auto eseg = run_command(cli + " eval-seg --model '" + model + "' --dataset '" + data + "' --stride 4");
  check(eseg.exit_code == 0, "eval-seg exits 0");
  const json eseg_json = json::parse(eseg.output);
  check(eseg_json.contains("miou"), "eval-seg reports miou");

  // align-probe both modes
  for (const std::string mode : {"pre", "post"}) {
    auto probe = run_command(cli + " align-probe --model '" + model + "' --dataset '" + data + "' --mode " + mode);
    check(probe.exit_code == 0, "align-probe " + mode + " exits 0");
    const json pj = json::parse(probe.output);
    const double acc = pj.at("accuracy").get<double>();
    check(acc >= 0.0 && acc <= 1.0, "align-probe " + mode + " accuracy in range");
  }

  // coherence
  auto coh = run_command(cli + " coherence --towers " + q(work / "towers" / "model.ckpt") + " --dataset '" + data +
                         "' --pairs 500 --seed 3 --out " + q(work / "coh"));
  check(coh.exit_code == 0, "coherence exits 0");
  check(fs::exists(work / "coh" / "roc.csv"), "coherence writes roc.csv");
  const json coh_json = json::parse(coh.output);
  check(coh_json.at("auroc").get<double>() >= 0.0, "coherence reports auroc");

  // classify
  auto cls = run_command(cli + " classify --model '" + model + "' --dataset '" + data + "' --mode pacl");
  check(cls.exit_code == 0, "classify exits 0");
  check(json::parse(cls.output).contains("accuracy"), "classify reports accuracy");

  // grad-check
  auto gc = run_command(cli + " grad-check --seed 7");
  check(gc.exit_code == 0, "grad-check exits 0");
  const json gc_json = json::parse(gc.output);
  check(gc_json.at("pass").get<bool>(), "grad-check passes");
  check(gc_json.at("max_rel_err").get<double>() <= 1e-5, "grad-check reports error <= 1e-5");

  // error paths: one-line diagnostics and nonzero exits
  pacl::write_text_file(work / "bad.toml", "[train]\nbatchsize = 8\n");
  auto bad_cfg = run_command(cli + " pretrain --config " + q(work / "bad.toml") + " --data '" + data + "' --out " +
                             q(work / "nope") + " 2>/dev/null");
  check(bad_cfg.exit_code != 0, "unknown config key exits nonzero");

  pacl::write_text_file(work / "badnames.txt", "definitelyunknownword\n");
  auto bad_cls = run_command(cli + " eval-seg --model '" + model + "' --dataset '" + data + "' --classes " +
                             q(work / "badnames.txt") + " 2>/dev/null");
  check(bad_cls.exit_code != 0, "class name outside the vocabulary exits nonzero");

  auto bad_both = run_command(cli + " segment --model '" + model + "' --classes '" + classes + "' --out " +
                              q(work / "seg2") + " 2>/dev/null");
  check(bad_both.exit_code != 0, "segment without --image or --dataset exits nonzero");

  if (g_failures > 0) {
    std::printf("%d CLI smoke checks failed\n", g_failures);
    return 1;
  }
  std::printf("all CLI smoke checks passed\n");
  return 0;
}

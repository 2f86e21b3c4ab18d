#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <json.hpp>

#include "pacl/config.hpp"
#include "pacl/diagnostics.hpp"
#include "pacl/inference.hpp"
#include "pacl/io.hpp"
#include "pacl/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pacl;

namespace {

struct GlobalOpts {
  std::string config_path;
  int threads = 1;
};

RunConfig load_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
  // PACL_SEED overrides the configured seeds (CI hook).
  if (const char* env = std::getenv("PACL_SEED")) {
    const auto seed = static_cast<uint64_t>(std::stoull(env));
    cfg.train.seed = seed;
    cfg.data.seed = seed;
  }
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.toml", cfg.to_toml());
}

Dtype checkpoint_dtype(const TrainConfig& cfg) {
  return cfg.precision == Precision::f32 ? Dtype::f32 : Dtype::f64;
}

int32_t dominant_label(const IntGrid& labelmap) {
  std::map<int32_t, int64_t> counts;
  for (int32_t v : labelmap.v) {
    if (v != kIgnoreId) ++counts[v];
  }
  if (counts.empty()) throw std::runtime_error("image has no labeled pixels to derive a class from");
  int32_t best = -1;
  int64_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

int cmd_gen_data(const GlobalOpts& g, int64_t n_override, const std::string& out) {
  RunConfig cfg = load_config(g.config_path);
  const int64_t n = n_override > 0 ? n_override : cfg.data_n;
  const Dataset ds = generate_dataset(cfg.data, n, g.threads);
  save_dataset(out, ds);
  cfg.data_n = n;
  echo_config(cfg, out);
  std::cout << json{{"out", out}, {"count", n}, {"classes", ds.class_names.size()}}.dump() << "\n";
  return 0;
}

int cmd_pretrain(const GlobalOpts& g, const std::string& data_dir, const std::string& out) {
  RunConfig cfg = load_config(g.config_path);
  cfg.train.threads = g.threads;
  const Dataset data = load_dataset(data_dir);
  Model model = Model::init(cfg.model, build_corpus_tokenizer(data, cfg.model.text_context), cfg.train.seed);
  const History history = pretrain_clip(model, data, cfg.train);
  fs::create_directories(out);
  save_model(fs::path(out) / "model.ckpt", model, checkpoint_dtype(cfg.train));
  write_text_file(fs::path(out) / "history.csv", history_csv(history));
  echo_config(cfg, out);
  json summary{{"steps", history.size()}, {"out", out}};
  if (!history.empty()) {
    summary["first_loss"] = history.front().loss;
    summary["final_loss"] = history.back().loss;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_train_pacl(const GlobalOpts& g, const std::string& towers, const std::string& data_dir,
                   const std::string& out) {
  RunConfig cfg = load_config(g.config_path);
  cfg.train.threads = g.threads;
  const Dataset data = load_dataset(data_dir);
  Model model = load_model(towers);
  model.init_pacl_embedder(cfg.train.seed);
  const History history = train_pacl(model, data, cfg.train);
  fs::create_directories(out);
  save_model(fs::path(out) / "model.ckpt", model, checkpoint_dtype(cfg.train));
  write_text_file(fs::path(out) / "history.csv", history_csv(history));
  echo_config(cfg, out);
  json summary{{"steps", history.size()}, {"out", out}};
  if (!history.empty()) {
    summary["first_loss"] = history.front().loss;
    summary["final_loss"] = history.back().loss;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

SegmentOptions segment_options(const RunConfig& cfg, int64_t stride_flag, double bg_flag) {
  SegmentOptions opts;
  opts.stride = stride_flag > 0 ? stride_flag : cfg.infer.stride;
  opts.softmax_before_upsample = cfg.infer.softmax_before_upsample;
  opts.densify = cfg.infer.densify;
  if (bg_flag >= 0.0) {
    opts.background_entropy = bg_flag;
  } else if (cfg.infer.bg_entropy.has_value()) {
    opts.background_entropy = cfg.infer.bg_entropy;
  }
  return opts;
}

int cmd_segment(const GlobalOpts& g, const std::string& model_path, const std::string& image_path,
                const std::string& dataset_dir, const std::string& classes_file, int64_t stride, double bg_entropy,
                bool dump_scores, const std::string& out) {
  const RunConfig cfg = load_config(g.config_path);
  Model model = load_model(model_path);
  const auto names = load_class_list(classes_file);
  const auto bank = build_class_bank(names, default_prompts(), model);
  const SegmentOptions opts = segment_options(cfg, stride, bg_entropy);
  fs::create_directories(out);

  std::vector<std::pair<std::string, Tensor>> images;
  if (!image_path.empty()) {
    images.emplace_back(fs::path(image_path).stem().string(), load_ppm(image_path));
  } else {
    const Dataset data = load_dataset(dataset_dir);
    for (size_t i = 0; i < data.pairs.size(); ++i) {
      char stem[16];
      std::snprintf(stem, sizeof stem, "%06zu", i);
      images.emplace_back(stem, data.pairs[i].image);
    }
  }

  for (const auto& [stem, image] : images) {
    const SegmentationOutput seg = segment(model, image, bank, opts);
    save_pgm(fs::path(out) / (stem + "_mask.pgm"), mask_with_background(seg));
    if (dump_scores) {
      Checkpoint scores;
      scores.push_back(CheckpointEntry::from_tensor("scores", seg.scores, Dtype::f64));
      save_checkpoint(fs::path(out) / (stem + "_scores.ckpt"), scores);
    }
  }
  std::cout << json{{"out", out}, {"images", images.size()}, {"stride", opts.stride}}.dump() << "\n";
  return 0;
}

int cmd_eval_seg(const GlobalOpts& g, const std::string& model_path, const std::string& dataset_dir,
                 const std::string& classes_file, int64_t stride, double bg_entropy, const std::string& out) {
  const RunConfig cfg = load_config(g.config_path);
  Model model = load_model(model_path);
  const Dataset data = load_dataset(dataset_dir);
  const auto names = classes_file.empty() ? data.class_names : load_class_list(classes_file);
  const auto bank = build_class_bank(names, default_prompts(), model);
  const SegmentOptions opts = segment_options(cfg, stride, bg_entropy);

  std::vector<IntGrid> preds(data.pairs.size()), gts(data.pairs.size());
  std::vector<int64_t> order(data.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  parallel_for(static_cast<int64_t>(data.pairs.size()), g.threads, [&](int64_t i) {
    // each image is independent; workers own disjoint slots
    Model local = model;  // forward passes mutate nothing, copy guards parameter addresses
    preds[static_cast<size_t>(i)] = segment(local, data.pairs[static_cast<size_t>(i)].image, bank, opts).mask;
    gts[static_cast<size_t>(i)] = data.pairs[static_cast<size_t>(i)].labelmap;
  });

  const MiouResult res = miou(preds, gts, static_cast<int64_t>(names.size()));
  json per_class = json::object();
  for (size_t c = 0; c < names.size(); ++c) {
    if (res.class_present[c]) per_class[names[c]] = res.per_class_iou[c];
  }
  const json out_json{{"miou", res.miou}, {"per_class_iou", per_class}, {"stride", opts.stride},
                      {"images", data.pairs.size()}};
  std::cout << out_json.dump(2) << "\n";
  if (!out.empty()) {
    fs::create_directories(out);
    write_text_file(fs::path(out) / "metrics.json", out_json.dump(2) + "\n");
  }
  return 0;
}

int cmd_align_probe(const GlobalOpts& g, const std::string& model_path, const std::string& dataset_dir,
                    const std::string& mode, int64_t stride, const std::string& out) {
  Model model = load_model(model_path);
  const Dataset data = load_dataset(dataset_dir);
  const auto bank = build_class_bank(data.class_names, default_prompts(), model);
  const ProbeMode probe = mode == "pre" ? ProbeMode::pre : ProbeMode::post;
  const double acc = patch_alignment_accuracy(model, data, bank, probe, stride);
  const json out_json{{"mode", mode}, {"accuracy", acc}, {"images", data.pairs.size()}};
  std::cout << out_json.dump(2) << "\n";
  if (!out.empty()) {
    fs::create_directories(out);
    write_text_file(fs::path(out) / ("probe_" + mode + ".json"), out_json.dump(2) + "\n");
  }
  return 0;
}

int cmd_coherence(const GlobalOpts& g, const std::string& towers, const std::string& dataset_dir, int64_t pairs,
                  uint64_t seed, const std::string& out) {
  (void)g;
  Model model = load_model(towers);
  const Dataset data = load_dataset(dataset_dir);
  const ROCResult roc = coherence_auroc(model, data, pairs, seed);
  const json out_json{{"auroc", roc.auroc}, {"pairs", pairs}, {"seed", seed}};
  std::cout << out_json.dump(2) << "\n";
  if (!out.empty()) {
    fs::create_directories(out);
    write_text_file(fs::path(out) / "coherence.json", out_json.dump(2) + "\n");
    std::string csv = "threshold,tpr,fpr\n";
    for (size_t i = 0; i < roc.thresholds.size(); ++i) {
      csv += std::to_string(roc.thresholds[i]) + "," + std::to_string(roc.tpr[i]) + "," +
             std::to_string(roc.fpr[i]) + "\n";
    }
    write_text_file(fs::path(out) / "roc.csv", csv);
  }
  return 0;
}

int cmd_classify(const GlobalOpts& g, const std::string& model_path, const std::string& dataset_dir,
                 const std::string& classes_file, const std::string& mode, const std::string& out) {
  (void)g;
  Model model = load_model(model_path);
  const Dataset data = load_dataset(dataset_dir);
  const auto names = classes_file.empty() ? data.class_names : load_class_list(classes_file);
  const auto bank = build_class_bank(names, default_prompts(), model);
  const ClassifyMode cmode = mode == "clip" ? ClassifyMode::clip : ClassifyMode::pacl;

  int64_t hits = 0;
  for (const auto& pair : data.pairs) {
    const int32_t gt = dominant_label(pair.labelmap);
    const auto res = zeroshot_classify(model, pair.image, bank, cmode);
    hits += res.class_id == gt ? 1 : 0;
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(data.pairs.size());
  const json out_json{{"mode", mode}, {"accuracy", acc}, {"images", data.pairs.size()}};
  std::cout << out_json.dump(2) << "\n";
  if (!out.empty()) {
    fs::create_directories(out);
    write_text_file(fs::path(out) / ("classify_" + mode + ".json"), out_json.dump(2) + "\n");
  }
  return 0;
}

int cmd_grad_check(uint64_t seed) {
  const GradCheckReport report = grad_check_pacl_loss(seed);
  std::cout << json{{"max_rel_err", report.max_rel_err}, {"pass", report.pass}, {"seeds", report.seeds}}.dump()
            << "\n";
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-aligned contrastive learning on synthetic scenes: data generation, two-phase training, "
               "dense zero-shot segmentation and diagnostics"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--threads", g.threads, "worker thread cap for data generation and evaluation")
      ->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic image-caption-labelmap dataset");
  std::string gen_spec, gen_out;
  int64_t gen_n = 0;
  gen->add_option("--spec", gen_spec, "TOML file with a [data] section")->check(CLI::ExistingFile);
  gen->add_option("--n", gen_n, "number of scenes (overrides the spec)");
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "phase A: train both towers with the CLS-cosine objective");
  std::string pre_cfg, pre_data, pre_out;
  pre->add_option("--config", pre_cfg, "run configuration TOML")->check(CLI::ExistingFile);
  pre->add_option("--data", pre_data, "training dataset directory")->required();
  pre->add_option("--out", pre_out, "output directory (model.ckpt, history.csv, config.toml)")->required();

  // train-pacl
  auto* pacl = app.add_subcommand("train-pacl", "phase B: train the patch embedder against frozen towers");
  std::string pacl_cfg, pacl_towers, pacl_data, pacl_out;
  pacl->add_option("--config", pacl_cfg, "run configuration TOML")->check(CLI::ExistingFile);
  pacl->add_option("--towers", pacl_towers, "phase-A checkpoint")->required()->check(CLI::ExistingFile);
  pacl->add_option("--data", pacl_data, "training dataset directory")->required();
  pacl->add_option("--out", pacl_out, "output directory")->required();

  // segment
  auto* seg = app.add_subcommand("segment", "dense zero-shot segmentation; masks written as 8-bit PGM");
  std::string seg_cfg, seg_model, seg_image, seg_dataset, seg_classes, seg_out;
  int64_t seg_stride = 0;
  double seg_bg = -1.0;
  bool seg_dump = false;
  seg->add_option("--config", seg_cfg, "run configuration TOML")->check(CLI::ExistingFile);
  seg->add_option("--model", seg_model, "trained model checkpoint")->required()->check(CLI::ExistingFile);
  seg->add_option("--image", seg_image, "single input image (PPM)")->check(CLI::ExistingFile);
  seg->add_option("--dataset", seg_dataset, "dataset directory (segments every image)");
  seg->add_option("--classes", seg_classes, "class list, one name per line")->required()->check(CLI::ExistingFile);
  seg->add_option("--stride", seg_stride, "patchifier stride (default from config, 4)");
  seg->add_option("--bg-entropy", seg_bg, "entropy threshold in nats; above it pixels become background (255)");
  seg->add_flag("--dump-scores", seg_dump, "also write per-class score maps as checkpoint containers");
  seg->add_option("--out", seg_out, "output directory")->required();

  // eval-seg
  auto* eseg = app.add_subcommand("eval-seg", "segmentation mIoU over a labeled dataset");
  std::string eseg_cfg, eseg_model, eseg_data, eseg_classes, eseg_out;
  int64_t eseg_stride = 0;
  double eseg_bg = -1.0;
  eseg->add_option("--config", eseg_cfg, "run configuration TOML")->check(CLI::ExistingFile);
  eseg->add_option("--model", eseg_model, "trained model checkpoint")->required()->check(CLI::ExistingFile);
  eseg->add_option("--dataset", eseg_data, "labeled dataset directory")->required();
  eseg->add_option("--classes", eseg_classes, "class list (defaults to the dataset's classes.txt)");
  eseg->add_option("--stride", eseg_stride, "patchifier stride");
  eseg->add_option("--bg-entropy", eseg_bg, "entropy threshold for the foreground-only evaluation mode");
  eseg->add_option("--out", eseg_out, "optional directory for metrics.json");

  // align-probe
  auto* probe = app.add_subcommand("align-probe", "patch-level zero-shot classification accuracy (pre/post)");
  std::string probe_model, probe_data, probe_mode = "post", probe_out;
  int64_t probe_stride = 0;
  probe->add_option("--model", probe_model, "model checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("--dataset", probe_data, "labeled dataset directory")->required();
  probe->add_option("--mode", probe_mode, "pre | post")->check(CLI::IsMember({"pre", "post"}));
  probe->add_option("--stride", probe_stride, "probe stride (default: training stride)");
  probe->add_option("--out", probe_out, "optional output directory");

  // coherence
  auto* coh = app.add_subcommand("coherence", "semantic-coherence AUROC of the vision encoder");
  std::string coh_towers, coh_data, coh_out;
  int64_t coh_pairs = 10000;
  uint64_t coh_seed = 0;
  coh->add_option("--towers", coh_towers, "tower checkpoint")->required()->check(CLI::ExistingFile);
  coh->add_option("--dataset", coh_data, "labeled dataset directory")->required();
  coh->add_option("--pairs", coh_pairs, "number of sampled patch pairs")->capture_default_str();
  coh->add_option("--seed", coh_seed, "pair-sampling seed")->capture_default_str();
  coh->add_option("--out", coh_out, "optional directory for coherence.json and roc.csv");

  // classify
  auto* cls = app.add_subcommand("classify", "zero-shot image classification accuracy");
  std::string cls_model, cls_data, cls_classes, cls_mode = "pacl", cls_out;
  cls->add_option("--model", cls_model, "model checkpoint")->required()->check(CLI::ExistingFile);
  cls->add_option("--dataset", cls_data, "labeled dataset directory")->required();
  cls->add_option("--classes", cls_classes, "class list (defaults to the dataset's classes.txt)");
  cls->add_option("--mode", cls_mode, "pacl | clip")->check(CLI::IsMember({"pacl", "clip"}));
  cls->add_option("--out", cls_out, "optional output directory");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "verify the loss gradient against central finite differences");
  uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed, "base seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      g.config_path = gen_spec;
      return cmd_gen_data(g, gen_n, gen_out);
    }
    if (pre->parsed()) {
      g.config_path = pre_cfg;
      return cmd_pretrain(g, pre_data, pre_out);
    }
    if (pacl->parsed()) {
      g.config_path = pacl_cfg;
      return cmd_train_pacl(g, pacl_towers, pacl_data, pacl_out);
    }
    if (seg->parsed()) {
      if (seg_image.empty() == seg_dataset.empty()) {
        throw std::invalid_argument("segment: pass exactly one of --image or --dataset");
      }
      g.config_path = seg_cfg;
      return cmd_segment(g, seg_model, seg_image, seg_dataset, seg_classes, seg_stride, seg_bg, seg_dump, seg_out);
    }
    if (eseg->parsed()) {
      g.config_path = eseg_cfg;
      return cmd_eval_seg(g, eseg_model, eseg_data, eseg_classes, eseg_stride, eseg_bg, eseg_out);
    }
    if (probe->parsed()) return cmd_align_probe(g, probe_model, probe_data, probe_mode, probe_stride, probe_out);
    if (coh->parsed()) return cmd_coherence(g, coh_towers, coh_data, coh_pairs, coh_seed, coh_out);
    if (cls->parsed()) return cmd_classify(g, cls_model, cls_data, cls_classes, cls_mode, cls_out);
    if (gc->parsed()) return cmd_grad_check(gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

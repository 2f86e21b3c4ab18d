#include <benchmark/benchmark.h>

#include "pacl/training.hpp"

namespace {

pacl::Model bench_model(int64_t width) {
  pacl::ModelConfig cfg;
  cfg.vision.width = width;
  cfg.text_width = width;
  cfg.embed_dim = width;
  const pacl::Tokenizer tok =
      pacl::Tokenizer::build({"a photo of a red square and a blue circle", "an image of a green triangle"}, 16);
  return pacl::Model::init(cfg, tok, 7);
}

void BM_VisionForward(benchmark::State& state) {
  pacl::Model m = bench_model(state.range(0));
  pacl::Rng rng(3);
  pacl::Tensor images({8, 3, 32, 32});
  for (int64_t i = 0; i < images.size(); ++i) images[i] = rng.uniform();
  for (auto _ : state) {
    auto out = pacl::vision_forward_graph(m.vision, images, 8);
    benchmark::DoNotOptimize(out.cls.val().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_VisionForward)->Arg(32)->Arg(64);

void BM_PretrainStep(benchmark::State& state) {
  pacl::Model m = bench_model(state.range(0));
  pacl::SyntheticSceneSpec spec;
  spec.seed = 11;
  const pacl::Dataset data = pacl::generate_dataset(spec, 16);
  pacl::TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.precision = pacl::Precision::f64;
  // rebuild the tokenizer over the benchmark corpus
  std::vector<std::string> captions;
  for (const auto& p : data.pairs) captions.push_back(p.caption);
  m.tokenizer = pacl::Tokenizer::build(captions, 16);
  m.text.cfg.vocab_size = m.tokenizer.vocab_size();
  pacl::Rng rng(4);
  m.text.init(rng);
  for (auto _ : state) {
    auto history = pacl::pretrain_clip(m, data, cfg);
    benchmark::DoNotOptimize(history.data());
  }
  state.SetItemsProcessed(state.iterations());  // one optimizer step per iteration
}
BENCHMARK(BM_PretrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PaclStep(benchmark::State& state) {
  pacl::Model m = bench_model(state.range(0));
  pacl::SyntheticSceneSpec spec;
  spec.seed = 12;
  const pacl::Dataset data = pacl::generate_dataset(spec, 16);
  std::vector<std::string> captions;
  for (const auto& p : data.pairs) captions.push_back(p.caption);
  for (const auto& name : data.class_names) {
    for (const auto& prompt : pacl::default_prompts()) captions.push_back(pacl::fill_prompt(prompt, name));
  }
  m.tokenizer = pacl::Tokenizer::build(captions, 16);
  m.text.cfg.vocab_size = m.tokenizer.vocab_size();
  pacl::Rng rng(5);
  m.text.init(rng);
  m.init_pacl_embedder(5);
  pacl::TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.prompt_augment = false;
  cfg.precision = pacl::Precision::f64;
  for (auto _ : state) {
    auto history = pacl::train_pacl(m, data, cfg);
    benchmark::DoNotOptimize(history.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_PaclStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

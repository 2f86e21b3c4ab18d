#include "pacl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pacl {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor stack_images(const std::vector<ImageTextPair>& pairs, const std::vector<int64_t>& indices) {
  const Tensor& first = pairs[static_cast<size_t>(indices[0])].image;
  const int64_t c = first.extent(0), h = first.extent(1), w = first.extent(2);
  Tensor out({static_cast<int64_t>(indices.size()), c, h, w});
  for (size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = pairs[static_cast<size_t>(indices[i])].image;
    std::copy(img.data(), img.data() + img.size(), out.data() + static_cast<int64_t>(i) * img.size());
  }
  return out;
}

Tensor stack_view_images(const std::vector<const ImageTextPair*>& views, const std::vector<int64_t>& indices) {
  const Tensor& first = views[static_cast<size_t>(indices[0])]->image;
  const int64_t c = first.extent(0), h = first.extent(1), w = first.extent(2);
  Tensor out({static_cast<int64_t>(indices.size()), c, h, w});
  for (size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = views[static_cast<size_t>(indices[i])]->image;
    std::copy(img.data(), img.data() + img.size(), out.data() + static_cast<int64_t>(i) * img.size());
  }
  return out;
}

void check_dataset(const Dataset& data, const TrainConfig& cfg) {
  if (data.pairs.empty()) throw std::invalid_argument("training: dataset is empty");
  if (cfg.batch_size < 2) throw std::invalid_argument("training: batch size must be >= 2 for in-batch negatives");
  if (static_cast<int64_t>(data.pairs.size()) < cfg.batch_size) {
    throw std::invalid_argument("training: dataset smaller than one batch");
  }
}

struct BatchPlan {
  std::vector<std::vector<int64_t>> batches;  // per step, over all epochs
};

BatchPlan plan_batches(int64_t n, const TrainConfig& cfg, Rng& rng) {
  BatchPlan plan;
  const int64_t per_epoch = n / cfg.batch_size;
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int64_t e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order);
    for (int64_t b = 0; b < per_epoch; ++b) {
      plan.batches.emplace_back(order.begin() + b * cfg.batch_size, order.begin() + (b + 1) * cfg.batch_size);
    }
  }
  return plan;
}

void finish_step(AdamW& opt, const std::vector<NamedParam>& trainable, double lr, Precision precision) {
  opt.step(lr);
  if (precision == Precision::f32) {
    quantize_params_f32(trainable);
    opt.quantize_f32();
  }
}

// Dataset pairs plus, when enabled, one templated single-noun caption per
// extracted class name (same image).
struct PairViews {
  std::vector<ImageTextPair> extra;
  std::vector<const ImageTextPair*> all;
};

PairViews make_views(const Dataset& data, bool augment, uint64_t seed) {
  PairViews views;
  for (const auto& p : data.pairs) views.all.push_back(&p);
  if (augment) {
    Rng rng(seed ^ 0x70726d70ull);
    for (const auto& p : data.pairs) {
      for (auto& extra : prompt_augment(p, data.class_names, default_prompts(), rng)) {
        views.extra.push_back(std::move(extra));
      }
    }
    for (const auto& p : views.extra) views.all.push_back(&p);
  }
  return views;
}

}  // namespace

double cosine_lr(int64_t step, int64_t total, double lr_init) {
  if (total < 1) throw std::invalid_argument("cosine_lr: total must be >= 1");
  if (step < 0) throw std::invalid_argument("cosine_lr: negative step");
  const int64_t s = std::min(step, total);
  return lr_init * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(s) / static_cast<double>(total)));
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : cfg_(cfg) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    slots_.push_back({Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (!p->trainable) continue;
    if (!p->grad.all_finite()) {
      throw std::runtime_error("adamw_step: non-finite gradient at optimizer step " + std::to_string(t_));
    }
    Tensor& m = slots_[i].m;
    Tensor& v = slots_[i].v;
    for (int64_t j = 0; j < p->value.size(); ++j) {
      const double g = p->grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p->value[j] -= lr * cfg_.weight_decay * p->value[j];  // decoupled decay
      p->value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamW::quantize_f32() {
  for (auto& slot : slots_) {
    for (int64_t j = 0; j < slot.m.size(); ++j) {
      slot.m[j] = static_cast<double>(static_cast<float>(slot.m[j]));
      slot.v[j] = static_cast<double>(static_cast<float>(slot.v[j]));
    }
  }
}

std::string history_csv(const History& history) {
  std::ostringstream os;
  os << "step,loss,lr\n";
  os.precision(17);
  for (const auto& h : history) os << h.step << "," << h.loss << "," << h.lr << "\n";
  return os.str();
}

History pretrain_clip(Model& model, const Dataset& data, const TrainConfig& cfg) {
  check_dataset(data, cfg);
  for (auto& np : model.tower_params()) np.param->trainable = true;
  if (!model.logit_scale.fixed) model.logit_scale.log_scale.trainable = cfg.train_logit_scale;

  const PairViews views = make_views(data, cfg.prompt_augment, cfg.seed);
  std::vector<std::vector<int32_t>> tokens;
  tokens.reserve(views.all.size());
  for (const auto* p : views.all) tokens.push_back(model.tokenizer.encode(p->caption));

  std::vector<NamedParam> trainable;
  std::vector<Parameter*> opt_params;
  for (auto& np : model.all_params()) {
    if (np.param->trainable) {
      trainable.push_back(np);
      opt_params.push_back(np.param);
    }
  }
  AdamW opt(opt_params, {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
  if (cfg.precision == Precision::f32) quantize_params_f32(trainable);

  Rng rng(cfg.seed);
  const auto plan = plan_batches(static_cast<int64_t>(views.all.size()), cfg, rng);
  const int64_t total = static_cast<int64_t>(plan.batches.size());

  History history;
  history.reserve(static_cast<size_t>(total));
  for (int64_t step = 0; step < total; ++step) {
    const auto& batch = plan.batches[static_cast<size_t>(step)];
    const Tensor images = stack_view_images(views.all, batch);
    std::vector<std::vector<int32_t>> batch_tokens;
    batch_tokens.reserve(batch.size());
    for (int64_t idx : batch) batch_tokens.push_back(tokens[static_cast<size_t>(idx)]);

    auto vf = vision_forward_graph(model.vision, images, model.cfg.vision.train_stride);
    auto tf = text_forward_graph(model.text, batch_tokens);
    auto zv = embed_cls_vision_graph(model.cls_vision_embed, vf.cls);
    auto zt = embed_text_graph(model.text_embed, tf);
    auto cm = clip_compatibility_matrix_graph(zv, zt);
    auto loss = info_nce_graph(cm, model.logit_scale.graph_value());

    const double loss_value = loss.val().item();
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("pretrain_clip: non-finite loss at step " + std::to_string(step));
    }
    const double lr = cosine_lr(step, total, cfg.lr_init);
    opt.zero_grad();
    ad::backward(loss);
    finish_step(opt, trainable, lr, cfg.precision);
    history.push_back({step, loss_value, lr});
  }
  return history;
}

History train_pacl(Model& model, const Dataset& data, const TrainConfig& cfg) {
  check_dataset(data, cfg);
  if (!model.has_pacl_embedder) throw std::invalid_argument("train_pacl: model has no patch embedder initialised");
  model.freeze_towers();
  if (!model.logit_scale.fixed) model.logit_scale.log_scale.trainable = cfg.train_logit_scale;

  // Training pairs: dataset captions plus templated single-noun captions.
  const PairViews views_holder = make_views(data, cfg.prompt_augment, cfg.seed);
  const auto& views = views_holder.all;
  const int64_t n = static_cast<int64_t>(views.size());

  // Frozen-tower features, computed once: patch tokens and projected text
  // embeddings feed the embedder-and-loss graph directly.
  const auto grid = model.cfg.vision.train_grid();
  const int64_t t = grid.first * grid.second;
  const int64_t dv = model.cfg.vision.width;
  const int64_t d = model.cfg.embed_dim;
  Tensor patch_tokens({n, t, dv});
  Tensor text_embeds({n, d});
  const int64_t chunk = 32;
  for (int64_t base = 0; base < n; base += chunk) {
    const int64_t count = std::min(chunk, n - base);
    Tensor images({count, model.cfg.vision.channels, model.cfg.vision.image_size, model.cfg.vision.image_size});
    std::vector<std::vector<int32_t>> chunk_tokens;
    for (int64_t i = 0; i < count; ++i) {
      const auto& pair = *views[static_cast<size_t>(base + i)];
      std::copy(pair.image.data(), pair.image.data() + pair.image.size(),
                images.data() + i * pair.image.size());
      chunk_tokens.push_back(model.tokenizer.encode(pair.caption));
    }
    auto vf = vision_forward_graph(model.vision, images, model.cfg.vision.train_stride);
    std::copy(vf.patches.val().data(), vf.patches.val().data() + count * t * dv,
              patch_tokens.data() + base * t * dv);
    auto te = embed_text_graph(model.text_embed, text_forward_graph(model.text, chunk_tokens));
    std::copy(te.val().data(), te.val().data() + count * d, text_embeds.data() + base * d);
  }

  std::vector<NamedParam> trainable;
  std::vector<Parameter*> opt_params;
  for (auto& np : model.all_params()) {
    if (np.param->trainable) {
      trainable.push_back(np);
      opt_params.push_back(np.param);
    }
  }
  AdamW opt(opt_params, {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});
  if (cfg.precision == Precision::f32) quantize_params_f32(trainable);

  Rng rng(cfg.seed);
  const auto plan = plan_batches(n, cfg, rng);
  const int64_t total = static_cast<int64_t>(plan.batches.size());

  History history;
  history.reserve(static_cast<size_t>(total));
  for (int64_t step = 0; step < total; ++step) {
    const auto& batch = plan.batches[static_cast<size_t>(step)];
    const int64_t k = static_cast<int64_t>(batch.size());
    Tensor pt({k, t, dv});
    Tensor te({k, d});
    for (int64_t i = 0; i < k; ++i) {
      const int64_t idx = batch[static_cast<size_t>(i)];
      std::copy(patch_tokens.data() + idx * t * dv, patch_tokens.data() + (idx + 1) * t * dv,
                pt.data() + i * t * dv);
      std::copy(text_embeds.data() + idx * d, text_embeds.data() + (idx + 1) * d, te.data() + i * d);
    }

    auto pe = embed_patches_graph(model.pacl_embed, ad::constant(pt));
    auto cm = pacl_compatibility_matrix_graph(pe, ad::constant(te), model.cfg.pool_normalized);
    auto loss = info_nce_graph(cm, model.logit_scale.graph_value());

    const double loss_value = loss.val().item();
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train_pacl: non-finite loss at step " + std::to_string(step));
    }
    const double lr = cosine_lr(step, total, cfg.lr_init);
    opt.zero_grad();
    ad::backward(loss);
    finish_step(opt, trainable, lr, cfg.precision);
    history.push_back({step, loss_value, lr});
  }
  return history;
}

Tensor eval_compatibility_matrix(Model& model, const Dataset& data, const std::vector<int64_t>& indices,
                                 bool pacl_mode) {
  const int64_t n = static_cast<int64_t>(indices.size());
  if (n < 1) throw std::invalid_argument("eval_compatibility_matrix: empty index list");
  const Tensor images = stack_images(data.pairs, indices);
  std::vector<std::vector<int32_t>> tokens;
  for (int64_t idx : indices) tokens.push_back(model.tokenizer.encode(data.pairs[static_cast<size_t>(idx)].caption));

  auto vf = vision_forward_graph(model.vision, images, model.cfg.vision.train_stride);
  auto tf = text_forward_graph(model.text, tokens);
  ad::Value cm;
  if (pacl_mode) {
    if (!model.has_pacl_embedder) throw std::invalid_argument("eval_compatibility_matrix: no patch embedder");
    auto pe = embed_patches_graph(model.pacl_embed, vf.patches);
    auto te = embed_text_graph(model.text_embed, tf);
    cm = pacl_compatibility_matrix_graph(pe, te, model.cfg.pool_normalized);
  } else {
    auto zv = embed_cls_vision_graph(model.cls_vision_embed, vf.cls);
    auto zt = embed_text_graph(model.text_embed, tf);
    cm = clip_compatibility_matrix_graph(zv, zt);
  }
  return cm.val();
}

double retrieval_accuracy(const Tensor& cm) {
  const int64_t k = cm.extent(0);
  int64_t hits = 0;
  for (int64_t i = 0; i < k; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (cm.at({i, j}) > cm.at({i, best})) best = j;
    }
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace pacl

#include "pacl/model.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

#include "pacl/hash.hpp"

namespace pacl {

namespace {

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back('\n');
    out += words[i];
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, Tokenizer tokenizer, uint64_t seed) {
  Model m;
  m.cfg = cfg;
  m.tokenizer = std::move(tokenizer);
  Rng rng(seed);

  m.vision.cfg = cfg.vision;
  m.vision.init(rng);

  m.text.cfg.vocab_size = m.tokenizer.vocab_size();
  m.text.cfg.context_length = cfg.text_context;
  m.text.cfg.width = cfg.text_width;
  m.text.cfg.depth = cfg.text_depth;
  m.text.cfg.heads = cfg.text_heads;
  m.text.init(rng);

  m.cls_vision_embed.init(cfg.vision.width, cfg.embed_dim, rng);
  m.text_embed.init(cfg.text_width, cfg.embed_dim, rng);
  m.logit_scale = cfg.logit_scale_fixed ? LogitScale::fixed_at(cfg.logit_scale_init)
                                        : LogitScale::learnable(cfg.logit_scale_init);
  return m;
}

void Model::init_pacl_embedder(uint64_t seed) {
  Rng rng(seed ^ 0xa5c1ed5eu);
  const int64_t hidden = cfg.embed_hidden > 0 ? cfg.embed_hidden : cfg.vision.width;
  pacl_embed.init(cfg.vision.width, hidden, cfg.embed_dim, rng);
  has_pacl_embedder = true;
}

std::vector<NamedParam> Model::tower_params() {
  std::vector<NamedParam> out = vision.named_params();
  for (auto& np : text.named_params()) out.push_back(np);
  for (auto& np : cls_vision_embed.named_params()) out.push_back(np);
  for (auto& np : text_embed.named_params()) out.push_back(np);
  return out;
}

std::vector<NamedParam> Model::all_params() {
  auto out = tower_params();
  for (auto& np : logit_scale.named_params()) out.push_back(np);
  if (has_pacl_embedder) {
    for (auto& np : pacl_embed.named_params()) out.push_back(np);
  }
  return out;
}

void Model::freeze_towers() {
  for (auto& np : tower_params()) np.param->trainable = false;
}

Checkpoint Model::to_checkpoint(Dtype dtype) const {
  Checkpoint ckpt;
  auto& self = const_cast<Model&>(*this);  // named_params needs mutable access to take addresses

  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/image_size", cfg.vision.image_size));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/patch_size", cfg.vision.patch_size));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/train_stride", cfg.vision.train_stride));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/vision_width", cfg.vision.width));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/vision_depth", cfg.vision.depth));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/vision_heads", cfg.vision.heads));
  ckpt.push_back(CheckpointEntry::from_scalar_f64("config/mlp_ratio", cfg.vision.mlp_ratio));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/channels", cfg.vision.channels));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/text_context", cfg.text_context));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/text_width", cfg.text_width));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/text_depth", cfg.text_depth));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/text_heads", cfg.text_heads));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/embed_dim", cfg.embed_dim));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/embed_hidden", cfg.embed_hidden));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/pool_normalized", cfg.pool_normalized ? 1 : 0));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/logit_scale_fixed", cfg.logit_scale_fixed ? 1 : 0));
  ckpt.push_back(CheckpointEntry::from_scalar_f64("config/logit_scale_init", cfg.logit_scale_init));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("config/has_pacl_embedder", has_pacl_embedder ? 1 : 0));
  ckpt.push_back(CheckpointEntry::from_string("tokenizer/vocab", join_words(tokenizer.words())));
  ckpt.push_back(CheckpointEntry::from_scalar_i64("tokenizer/context_length", tokenizer.context_length()));

  for (const auto& np : self.all_params()) {
    ckpt.push_back(CheckpointEntry::from_tensor(np.name, np.param->value, dtype));
  }
  return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.vision.image_size = require_entry(ckpt, "config/image_size").scalar_i64();
  cfg.vision.patch_size = require_entry(ckpt, "config/patch_size").scalar_i64();
  cfg.vision.train_stride = require_entry(ckpt, "config/train_stride").scalar_i64();
  cfg.vision.width = require_entry(ckpt, "config/vision_width").scalar_i64();
  cfg.vision.depth = require_entry(ckpt, "config/vision_depth").scalar_i64();
  cfg.vision.heads = require_entry(ckpt, "config/vision_heads").scalar_i64();
  cfg.vision.mlp_ratio = require_entry(ckpt, "config/mlp_ratio").scalar_f64();
  cfg.vision.channels = require_entry(ckpt, "config/channels").scalar_i64();
  cfg.text_context = require_entry(ckpt, "config/text_context").scalar_i64();
  cfg.text_width = require_entry(ckpt, "config/text_width").scalar_i64();
  cfg.text_depth = require_entry(ckpt, "config/text_depth").scalar_i64();
  cfg.text_heads = require_entry(ckpt, "config/text_heads").scalar_i64();
  cfg.embed_dim = require_entry(ckpt, "config/embed_dim").scalar_i64();
  cfg.embed_hidden = require_entry(ckpt, "config/embed_hidden").scalar_i64();
  cfg.pool_normalized = require_entry(ckpt, "config/pool_normalized").scalar_i64() != 0;
  cfg.logit_scale_fixed = require_entry(ckpt, "config/logit_scale_fixed").scalar_i64() != 0;
  cfg.logit_scale_init = require_entry(ckpt, "config/logit_scale_init").scalar_f64();

  const auto vocab = split_lines(require_entry(ckpt, "tokenizer/vocab").to_string_payload());
  const int64_t context = require_entry(ckpt, "tokenizer/context_length").scalar_i64();
  Model m = Model::init(cfg, Tokenizer::from_words(vocab, context), /*seed=*/0);
  if (require_entry(ckpt, "config/has_pacl_embedder").scalar_i64() != 0) {
    m.init_pacl_embedder(0);
  }
  entries_to_params(ckpt, m.all_params());
  // A loaded model is an inference artifact; the trainers re-enable exactly
  // the parameter sets they own.
  for (auto& np : m.all_params()) np.param->trainable = false;
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model, Dtype dtype) {
  save_checkpoint(path, model.to_checkpoint(dtype));
}

Model load_model(const std::filesystem::path& path) { return Model::from_checkpoint(load_checkpoint(path)); }

Checkpoint params_to_entries(const std::vector<NamedParam>& params, Dtype dtype) {
  Checkpoint out;
  out.reserve(params.size());
  for (const auto& np : params) out.push_back(CheckpointEntry::from_tensor(np.name, np.param->value, dtype));
  return out;
}

void entries_to_params(const Checkpoint& ckpt, const std::vector<NamedParam>& params) {
  for (const auto& np : params) {
    const CheckpointEntry& e = require_entry(ckpt, np.name);
    Tensor t = e.to_tensor();
    if (t.shape() != np.param->value.shape()) {
      throw std::runtime_error("checkpoint: entry '" + np.name + "' has shape " + shape_str(t.shape()) +
                               ", expected " + shape_str(np.param->value.shape()));
    }
    np.param->value = std::move(t);
    np.param->zero_grad();
  }
}

std::string params_sha256(const std::vector<NamedParam>& params) {
  std::vector<uint8_t> bytes;
  for (const auto& np : params) {
    bytes.insert(bytes.end(), np.name.begin(), np.name.end());
    for (int64_t e : np.param->value.shape()) {
      for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(static_cast<uint64_t>(e) >> (8 * i)));
    }
    const Tensor& v = np.param->value;
    for (int64_t i = 0; i < v.size(); ++i) {
      const double value = v[i];
      uint64_t bits;
      std::memcpy(&bits, &value, 8);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<uint8_t>(bits >> (8 * b)));
    }
  }
  return sha256_hex(bytes);
}

void quantize_params_f32(const std::vector<NamedParam>& params) {
  for (const auto& np : params) {
    Tensor& v = np.param->value;
    for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(v[i]));
  }
}

}  // namespace pacl

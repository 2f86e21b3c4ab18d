#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pacl/alignment.hpp"
#include "pacl/data.hpp"
#include "pacl/encoders.hpp"
#include "pacl/io.hpp"

namespace pacl {

// Parameter storage width. Computation always runs in doubles; f32 rounds
// parameter storage (and checkpoints) to single precision after updates.
enum class Precision { f32, f64 };

struct ModelConfig {
  VisionEncoderConfig vision;
  int64_t text_context = 16;
  int64_t text_width = 64;
  int64_t text_depth = 2;
  int64_t text_heads = 4;
  int64_t embed_dim = 64;
  int64_t embed_hidden = 0;  // 0: defaults to vision width
  bool pool_normalized = true;
  bool logit_scale_fixed = false;
  double logit_scale_init = 1.0 / 0.07;
};

// The full two-tower bundle plus embedders. has_pacl_embedder distinguishes
// a CLS-pretraining checkpoint from a finished patch-alignment model.
struct Model {
  ModelConfig cfg;
  Tokenizer tokenizer{Tokenizer::from_words({}, 16)};
  VisionEncoder vision;
  TextEncoder text;
  ClsVisionEmbedder cls_vision_embed;
  TextEmbedder text_embed;
  LogitScale logit_scale = LogitScale::learnable();
  VisionEmbedder pacl_embed;
  bool has_pacl_embedder = false;

  static Model init(const ModelConfig& cfg, Tokenizer tokenizer, uint64_t seed);

  // Everything belonging to the pretrained towers (encoders + CLS-pathway
  // embedders); frozen throughout patch-alignment training.
  std::vector<NamedParam> tower_params();
  std::vector<NamedParam> all_params();

  void freeze_towers();
  void init_pacl_embedder(uint64_t seed);

  Checkpoint to_checkpoint(Dtype dtype = Dtype::f64) const;
  static Model from_checkpoint(const Checkpoint& ckpt);
};

void save_model(const std::filesystem::path& path, const Model& model, Dtype dtype = Dtype::f64);
Model load_model(const std::filesystem::path& path);

// ---- named-parameter utilities ----------------------------------------------

Checkpoint params_to_entries(const std::vector<NamedParam>& params, Dtype dtype);
void entries_to_params(const Checkpoint& ckpt, const std::vector<NamedParam>& params);

// SHA-256 over names, shapes and bit-exact f64 payloads; the frozen-tower law
// is asserted on this digest.
std::string params_sha256(const std::vector<NamedParam>& params);

// Rounds values through float storage; used when training at f32 precision.
void quantize_params_f32(const std::vector<NamedParam>& params);

}  // namespace pacl

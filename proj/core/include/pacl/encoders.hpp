#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pacl/autodiff.hpp"
#include "pacl/tensor.hpp"
#include "pacl/util.hpp"

namespace pacl {

// Token grid for a patchifier with patch P and stride S over an H x W image:
// floor((H-P)/S)+1 per side. Throws if the patch exceeds the image.
std::pair<int64_t, int64_t> patch_grid_dims(int64_t h, int64_t w, int64_t patch, int64_t stride);

struct VisionEncoderConfig {
  int64_t image_size = 32;
  int64_t patch_size = 8;
  int64_t train_stride = 8;  // equals patch_size during training
  int64_t width = 64;
  int64_t depth = 2;
  int64_t heads = 4;
  double mlp_ratio = 4.0;
  int64_t channels = 3;

  void validate() const;
  std::pair<int64_t, int64_t> train_grid() const;
  int64_t mlp_hidden() const { return static_cast<int64_t>(mlp_ratio * static_cast<double>(width)); }
};

struct TextEncoderConfig {
  int64_t vocab_size = 0;  // includes pad/start/end ids
  int64_t context_length = 16;
  int64_t width = 64;
  int64_t depth = 2;
  int64_t heads = 4;

  void validate() const;
  int64_t mlp_hidden() const { return 4 * width; }
};

// Pre-LN transformer block parameters, shared between the two towers.
struct TransformerBlock {
  Parameter ln1_g, ln1_b;
  Parameter w_qkv, b_qkv;   // [D, 3D], [3D]
  Parameter w_proj, b_proj; // [D, D], [D]
  Parameter ln2_g, ln2_b;
  Parameter w_fc1, b_fc1;   // [D, Dh], [Dh]
  Parameter w_fc2, b_fc2;   // [Dh, D], [D]

  void init(int64_t width, int64_t hidden, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

// x: [B, T, D]. mask, when present, is an additive [T, T] attention bias.
ad::Value transformer_block_forward(TransformerBlock& blk, const ad::Value& x, int64_t heads,
                                    const Tensor* mask = nullptr);

struct VisionEncoder {
  VisionEncoderConfig cfg;
  Parameter patch_w, patch_b;  // [C*P*P, D], [D]
  Parameter cls_token;         // [D]
  Parameter pos_emb;           // [1 + grid_h*grid_w, D] at train stride
  std::vector<TransformerBlock> blocks;
  Parameter lnf_g, lnf_b;

  void init(Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix = "vision");
  void set_trainable(bool trainable);
};

struct TextEncoder {
  TextEncoderConfig cfg;
  Parameter tok_emb;  // [V, D]
  Parameter pos_emb;  // [L, D]
  std::vector<TransformerBlock> blocks;
  Parameter lnf_g, lnf_b;

  void init(Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix = "text");
  void set_trainable(bool trainable);
};

// CLS row passes through unchanged; grid rows are bilinearly resized from
// old to new grid dims. Used by the inference-time stride trick.
Tensor interpolate_positions(const Tensor& pos, std::pair<int64_t, int64_t> old_grid,
                             std::pair<int64_t, int64_t> new_grid);

// Extracts stride-spaced P x P patches as rows: [B, T, C*P*P].
Tensor unfold(const Tensor& images, int64_t patch, int64_t stride);

struct VisionForwardGraph {
  ad::Value cls;      // [B, D]
  ad::Value patches;  // [B, T, D]
  int64_t grid_h = 0, grid_w = 0;
};

// Batched forward: images [B, C, H, W]. Off-train-stride runs interpolate
// the (frozen) positional table; training at a foreign stride is an error.
VisionForwardGraph vision_forward_graph(VisionEncoder& enc, const Tensor& images, int64_t stride);

struct VisionForwardResult {
  Tensor cls;      // [D]
  Tensor patches;  // [T, D]
  int64_t grid_h = 0, grid_w = 0;
};

// Single-image convenience wrapper around the graph builder.
VisionForwardResult vision_forward(VisionEncoder& enc, const Tensor& image, int64_t stride);

// ids: one padded sequence per batch row. Returns the final-layer
// representation at each sequence's end-token position: [B, D].
ad::Value text_forward_graph(TextEncoder& enc, const std::vector<std::vector<int32_t>>& ids);

Tensor text_forward(TextEncoder& enc, const std::vector<int32_t>& ids);

}  // namespace pacl

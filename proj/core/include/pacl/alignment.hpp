#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pacl/autodiff.hpp"
#include "pacl/tensor.hpp"
#include "pacl/util.hpp"

namespace pacl {

// Residual block mapping patch tokens into the shared embedding space:
// linear2(relu(linear1(t))) + linear_res(t). The only trainable parameters
// during patch-alignment training.
struct VisionEmbedder {
  int64_t in_width = 0, hidden = 0, out_width = 0;
  Parameter w1, b1;  // [Dv, Dh], [Dh]
  Parameter w2, b2;  // [Dh, D], [D]
  Parameter wr, br;  // [Dv, D], [D]

  void init(int64_t d_in, int64_t d_hidden, int64_t d_out, Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix = "embed/patch");
  void set_trainable(bool trainable);
};

// Linear projection of the text CLS representation into the shared space.
struct TextEmbedder {
  int64_t in_width = 0, out_width = 0;
  Parameter w, b;  // [Dt, D], [D]

  void init(int64_t d_in, int64_t d_out, Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix = "embed/text");
  void set_trainable(bool trainable);
};

// Linear projection of the vision CLS token; the vanilla pathway used by
// the CLS-level objective and the pre-alignment probe.
struct ClsVisionEmbedder {
  int64_t in_width = 0, out_width = 0;
  Parameter w, b;  // [Dv, D], [D]

  void init(int64_t d_in, int64_t d_out, Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix = "embed/cls_vision");
  void set_trainable(bool trainable);
};

// Multiplier applied to compatibilities inside the contrastive loss.
// Learnable as exp(log_scale) clamped to max_value, or pinned to a fixed
// constant (fixed:1 recovers the bare objective).
struct LogitScale {
  Parameter log_scale;  // rank-0
  bool fixed = false;
  double fixed_value = 1.0;
  double max_value = 100.0;

  static LogitScale learnable(double initial = 1.0 / 0.07);
  static LogitScale fixed_at(double value);

  double value() const;
  ad::Value graph_value();
  std::vector<NamedParam> named_params(const std::string& prefix = "logit_scale");
};

// ---- plain operations ------------------------------------------------------

Tensor embed_patches(const VisionEmbedder& emb, const Tensor& patches);  // [T,Dv] -> [T,D]
Tensor embed_text(const TextEmbedder& emb, const Tensor& cls);           // [Dt] -> [D]
Tensor embed_cls_vision(const ClsVisionEmbedder& emb, const Tensor& cls);

// Cosine between each (unit-normalised) patch embedding row and the
// unit-normalised text embedding; each entry lies in [-1, 1].
Tensor patch_similarity(const Tensor& pe, const Tensor& te);

// Softmax over tokens of the patch similarities.
Tensor token_attention(const Tensor& s);

// Attention-weighted sum over patch embeddings. With normalize_rows the
// rows are unit-normalised first, so |result| <= 1.
Tensor pooled_vision(const Tensor& pe, const Tensor& a, bool normalize_rows = true);

// The Eqs. 2-4 composition: similarity -> token softmax -> weighted sum ->
// cosine with the text embedding.
double pacl_compatibility(const Tensor& pe, const Tensor& te, bool normalize_rows = true);

// Cosine between the two projected CLS embeddings.
double clip_compatibility(const Tensor& cls_v, const Tensor& cls_t, const ClsVisionEmbedder& ev,
                          const TextEmbedder& et);

struct CompatibilityMatrix {
  Tensor values;  // [k, k], entry (i, j) = compatibility of image i with text j
  double logit_scale = 1.0;
};

// Symmetric InfoNCE: mean over rows and columns of -log softmax at the
// diagonal, averaged; always >= 0 and equals ln k on constant matrices.
double info_nce(const CompatibilityMatrix& cm);

// ln(k) - loss; the quantity the loss lower-bounds.
double mi_lower_bound(double loss, int64_t k);

// ---- graph builders (training path) ----------------------------------------

// patches: [.., T, Dv] -> [.., T, D]; batched over leading dims.
ad::Value embed_patches_graph(VisionEmbedder& emb, const ad::Value& patches);
ad::Value embed_text_graph(TextEmbedder& emb, const ad::Value& cls);        // [B,Dt] -> [B,D]
ad::Value embed_cls_vision_graph(ClsVisionEmbedder& emb, const ad::Value& cls);

// All-pairs compatibility matrix phi_hat[i][j] between every image's patch
// embeddings pe [k,T,D] and every text embedding te [k,D].
ad::Value pacl_compatibility_matrix_graph(const ad::Value& pe, const ad::Value& te, bool normalize_rows = true);

// Cosine matrix between projected CLS embeddings zv, zt: [k,D] x [k,D] -> [k,k].
ad::Value clip_compatibility_matrix_graph(const ad::Value& zv, const ad::Value& zt);

ad::Value info_nce_graph(const ad::Value& cm, const ad::Value& logit_scale);

// ---- gradient verification ---------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int64_t seeds = 0;
};

// Backward-vs-central-difference check of d info_nce / d embedder params
// through the full compatibility composition.
GradCheckReport grad_check_pacl_loss(uint64_t seed, int64_t n_seeds = 5, int64_t k = 4, int64_t tokens = 9,
                                     int64_t dim = 8, double tol = 1e-5);

}  // namespace pacl

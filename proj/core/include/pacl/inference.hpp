#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pacl/grid.hpp"
#include "pacl/model.hpp"
#include "pacl/tensor.hpp"

namespace pacl {

// Per-class text embeddings: each row is the prompt-ensemble mean for one
// class name, unit-normalised.
struct ClassEmbeddingBank {
  std::vector<std::string> names;
  Tensor embeddings;  // [C, D]
  std::vector<std::string> prompts;
};

ClassEmbeddingBank build_class_bank(const std::vector<std::string>& names, const std::vector<std::string>& prompts,
                                    Model& model);

// How the token grid is densified at inference: run the patchifier at a
// smaller stride, or upscale the image and keep the training stride.
enum class DensifyMode { stride, upscale };

// Per-class cosine score planes on the token grid: [C, h, w].
Tensor dense_scores(Model& model, const Tensor& image, const ClassEmbeddingBank& bank, int64_t stride,
                    DensifyMode mode = DensifyMode::stride);

struct SegmentOptions {
  int64_t stride = 4;
  std::optional<double> background_entropy;  // nats; pixels above go to background
  bool softmax_before_upsample = false;
  DensifyMode densify = DensifyMode::stride;
};

struct SegmentationOutput {
  Tensor scores;                    // [C, H, W], per-pixel distribution over classes
  IntGrid mask;                     // argmax class ids (ties -> lowest id)
  std::vector<uint8_t> background;  // H*W flags, set only when the entropy rule is active
  int64_t stride = 0;

  bool is_background(int64_t y, int64_t x) const { return background[static_cast<size_t>(y * mask.w + x)] != 0; }
};

SegmentationOutput segment(Model& model, const Tensor& image, const ClassEmbeddingBank& bank,
                           const SegmentOptions& opts);

// Entropy-threshold background flags for a [C,H,W] score volume.
std::vector<uint8_t> background_flags(const Tensor& scores, double threshold);

// Mask with background/ignore pixels replaced by 255, ready for PGM output.
IntGrid mask_with_background(const SegmentationOutput& out);

enum class ClassifyMode { pacl, clip };

struct ClassifyResult {
  int64_t class_id = 0;
  Tensor scores;  // [C] softmax over compatibilities
};

ClassifyResult zeroshot_classify(Model& model, const Tensor& image, const ClassEmbeddingBank& bank,
                                 ClassifyMode mode);

}  // namespace pacl

#pragma once

#include <cstdint>
#include <vector>

#include "pacl/data.hpp"
#include "pacl/grid.hpp"
#include "pacl/inference.hpp"
#include "pacl/model.hpp"

namespace pacl {

// Modal pixel label per patch square (ties -> lowest id). A patch whose
// ignore pixels reach 50% is labeled ignore.
IntGrid majority_vote_labels(const IntGrid& labelmap, int64_t patch, int64_t stride, int32_t ignore_id = kIgnoreId);

enum class ProbeMode { pre, post };

// Argmax class per row by cosine against the bank (rows are normalised
// internally; ties break to the lowest id). The classification rule shared
// by the probe and per-patch prediction.
std::vector<int64_t> classify_rows(const Tensor& rows, const ClassEmbeddingBank& bank);

// Patch-level zero-shot classification accuracy against majority-vote
// labels. `pre` classifies patch tokens through the CLS-pathway embedder;
// `post` uses the patch-alignment similarity.
double patch_alignment_accuracy(Model& model, const Dataset& data, const ClassEmbeddingBank& bank, ProbeMode mode,
                                int64_t stride = 0 /* 0: training stride */);

struct ROCResult {
  std::vector<double> thresholds;  // descending
  std::vector<double> tpr, fpr;    // same length as thresholds, plus implicit (0,0) start
  double auroc = 0.0;
};

// Threshold sweep over the scores; AUROC by trapezoid (ties handled as in
// the rank statistic).
ROCResult roc_from_scores(const std::vector<double>& scores, const std::vector<int>& targets);

// Samples patch pairs (within and across images), scores them by encoder
// patch-token cosine, and labels them by majority-vote label equality.
ROCResult coherence_auroc(Model& model, const Dataset& data, int64_t n_pairs, uint64_t seed);

struct MiouResult {
  std::vector<double> per_class_iou;   // meaningful where class_present
  std::vector<bool> class_present;     // class seen in prediction or ground truth
  double miou = 0.0;
};

// Intersection-over-union accumulated over the dataset; ground-truth ignore
// pixels are excluded, classes absent from both sides drop out of the mean.
MiouResult miou(const std::vector<IntGrid>& pred, const std::vector<IntGrid>& gt, int64_t num_classes,
                int32_t ignore_id = kIgnoreId);

}  // namespace pacl

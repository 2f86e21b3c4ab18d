#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pacl/data.hpp"
#include "pacl/model.hpp"

namespace pacl {

struct TrainConfig {
  int64_t batch_size = 64;  // desk-scale default; the reference recipe used 4096
  int64_t epochs = 10;
  double lr_init = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.2;
  uint64_t seed = 0;
  Precision precision = Precision::f32;
  bool train_logit_scale = true;
  bool prompt_augment = true;  // caption augmentation for the patch-alignment phase
  int threads = 1;
};

// lr_init * (1 + cos(pi * step / total)) / 2, clamped at the endpoint.
double cosine_lr(int64_t step, int64_t total, double lr_init);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.2;
};

// Decoupled-weight-decay Adam with bias correction. Holds first/second
// moments only for the trainable parameters it was constructed with; a
// non-trainable parameter is never touched.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

  void zero_grad();
  void step(double lr);      // throws on non-finite gradients
  void quantize_f32();       // round moments to float storage
  int64_t step_count() const { return t_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

struct HistoryEntry {
  int64_t step;
  double loss;
  double lr;
};
using History = std::vector<HistoryEntry>;

std::string history_csv(const History& history);

// Phase A: trains both towers, the CLS embedders and the logit scale with
// the CLS-cosine compatibility, standing in for a pretrained two-tower
// model. The model is left trainable; callers freeze before phase B.
History pretrain_clip(Model& model, const Dataset& data, const TrainConfig& cfg);

// Phase B: freezes the towers, then trains only the patch embedder (and
// optionally the logit scale) with the patch-aligned compatibility.
// Tower features are precomputed once since nothing behind them changes.
History train_pacl(Model& model, const Dataset& data, const TrainConfig& cfg);

// Plain [n,n] compatibility matrix over the listed pairs, for evaluation:
// entry (i,j) scores image i against caption j. pacl_mode selects the
// patch-alignment pathway instead of the CLS pathway.
Tensor eval_compatibility_matrix(Model& model, const Dataset& data, const std::vector<int64_t>& indices,
                                 bool pacl_mode);

// Fraction of rows whose argmax sits on the diagonal.
double retrieval_accuracy(const Tensor& cm);

}  // namespace pacl

#include "pacl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "pacl/alignment.hpp"
#include "pacl/encoders.hpp"

namespace pacl {

IntGrid majority_vote_labels(const IntGrid& labelmap, int64_t patch, int64_t stride, int32_t ignore_id) {
  const auto [gh, gw] = patch_grid_dims(labelmap.h, labelmap.w, patch, stride);
  IntGrid grid(gh, gw, ignore_id);
  for (int64_t gy = 0; gy < gh; ++gy) {
    for (int64_t gx = 0; gx < gw; ++gx) {
      std::map<int32_t, int64_t> counts;
      int64_t ignored = 0;
      for (int64_t py = 0; py < patch; ++py) {
        for (int64_t px = 0; px < patch; ++px) {
          const int32_t label = labelmap.at(gy * stride + py, gx * stride + px);
          if (label == ignore_id) {
            ++ignored;
          } else {
            ++counts[label];
          }
        }
      }
      if (2 * ignored >= patch * patch || counts.empty()) continue;  // stays ignore
      int32_t best = -1;
      int64_t best_count = 0;
      for (const auto& [label, count] : counts) {  // map order resolves ties by lowest id
        if (count > best_count) {
          best = label;
          best_count = count;
        }
      }
      grid.at(gy, gx) = best;
    }
  }
  return grid;
}

std::vector<int64_t> classify_rows(const Tensor& rows, const ClassEmbeddingBank& bank) {
  const int64_t c = bank.embeddings.extent(0);
  const int64_t d = bank.embeddings.extent(1);
  if (rows.rank() != 2 || rows.extent(1) != d) {
    throw std::invalid_argument("classify_rows: rows " + shape_str(rows.shape()) + " do not match bank width " +
                                std::to_string(d));
  }
  const Tensor pen = l2_normalize_rows(rows);
  std::vector<int64_t> out(static_cast<size_t>(rows.extent(0)));
  for (int64_t t = 0; t < rows.extent(0); ++t) {
    int64_t best = 0;
    double best_score = -2.0;
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) s += pen[t * d + j] * bank.embeddings.at({ci, j});
      if (s > best_score) {
        best_score = s;
        best = ci;
      }
    }
    out[static_cast<size_t>(t)] = best;
  }
  return out;
}

double patch_alignment_accuracy(Model& model, const Dataset& data, const ClassEmbeddingBank& bank, ProbeMode mode,
                                int64_t stride) {
  if (mode == ProbeMode::post && !model.has_pacl_embedder) {
    throw std::invalid_argument("patch_alignment_accuracy: post mode needs a trained patch embedder");
  }
  if (stride == 0) stride = model.cfg.vision.train_stride;
  const int64_t patch = model.cfg.vision.patch_size;
  const int64_t c = bank.embeddings.extent(0);
  const int64_t d = bank.embeddings.extent(1);

  int64_t correct = 0, total = 0;
  for (const auto& pair : data.pairs) {
    if (pair.labelmap.size() == 0) continue;
    const IntGrid labels = majority_vote_labels(pair.labelmap, patch, stride);
    const auto vf = vision_forward(model.vision, pair.image, stride);

    Tensor pe = mode == ProbeMode::post ? embed_patches(model.pacl_embed, vf.patches) : [&] {
      // CLS-pathway projection applied to every patch token.
      Tensor out = matmul(vf.patches, model.cls_vision_embed.w.value);
      for (int64_t r = 0; r < out.extent(0); ++r) {
        for (int64_t j = 0; j < d; ++j) out.at({r, j}) += model.cls_vision_embed.b.value[j];
      }
      return out;
    }();
    const auto predicted = classify_rows(pe, bank);

    for (int64_t t = 0; t < vf.grid_h * vf.grid_w; ++t) {
      const int32_t target = labels.v[static_cast<size_t>(t)];
      if (target == kIgnoreId) continue;
      if (target < 0 || target >= c) continue;  // label outside the evaluated class set
      correct += predicted[static_cast<size_t>(t)] == target ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw std::runtime_error("patch_alignment_accuracy: dataset has no non-ignore patches");
  return static_cast<double>(correct) / static_cast<double>(total);
}

ROCResult roc_from_scores(const std::vector<double>& scores, const std::vector<int>& targets) {
  if (scores.size() != targets.size() || scores.empty()) {
    throw std::invalid_argument("roc_from_scores: need equally many scores and targets");
  }
  int64_t pos = 0, neg = 0;
  for (int t : targets) (t != 0 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_from_scores: need both positive and negative targets");

  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  ROCResult roc;
  int64_t tp = 0, fp = 0;
  double prev_fpr = 0.0, prev_tpr = 0.0, area = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    // Consume the whole tie group so ties contribute a single ROC point.
    while (i < order.size() && scores[order[i]] == threshold) {
      (targets[order[i]] != 0 ? tp : fp) += 1;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    area += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
    roc.thresholds.push_back(threshold);
    roc.tpr.push_back(tpr);
    roc.fpr.push_back(fpr);
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  roc.auroc = area;
  return roc;
}

ROCResult coherence_auroc(Model& model, const Dataset& data, int64_t n_pairs, uint64_t seed) {
  if (n_pairs < 100) throw std::invalid_argument("coherence_auroc: need at least 100 pairs");
  const int64_t patch = model.cfg.vision.patch_size;
  const int64_t stride = model.cfg.vision.train_stride;
  const int64_t dv = model.cfg.vision.width;

  // Pool of (representation row, label) over all non-ignore patches.
  std::vector<Tensor> reps;
  std::vector<int32_t> labels;
  for (const auto& pair : data.pairs) {
    if (pair.labelmap.size() == 0) continue;
    const IntGrid grid = majority_vote_labels(pair.labelmap, patch, stride);
    const auto vf = vision_forward(model.vision, pair.image, stride);
    const Tensor pen = l2_normalize_rows(vf.patches);
    for (int64_t t = 0; t < grid.size(); ++t) {
      const int32_t label = grid.v[static_cast<size_t>(t)];
      if (label == kIgnoreId) continue;
      reps.emplace_back(Shape{dv}, std::vector<double>(pen.data() + t * dv, pen.data() + (t + 1) * dv));
      labels.push_back(label);
    }
  }
  if (reps.size() < 2) throw std::runtime_error("coherence_auroc: fewer than two labeled patches in the dataset");

  Rng rng(seed);
  std::vector<double> scores;
  std::vector<int> targets;
  std::set<int32_t> seen;
  scores.reserve(static_cast<size_t>(n_pairs));
  for (int64_t p = 0; p < n_pairs; ++p) {
    const auto i = static_cast<size_t>(rng.randint(0, static_cast<int64_t>(reps.size()) - 1));
    size_t j = i;
    while (j == i) j = static_cast<size_t>(rng.randint(0, static_cast<int64_t>(reps.size()) - 1));
    scores.push_back(dot(reps[i], reps[j]));
    targets.push_back(labels[i] == labels[j] ? 1 : 0);
    seen.insert(labels[i]);
    seen.insert(labels[j]);
  }
  if (seen.size() < 2) throw std::runtime_error("coherence_auroc: sampled patches cover fewer than 2 labels");
  return roc_from_scores(scores, targets);
}

MiouResult miou(const std::vector<IntGrid>& pred, const std::vector<IntGrid>& gt, int64_t num_classes,
                int32_t ignore_id) {
  if (pred.size() != gt.size()) throw std::invalid_argument("miou: prediction/ground-truth counts differ");
  std::vector<int64_t> inter(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> uni(static_cast<size_t>(num_classes), 0);
  for (size_t img = 0; img < pred.size(); ++img) {
    if (pred[img].h != gt[img].h || pred[img].w != gt[img].w) {
      throw std::invalid_argument("miou: shape mismatch at image " + std::to_string(img));
    }
    for (int64_t i = 0; i < gt[img].size(); ++i) {
      const int32_t g = gt[img].v[static_cast<size_t>(i)];
      if (g == ignore_id) continue;
      const int32_t p = pred[img].v[static_cast<size_t>(i)];
      if (g == p) {
        ++inter[static_cast<size_t>(g)];
        ++uni[static_cast<size_t>(g)];
      } else {
        if (g >= 0 && g < num_classes) ++uni[static_cast<size_t>(g)];
        if (p >= 0 && p < num_classes) ++uni[static_cast<size_t>(p)];
      }
    }
  }
  MiouResult out;
  out.per_class_iou.resize(static_cast<size_t>(num_classes), 0.0);
  out.class_present.resize(static_cast<size_t>(num_classes), false);
  double sum = 0.0;
  int64_t present = 0;
  for (int64_t c = 0; c < num_classes; ++c) {
    if (uni[static_cast<size_t>(c)] == 0) continue;  // absent from both sides
    out.class_present[static_cast<size_t>(c)] = true;
    out.per_class_iou[static_cast<size_t>(c)] =
        static_cast<double>(inter[static_cast<size_t>(c)]) / static_cast<double>(uni[static_cast<size_t>(c)]);
    sum += out.per_class_iou[static_cast<size_t>(c)];
    ++present;
  }
  out.miou = present > 0 ? sum / static_cast<double>(present) : 0.0;
  return out;
}

}  // namespace pacl

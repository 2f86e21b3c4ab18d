#include "pacl/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pacl/alignment.hpp"
#include "pacl/data.hpp"

namespace pacl {

namespace {

// Image upscaled so that tiling at the training stride yields a denser
// grid comparable to running the patchifier at `stride`.
Tensor upscale_image(const Tensor& image, int64_t patch, int64_t stride) {
  const int64_t h = image.extent(1), w = image.extent(2);
  const double factor = static_cast<double>(patch) / static_cast<double>(stride);
  const auto nh = static_cast<int64_t>(std::llround(static_cast<double>(h) * factor));
  const auto nw = static_cast<int64_t>(std::llround(static_cast<double>(w) * factor));
  return bilinear_resize(image, nh, nw);
}

Tensor per_pixel_softmax(const Tensor& scores) {
  const int64_t c = scores.extent(0), h = scores.extent(1), w = scores.extent(2);
  Tensor out(scores.shape());
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double mx = scores.at({0, y, x});
      for (int64_t k = 1; k < c; ++k) mx = std::max(mx, scores.at({k, y, x}));
      double sum = 0.0;
      for (int64_t k = 0; k < c; ++k) {
        const double e = std::exp(scores.at({k, y, x}) - mx);
        out.at({k, y, x}) = e;
        sum += e;
      }
      for (int64_t k = 0; k < c; ++k) out.at({k, y, x}) /= sum;
    }
  }
  return out;
}

}  // namespace

ClassEmbeddingBank build_class_bank(const std::vector<std::string>& names, const std::vector<std::string>& prompts,
                                    Model& model) {
  if (names.empty()) throw std::invalid_argument("build_class_bank: no class names");
  if (prompts.empty()) throw std::invalid_argument("build_class_bank: prompt set is empty");
  for (const auto& p : prompts) {
    if (p.find("()") == std::string::npos) {
      throw std::invalid_argument("build_class_bank: prompt '" + p + "' lacks the () placeholder");
    }
  }
  for (size_t i = 0; i < names.size(); ++i) {
    for (size_t j = i + 1; j < names.size(); ++j) {
      if (names[i] == names[j]) throw std::invalid_argument("build_class_bank: duplicate class '" + names[i] + "'");
    }
  }

  // Canonical prompt order makes the ensemble mean bit-exactly invariant
  // to permutations of the prompt list.
  std::vector<std::string> ordered = prompts;
  std::sort(ordered.begin(), ordered.end());

  const int64_t c = static_cast<int64_t>(names.size());
  const int64_t d = model.cfg.embed_dim;
  Tensor bank({c, d});
  for (int64_t ci = 0; ci < c; ++ci) {
    const auto& name = names[static_cast<size_t>(ci)];
    if (!model.tokenizer.covers(name)) {
      throw std::invalid_argument("build_class_bank: class '" + name + "' contains words outside the vocabulary");
    }
    std::vector<std::vector<int32_t>> seqs;
    for (const auto& prompt : ordered) seqs.push_back(model.tokenizer.encode(fill_prompt(prompt, name)));
    auto cls = text_forward_graph(model.text, seqs);                  // [P, Dt]
    auto emb = embed_text_graph(model.text_embed, cls);               // [P, D]
    const Tensor& e = emb.val();
    Tensor mean({d});
    for (int64_t p = 0; p < static_cast<int64_t>(prompts.size()); ++p) {
      for (int64_t j = 0; j < d; ++j) mean[j] += e[p * d + j];
    }
    for (int64_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(prompts.size());
    const Tensor unit = l2_normalize(mean);
    for (int64_t j = 0; j < d; ++j) bank.at({ci, j}) = unit[j];
  }

  ClassEmbeddingBank out;
  out.names = names;
  out.embeddings = std::move(bank);
  out.prompts = prompts;
  return out;
}

Tensor dense_scores(Model& model, const Tensor& image, const ClassEmbeddingBank& bank, int64_t stride,
                    DensifyMode mode) {
  if (!model.has_pacl_embedder) throw std::invalid_argument("dense_scores: model has no patch embedder");
  if (stride < 1) throw std::invalid_argument("dense_scores: stride must be >= 1");

  VisionForwardResult vf;
  if (mode == DensifyMode::stride || stride == model.cfg.vision.patch_size) {
    vf = vision_forward(model.vision, image, stride);
  } else {
    vf = vision_forward(model.vision, upscale_image(image, model.cfg.vision.patch_size, stride),
                        model.cfg.vision.patch_size);
  }

  const Tensor pe = embed_patches(model.pacl_embed, vf.patches);
  const Tensor pen = l2_normalize_rows(pe);
  const Tensor sim = matmul(pen, [&] {
    // bank rows are unit; transpose for [T,C]
    const int64_t c = bank.embeddings.extent(0), d = bank.embeddings.extent(1);
    Tensor bt({d, c});
    for (int64_t i = 0; i < c; ++i) {
      for (int64_t j = 0; j < d; ++j) bt.at({j, i}) = bank.embeddings.at({i, j});
    }
    return bt;
  }());

  const int64_t c = bank.embeddings.extent(0);
  Tensor out({c, vf.grid_h, vf.grid_w});
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t i = 0; i < vf.grid_h * vf.grid_w; ++i) {
      out[ci * vf.grid_h * vf.grid_w + i] = sim[i * c + ci];
    }
  }
  return out;
}

std::vector<uint8_t> background_flags(const Tensor& scores, double threshold) {
  const int64_t c = scores.extent(0), h = scores.extent(1), w = scores.extent(2);
  std::vector<uint8_t> flags(static_cast<size_t>(h * w), 0);
  Tensor p({c});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t k = 0; k < c; ++k) p[k] = scores.at({k, y, x});
      flags[static_cast<size_t>(y * w + x)] = entropy(p) > threshold ? 1 : 0;
    }
  }
  return flags;
}

SegmentationOutput segment(Model& model, const Tensor& image, const ClassEmbeddingBank& bank,
                           const SegmentOptions& opts) {
  const int64_t h = image.extent(1), w = image.extent(2);
  const Tensor raw = dense_scores(model, image, bank, opts.stride, opts.densify);

  Tensor probs;
  if (opts.softmax_before_upsample) {
    probs = bilinear_resize(per_pixel_softmax(raw), h, w);  // convex per pixel, stays normalised
  } else {
    probs = per_pixel_softmax(bilinear_resize(raw, h, w));
  }

  SegmentationOutput out;
  out.stride = opts.stride;
  out.scores = std::move(probs);
  const int64_t c = out.scores.extent(0);
  out.mask = IntGrid(h, w);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      int64_t best = 0;
      for (int64_t k = 1; k < c; ++k) {
        if (out.scores.at({k, y, x}) > out.scores.at({best, y, x})) best = k;
      }
      out.mask.at(y, x) = static_cast<int32_t>(best);
    }
  }
  if (opts.background_entropy.has_value()) {
    out.background = background_flags(out.scores, *opts.background_entropy);
  } else {
    out.background.assign(static_cast<size_t>(h * w), 0);
  }
  return out;
}

IntGrid mask_with_background(const SegmentationOutput& out) {
  IntGrid grid = out.mask;
  for (int64_t i = 0; i < grid.size(); ++i) {
    if (out.background[static_cast<size_t>(i)]) grid.v[static_cast<size_t>(i)] = kIgnoreId;
  }
  return grid;
}

ClassifyResult zeroshot_classify(Model& model, const Tensor& image, const ClassEmbeddingBank& bank,
                                 ClassifyMode mode) {
  const int64_t c = bank.embeddings.extent(0);
  const int64_t d = bank.embeddings.extent(1);
  Tensor compat({c});
  const auto vf = vision_forward(model.vision, image, model.cfg.vision.train_stride);
  if (mode == ClassifyMode::pacl) {
    if (!model.has_pacl_embedder) throw std::invalid_argument("zeroshot_classify: model has no patch embedder");
    const Tensor pe = embed_patches(model.pacl_embed, vf.patches);
    for (int64_t ci = 0; ci < c; ++ci) {
      Tensor row({d}, std::vector<double>(bank.embeddings.data() + ci * d, bank.embeddings.data() + (ci + 1) * d));
      compat[ci] = pacl_compatibility(pe, row, model.cfg.pool_normalized);
    }
  } else {
    const Tensor zv = l2_normalize(embed_cls_vision(model.cls_vision_embed, vf.cls));
    for (int64_t ci = 0; ci < c; ++ci) {
      Tensor row({d}, std::vector<double>(bank.embeddings.data() + ci * d, bank.embeddings.data() + (ci + 1) * d));
      compat[ci] = dot(zv, row);  // bank rows are already unit-normalised
    }
  }
  ClassifyResult out;
  out.scores = softmax(compat, 0);
  out.class_id = 0;
  for (int64_t ci = 1; ci < c; ++ci) {
    if (out.scores[ci] > out.scores[out.class_id]) out.class_id = ci;
  }
  return out;
}

}  // namespace pacl

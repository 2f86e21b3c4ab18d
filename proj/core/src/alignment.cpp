#include "pacl/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pacl {

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor linear(const Tensor& x, const Parameter& w, const Parameter& b) {
  Tensor out = matmul(x, w.value);
  const int64_t d = out.extent(out.rank() - 1);
  const int64_t rows = out.size() / d;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < d; ++j) out[r * d + j] += b.value[j];
  }
  return out;
}

Tensor as_row_matrix(const Tensor& v) {
  return Tensor({1, v.size()}, std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

void VisionEmbedder::init(int64_t d_in, int64_t d_hidden, int64_t d_out, Rng& rng) {
  in_width = d_in;
  hidden = d_hidden;
  out_width = d_out;
  w1 = Parameter(normal_tensor({d_in, d_hidden}, rng, 0.02));
  b1 = Parameter(Tensor::zeros({d_hidden}));
  w2 = Parameter(normal_tensor({d_hidden, d_out}, rng, 0.02));
  b2 = Parameter(Tensor::zeros({d_out}));
  wr = Parameter(normal_tensor({d_in, d_out}, rng, 0.02));
  br = Parameter(Tensor::zeros({d_out}));
}

std::vector<NamedParam> VisionEmbedder::named_params(const std::string& prefix) {
  return {{prefix + "/w1", &w1}, {prefix + "/b1", &b1}, {prefix + "/w2", &w2},
          {prefix + "/b2", &b2}, {prefix + "/wr", &wr}, {prefix + "/br", &br}};
}

void VisionEmbedder::set_trainable(bool trainable) {
  for (auto& np : named_params()) np.param->trainable = trainable;
}

void TextEmbedder::init(int64_t d_in, int64_t d_out, Rng& rng) {
  in_width = d_in;
  out_width = d_out;
  w = Parameter(normal_tensor({d_in, d_out}, rng, 0.02));
  b = Parameter(Tensor::zeros({d_out}));
}

std::vector<NamedParam> TextEmbedder::named_params(const std::string& prefix) {
  return {{prefix + "/w", &w}, {prefix + "/b", &b}};
}

void TextEmbedder::set_trainable(bool trainable) {
  w.trainable = trainable;
  b.trainable = trainable;
}

void ClsVisionEmbedder::init(int64_t d_in, int64_t d_out, Rng& rng) {
  in_width = d_in;
  out_width = d_out;
  w = Parameter(normal_tensor({d_in, d_out}, rng, 0.02));
  b = Parameter(Tensor::zeros({d_out}));
}

std::vector<NamedParam> ClsVisionEmbedder::named_params(const std::string& prefix) {
  return {{prefix + "/w", &w}, {prefix + "/b", &b}};
}

void ClsVisionEmbedder::set_trainable(bool trainable) {
  w.trainable = trainable;
  b.trainable = trainable;
}

LogitScale LogitScale::learnable(double initial) {
  LogitScale s;
  s.log_scale = Parameter(Tensor::scalar(std::log(initial)));
  return s;
}

LogitScale LogitScale::fixed_at(double value) {
  LogitScale s;
  s.fixed = true;
  s.fixed_value = value;
  s.log_scale = Parameter(Tensor::scalar(std::log(value)), /*train=*/false);
  return s;
}

double LogitScale::value() const {
  if (fixed) return fixed_value;
  return std::min(std::exp(log_scale.value.item()), max_value);
}

ad::Value LogitScale::graph_value() {
  if (fixed) return ad::constant(Tensor::scalar(fixed_value));
  return ad::clamp_max(ad::exp(ad::leaf(log_scale)), max_value);
}

std::vector<NamedParam> LogitScale::named_params(const std::string& prefix) {
  return {{prefix + "/log", &log_scale}};
}

Tensor embed_patches(const VisionEmbedder& emb, const Tensor& patches) {
  if (patches.rank() != 2 || patches.extent(1) != emb.in_width) {
    throw std::invalid_argument("embed_patches: expected [Tx" + std::to_string(emb.in_width) + "], got " +
                                shape_str(patches.shape()));
  }
  Tensor h = linear(patches, emb.w1, emb.b1);
  for (int64_t i = 0; i < h.size(); ++i) h[i] = std::max(h[i], 0.0);
  Tensor main = linear(h, emb.w2, emb.b2);
  const Tensor res = linear(patches, emb.wr, emb.br);
  for (int64_t i = 0; i < main.size(); ++i) main[i] += res[i];
  return main;
}

Tensor embed_text(const TextEmbedder& emb, const Tensor& cls) {
  if (cls.size() != emb.in_width) {
    throw std::invalid_argument("embed_text: width mismatch " + shape_str(cls.shape()));
  }
  Tensor out = linear(as_row_matrix(cls), emb.w, emb.b);
  return Tensor({emb.out_width}, std::vector<double>(out.data(), out.data() + out.size()));
}

Tensor embed_cls_vision(const ClsVisionEmbedder& emb, const Tensor& cls) {
  if (cls.size() != emb.in_width) {
    throw std::invalid_argument("embed_cls_vision: width mismatch " + shape_str(cls.shape()));
  }
  Tensor out = linear(as_row_matrix(cls), emb.w, emb.b);
  return Tensor({emb.out_width}, std::vector<double>(out.data(), out.data() + out.size()));
}

Tensor patch_similarity(const Tensor& pe, const Tensor& te) {
  if (pe.rank() != 2 || te.rank() != 1 || pe.extent(1) != te.size()) {
    throw std::invalid_argument("patch_similarity: widths differ, " + shape_str(pe.shape()) + " vs " +
                                shape_str(te.shape()));
  }
  const Tensor pen = l2_normalize_rows(pe);
  const Tensor ten = l2_normalize(te);
  const int64_t t = pe.extent(0), d = te.size();
  Tensor s({t});
  for (int64_t i = 0; i < t; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += pen[i * d + j] * ten[j];
    s[i] = acc;
  }
  return s;
}

Tensor token_attention(const Tensor& s) {
  if (s.rank() != 1) throw std::invalid_argument("token_attention: expected [T], got " + shape_str(s.shape()));
  return softmax(s, 0);
}

Tensor pooled_vision(const Tensor& pe, const Tensor& a, bool normalize_rows) {
  if (pe.rank() != 2 || a.rank() != 1 || pe.extent(0) != a.size()) {
    throw std::invalid_argument("pooled_vision: token counts differ, " + shape_str(pe.shape()) + " vs " +
                                shape_str(a.shape()));
  }
  const Tensor rows = normalize_rows ? l2_normalize_rows(pe) : pe;
  const int64_t t = pe.extent(0), d = pe.extent(1);
  Tensor v({d});
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t j = 0; j < d; ++j) v[j] += a[i] * rows[i * d + j];
  }
  return v;
}

double pacl_compatibility(const Tensor& pe, const Tensor& te, bool normalize_rows) {
  const Tensor s = patch_similarity(pe, te);
  const Tensor a = token_attention(s);
  const Tensor v = pooled_vision(pe, a, normalize_rows);
  return dot(l2_normalize(v), l2_normalize(te));
}

double clip_compatibility(const Tensor& cls_v, const Tensor& cls_t, const ClsVisionEmbedder& ev,
                          const TextEmbedder& et) {
  const Tensor zv = embed_cls_vision(ev, cls_v);
  const Tensor zt = embed_text(et, cls_t);
  return dot(l2_normalize(zv), l2_normalize(zt));
}

double info_nce(const CompatibilityMatrix& cm) {
  if (cm.values.rank() != 2 || cm.values.extent(0) != cm.values.extent(1)) {
    throw std::invalid_argument("info_nce: expected square matrix, got " + shape_str(cm.values.shape()));
  }
  const int64_t k = cm.values.extent(0);
  if (k < 2) throw std::invalid_argument("info_nce: needs k >= 2 pairs, got " + std::to_string(k));
  if (cm.logit_scale <= 0.0) throw std::invalid_argument("info_nce: logit scale must be positive");

  auto lse = [&](bool rows, int64_t idx) {
    double mx = -1e300;
    for (int64_t j = 0; j < k; ++j) {
      const double z = cm.logit_scale * (rows ? cm.values.at({idx, j}) : cm.values.at({j, idx}));
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double z = cm.logit_scale * (rows ? cm.values.at({idx, j}) : cm.values.at({j, idx}));
      sum += std::exp(z - mx);
    }
    return mx + std::log(sum);
  };

  double loss_rows = 0.0, loss_cols = 0.0;
  for (int64_t i = 0; i < k; ++i) {
    const double diag = cm.logit_scale * cm.values.at({i, i});
    loss_rows += lse(true, i) - diag;
    loss_cols += lse(false, i) - diag;
  }
  return 0.5 * (loss_rows + loss_cols) / static_cast<double>(k);
}

double mi_lower_bound(double loss, int64_t k) {
  return std::log(static_cast<double>(k)) - loss;
}

ad::Value embed_patches_graph(VisionEmbedder& emb, const ad::Value& patches) {
  auto h = ad::relu(ad::add(ad::matmul(patches, ad::leaf(emb.w1)), ad::leaf(emb.b1)));
  auto main = ad::add(ad::matmul(h, ad::leaf(emb.w2)), ad::leaf(emb.b2));
  auto res = ad::add(ad::matmul(patches, ad::leaf(emb.wr)), ad::leaf(emb.br));
  return ad::add(main, res);
}

ad::Value embed_text_graph(TextEmbedder& emb, const ad::Value& cls) {
  return ad::add(ad::matmul(cls, ad::leaf(emb.w)), ad::leaf(emb.b));
}

ad::Value embed_cls_vision_graph(ClsVisionEmbedder& emb, const ad::Value& cls) {
  return ad::add(ad::matmul(cls, ad::leaf(emb.w)), ad::leaf(emb.b));
}

ad::Value pacl_compatibility_matrix_graph(const ad::Value& pe, const ad::Value& te, bool normalize_rows) {
  if (pe.shape().size() != 3 || te.shape().size() != 2 || pe.shape()[0] != te.shape()[0] ||
      pe.shape()[2] != te.shape()[1]) {
    throw std::invalid_argument("pacl_compatibility_matrix: shapes " + shape_str(pe.shape()) + " and " +
                                shape_str(te.shape()) + " do not agree");
  }
  auto sim_rows = ad::l2norm_last(pe);                            // [k,T,D], cosine basis
  auto rows = normalize_rows ? sim_rows : pe;                     // pooling basis
  auto ten = ad::l2norm_last(te);                                 // [k,D]
  auto s = ad::matmul(sim_rows, ten, /*trans_b=*/true);           // [k,T,k]: s[i,t,j]
  auto a = ad::softmax_last(ad::permute(s, {0, 2, 1}));           // [k,k,T]: attention over tokens
  auto pooled = ad::matmul(a, rows);                              // [k,k,D]: pooled vector per (i,j)
  auto pn = ad::l2norm_last(pooled);
  return ad::sum_last(ad::mul(pn, ten));                          // [k,k]
}

ad::Value clip_compatibility_matrix_graph(const ad::Value& zv, const ad::Value& zt) {
  return ad::matmul(ad::l2norm_last(zv), ad::l2norm_last(zt), /*trans_b=*/true);
}

ad::Value info_nce_graph(const ad::Value& cm, const ad::Value& logit_scale) {
  const int64_t k = cm.shape()[0];
  if (cm.shape().size() != 2 || cm.shape()[1] != k) {
    throw std::invalid_argument("info_nce_graph: expected square matrix, got " + shape_str(cm.shape()));
  }
  if (k < 2) throw std::invalid_argument("info_nce_graph: needs k >= 2 pairs");
  auto logits = ad::mul(cm, logit_scale);
  auto diag = ad::take_diag(logits);
  auto loss_rows = ad::mean_all(ad::sub(ad::logsumexp_last(logits), diag));
  auto loss_cols = ad::mean_all(ad::sub(ad::logsumexp_last(ad::permute(logits, {1, 0})), diag));
  return ad::scale(ad::add(loss_rows, loss_cols), 0.5);
}

namespace {

// Central differences are only valid away from the rectifier kink: a
// pre-activation within eps of zero would make the two-sided difference
// straddle the non-differentiable point. A 1e-5 probe with unit-bounded
// inputs moves any pre-activation by at most 1e-5, so a 1e-4 clearance
// keeps every probe on one side of the kink.
constexpr double kKinkClearance = 1e-4;

double min_preactivation_magnitude(const VisionEmbedder& emb, const Tensor& patch_tokens) {
  const int64_t rows = patch_tokens.size() / emb.in_width;
  double lo = 1e300;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < emb.hidden; ++j) {
      double h = emb.b1.value[j];
      for (int64_t i = 0; i < emb.in_width; ++i) {
        h += patch_tokens[r * emb.in_width + i] * emb.w1.value.at({i, j});
      }
      lo = std::min(lo, std::abs(h));
    }
  }
  return lo;
}

}  // namespace

GradCheckReport grad_check_pacl_loss(uint64_t seed, int64_t n_seeds, int64_t k, int64_t tokens, int64_t dim,
                                     double tol) {
  GradCheckReport report;
  report.seeds = n_seeds;
  for (int64_t s = 0; s < n_seeds; ++s) {
    uint64_t sub_seed = seed + static_cast<uint64_t>(s) * 7919;
    VisionEmbedder emb;
    Tensor patch_tokens({k, tokens, dim});
    Tensor text_embeds({k, dim});
    for (int attempt = 0;; ++attempt) {
      Rng rng(sub_seed);
      emb = VisionEmbedder{};
      emb.init(dim, dim, dim, rng);
      for (int64_t i = 0; i < patch_tokens.size(); ++i) patch_tokens[i] = rng.uniform(-1.0, 1.0);
      for (int64_t i = 0; i < text_embeds.size(); ++i) text_embeds[i] = rng.uniform(-1.0, 1.0);
      if (min_preactivation_magnitude(emb, patch_tokens) >= kKinkClearance) break;
      if (attempt >= 64) throw std::runtime_error("grad_check: no kink-free fixture found");
      sub_seed += 1000003;
    }

    auto build = [&]() {
      auto pe = embed_patches_graph(emb, ad::constant(patch_tokens));
      auto cm = pacl_compatibility_matrix_graph(pe, ad::constant(text_embeds));
      return info_nce_graph(cm, ad::constant(Tensor::scalar(1.0)));
    };

    std::vector<Parameter*> params;
    for (auto& np : emb.named_params()) params.push_back(np.param);
    for (Parameter* p : params) p->zero_grad();
    ad::backward(build());
    const auto fd = finite_diff_grad(params, [&]() { return build().val().item(); });

    for (size_t pi = 0; pi < params.size(); ++pi) {
      const Tensor& a = params[pi]->grad;
      const Tensor& b = fd[pi];
      for (int64_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(a[i] - b[i]) / denom);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace pacl

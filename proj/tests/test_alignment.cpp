#include <doctest.h>

#include <cmath>
#include <numeric>

#include "pacl/alignment.hpp"
#include "test_helpers.hpp"

using namespace pacl;
using pacl::testing::random_tensor;

namespace {

VisionEmbedder random_embedder(int64_t d_in, int64_t d_hidden, int64_t d_out, uint64_t seed) {
  VisionEmbedder emb;
  Rng rng(seed);
  emb.init(d_in, d_hidden, d_out, rng);
  return emb;
}

// Straight-line re-composition of the two-layer-plus-residual embedder,
// independent of the library's matmul helpers.
Tensor embedder_oracle(const VisionEmbedder& e, const Tensor& x) {
  const int64_t t = x.extent(0);
  Tensor out({t, e.out_width});
  for (int64_t r = 0; r < t; ++r) {
    std::vector<double> h(static_cast<size_t>(e.hidden), 0.0);
    for (int64_t j = 0; j < e.hidden; ++j) {
      double s = e.b1.value[j];
      for (int64_t i = 0; i < e.in_width; ++i) s += x.at({r, i}) * e.w1.value.at({i, j});
      h[static_cast<size_t>(j)] = std::max(s, 0.0);
    }
    for (int64_t j = 0; j < e.out_width; ++j) {
      double s = e.b2.value[j] + e.br.value[j];
      for (int64_t i = 0; i < e.hidden; ++i) s += h[static_cast<size_t>(i)] * e.w2.value.at({i, j});
      for (int64_t i = 0; i < e.in_width; ++i) s += x.at({r, i}) * e.wr.value.at({i, j});
      out.at({r, j}) = s;
    }
  }
  return out;
}

// Independent straight-line walk through similarity, token softmax,
// weighted sum and final cosine.
double pacl_oracle(const Tensor& pe, const Tensor& te) {
  const int64_t t = pe.extent(0), d = pe.extent(1);
  std::vector<std::vector<double>> rows(static_cast<size_t>(t), std::vector<double>(static_cast<size_t>(d)));
  for (int64_t r = 0; r < t; ++r) {
    double n = 0.0;
    for (int64_t j = 0; j < d; ++j) n += pe.at({r, j}) * pe.at({r, j});
    n = std::sqrt(n);
    for (int64_t j = 0; j < d; ++j) rows[static_cast<size_t>(r)][static_cast<size_t>(j)] = pe.at({r, j}) / n;
  }
  std::vector<double> tn(static_cast<size_t>(d));
  double nt = 0.0;
  for (int64_t j = 0; j < d; ++j) nt += te[j] * te[j];
  nt = std::sqrt(nt);
  for (int64_t j = 0; j < d; ++j) tn[static_cast<size_t>(j)] = te[j] / nt;

  std::vector<double> s(static_cast<size_t>(t), 0.0);
  for (int64_t r = 0; r < t; ++r) {
    for (int64_t j = 0; j < d; ++j) s[static_cast<size_t>(r)] += rows[static_cast<size_t>(r)][static_cast<size_t>(j)] * tn[static_cast<size_t>(j)];
  }
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  double z = 0.0;
  std::vector<double> a(static_cast<size_t>(t));
  for (int64_t r = 0; r < t; ++r) {
    a[static_cast<size_t>(r)] = std::exp(s[static_cast<size_t>(r)] - mx);
    z += a[static_cast<size_t>(r)];
  }
  for (double& v : a) v /= z;

  std::vector<double> pooled(static_cast<size_t>(d), 0.0);
  for (int64_t r = 0; r < t; ++r) {
    for (int64_t j = 0; j < d; ++j) pooled[static_cast<size_t>(j)] += a[static_cast<size_t>(r)] * rows[static_cast<size_t>(r)][static_cast<size_t>(j)];
  }
  double np = 0.0;
  for (double v : pooled) np += v * v;
  np = std::sqrt(np);
  double phi = 0.0;
  for (int64_t j = 0; j < d; ++j) phi += pooled[static_cast<size_t>(j)] / np * tn[static_cast<size_t>(j)];
  return phi;
}

}  // namespace

TEST_CASE("embed_patches: zero weights, residual identity, random oracle") {
  VisionEmbedder zero;
  Rng rng(1);
  zero.init(4, 4, 4, rng);
  for (auto& np : zero.named_params()) np.param->value = Tensor::zeros(np.param->value.shape());
  const Tensor x = random_tensor({3, 4}, rng);
  CHECK(max_abs_diff(embed_patches(zero, x), Tensor::zeros({3, 4})) == 0.0);

  VisionEmbedder ident;
  ident.init(4, 4, 4, rng);
  for (auto& np : ident.named_params()) np.param->value = Tensor::zeros(np.param->value.shape());
  ident.wr.value = Tensor::identity(4);
  CHECK(max_abs_diff(embed_patches(ident, x), x) <= 1e-15);

  const VisionEmbedder emb = random_embedder(4, 6, 5, 42);
  const Tensor y = random_tensor({3, 4}, rng);
  CHECK(max_abs_diff(embed_patches(emb, y), embedder_oracle(emb, y)) <= 1e-12);

  CHECK_THROWS_AS(embed_patches(emb, random_tensor({3, 7}, rng)), std::invalid_argument);
}

TEST_CASE("patch_similarity hand cases") {
  Tensor pe = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor te = Tensor::from({2}, {1, 0});
  const Tensor s = patch_similarity(pe, te);
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor self = Tensor::from({3, 2}, {0.3, 0.4, 0.3, 0.4, 0.3, 0.4});
  const Tensor ones = patch_similarity(self, Tensor::from({2}, {0.3, 0.4}));
  for (int64_t i = 0; i < 3; ++i) CHECK(ones[i] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor ortho = Tensor::from({2, 2}, {0, 1, 0, -1});
  const Tensor zeros = patch_similarity(ortho, Tensor::from({2}, {1, 0}));
  CHECK(zeros[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(zeros[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("token_attention") {
  CHECK(token_attention(Tensor::from({1}, {3.7}))[0] == doctest::Approx(1.0).epsilon(1e-12));

  const Tensor a = token_attention(Tensor::from({2}, {1, 0}));
  CHECK(a[0] == doctest::Approx(0.7310585786300049).epsilon(1e-10));
  CHECK(a[1] == doctest::Approx(0.2689414213699951).epsilon(1e-10));

  const Tensor u = token_attention(Tensor::full({5}, 0.42));
  for (int64_t i = 0; i < 5; ++i) CHECK(u[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("pooled_vision") {
  Rng rng(17);
  const Tensor pe = random_tensor({4, 3}, rng);
  Tensor onehot = Tensor::zeros({4});
  onehot[2] = 1.0;
  const Tensor sel = pooled_vision(pe, onehot);
  const Tensor row2 = l2_normalize(Tensor({3}, {pe.at({2, 0}), pe.at({2, 1}), pe.at({2, 2})}));
  CHECK(max_abs_diff(sel, row2) <= 1e-12);

  // identical rows pool to that normalised row for any attention
  Tensor same({3, 2});
  for (int64_t r = 0; r < 3; ++r) {
    same.at({r, 0}) = 3.0;
    same.at({r, 1}) = 4.0;
  }
  Tensor attn = Tensor::from({3}, {0.2, 0.5, 0.3});
  const Tensor pooled = pooled_vision(same, attn);
  CHECK(pooled[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(pooled[1] == doctest::Approx(0.8).epsilon(1e-12));

  // hand case from the similarity chain
  const Tensor v = pooled_vision(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2}, {0.7310585786300049, 0.2689414213699951}));
  CHECK(v[0] == doctest::Approx(0.7310585786300049).epsilon(1e-10));
  CHECK(v[1] == doctest::Approx(0.2689414213699951).epsilon(1e-10));
}

TEST_CASE("pacl_compatibility hand value and reduction law") {
  const double phi = pacl_compatibility(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2}, {1, 0}));
  CHECK(phi == doctest::Approx(0.9385078997951388).epsilon(1e-9));

  // single-token reduction: phi equals the plain cosine
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t d = rng.randint(1, 16);
    const Tensor pe = random_tensor({1, d}, rng);
    const Tensor te = random_tensor({d}, rng);
    Tensor row({d});
    for (int64_t j = 0; j < d; ++j) row[j] = pe.at({0, j});
    const double cosine = dot(l2_normalize(row), l2_normalize(te));
    CHECK(std::abs(pacl_compatibility(pe, te) - cosine) <= 1e-12);
  }
}

TEST_CASE("pacl_compatibility permutation invariance and boundedness") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t t = rng.randint(2, 16), d = rng.randint(2, 16);
    const Tensor pe = random_tensor({t, d}, rng);
    const Tensor te = random_tensor({d}, rng);
    const double base = pacl_compatibility(pe, te);

    std::vector<int64_t> perm(static_cast<size_t>(t));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor shuffled({t, d});
    for (int64_t r = 0; r < t; ++r) {
      for (int64_t j = 0; j < d; ++j) shuffled.at({r, j}) = pe.at({perm[static_cast<size_t>(r)], j});
    }
    CHECK(std::abs(pacl_compatibility(shuffled, te) - base) <= 1e-12);
  }

  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t t = rng.randint(1, 8), d = rng.randint(1, 8);
    const double phi = pacl_compatibility(random_tensor({t, d}, rng, -3.0, 3.0), random_tensor({d}, rng, -3.0, 3.0));
    CHECK(phi >= -1.0 - 1e-12);
    CHECK(phi <= 1.0 + 1e-12);
  }
}

TEST_CASE("pacl_compatibility matches the straight-line oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t t = rng.randint(1, 16), d = rng.randint(1, 16);
    const Tensor pe = random_tensor({t, d}, rng);
    const Tensor te = random_tensor({d}, rng);
    CHECK(std::abs(pacl_compatibility(pe, te) - pacl_oracle(pe, te)) <= 1e-9);
  }
}

TEST_CASE("clip_compatibility") {
  Rng rng(8);
  ClsVisionEmbedder ev;
  TextEmbedder et;
  ev.init(4, 4, rng);
  et.init(4, 4, rng);

  const Tensor cls = random_tensor({4}, rng);
  // identical projected embeddings: feed the same projected vector through
  // both sides by matching weights
  et.w.value = ev.w.value;
  et.b.value = ev.b.value;
  CHECK(clip_compatibility(cls, cls, ev, et) == doctest::Approx(1.0).epsilon(1e-12));

  // negated projection gives -1
  TextEmbedder neg;
  neg.init(4, 4, rng);
  neg.w.value = ev.w.value;
  neg.b.value = ev.b.value;
  for (int64_t i = 0; i < neg.w.value.size(); ++i) neg.w.value[i] = -neg.w.value[i];
  for (int64_t i = 0; i < neg.b.value.size(); ++i) neg.b.value[i] = -neg.b.value[i];
  CHECK(clip_compatibility(cls, cls, ev, neg) == doctest::Approx(-1.0).epsilon(1e-12));

  // random pair matches the direct formula
  TextEmbedder et2;
  et2.init(5, 4, rng);
  const Tensor cv = random_tensor({4}, rng);
  const Tensor ct = random_tensor({5}, rng);
  const double direct = dot(l2_normalize(embed_cls_vision(ev, cv)), l2_normalize(embed_text(et2, ct)));
  CHECK(clip_compatibility(cv, ct, ev, et2) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("info_nce closed forms and error paths") {
  // constant matrix gives chance-level ln k
  for (int64_t k : {2, 4, 16}) {
    CompatibilityMatrix cm{Tensor::full({k, k}, 0.37), 1.0};
    CHECK(info_nce(cm) == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-9));
  }

  // dominant diagonal drives the loss to zero
  Tensor strong = Tensor::zeros({3, 3});
  for (int64_t i = 0; i < 3; ++i) strong.at({i, i}) = 50.0;
  CHECK(info_nce({strong, 1.0}) == doctest::Approx(0.0).epsilon(1e-9));

  // frozen from the independent script: k=2, phi=[[0.9,0.1],[0.2,0.8]], sigma=1
  CompatibilityMatrix example{Tensor::from({2, 2}, {0.9, 0.1, 0.2, 0.8}), 1.0};
  CHECK(info_nce(example) == doctest::Approx(0.4037401785511448).epsilon(1e-9));

  CHECK_THROWS_AS(info_nce({Tensor::from({1, 1}, {1.0}), 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(info_nce({Tensor::full({2, 2}, 0.5), 0.0}), std::invalid_argument);

  // nonnegativity over random matrices
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t k = rng.randint(2, 8);
    CompatibilityMatrix cm{random_tensor({k, k}, rng), std::exp(rng.uniform(-1.0, 3.0))};
    CHECK(info_nce(cm) >= -1e-12);
  }
}

TEST_CASE("mi_lower_bound") {
  CHECK(mi_lower_bound(std::log(4.0), 4) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mi_lower_bound(0.0, 4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(mi_lower_bound(0.4037401785511448, 2) == doctest::Approx(0.2894070020088005).epsilon(1e-9));
}

TEST_CASE("graph builders match the plain implementations") {
  Rng rng(11);
  const int64_t k = 4, t = 5, dv = 6, d = 6;
  VisionEmbedder emb = random_embedder(dv, dv, d, 12);

  const Tensor patch_tokens = random_tensor({k, t, dv}, rng);
  const Tensor text_embeds = random_tensor({k, d}, rng);

  auto pe = embed_patches_graph(emb, ad::constant(patch_tokens));
  auto cm = pacl_compatibility_matrix_graph(pe, ad::constant(text_embeds));

  for (int64_t i = 0; i < k; ++i) {
    Tensor pe_i({t, dv});
    for (int64_t r = 0; r < t; ++r) {
      for (int64_t j = 0; j < dv; ++j) pe_i.at({r, j}) = patch_tokens.at({i, r, j});
    }
    const Tensor emb_i = embed_patches(emb, pe_i);
    for (int64_t j = 0; j < k; ++j) {
      Tensor te_j({d});
      for (int64_t x = 0; x < d; ++x) te_j[x] = text_embeds.at({j, x});
      CHECK(cm.val().at({i, j}) == doctest::Approx(pacl_compatibility(emb_i, te_j)).epsilon(1e-12));
    }
  }

  // graph loss equals the plain loss at sigma drawn > 0
  const double sigma = 2.5;
  auto loss = info_nce_graph(cm, ad::constant(Tensor::scalar(sigma)));
  CHECK(loss.val().item() == doctest::Approx(info_nce({cm.val(), sigma})).epsilon(1e-12));
}

TEST_CASE("gradient of info_nce through the full composition matches finite differences") {
  const auto report = grad_check_pacl_loss(/*seed=*/123, /*n_seeds=*/2, /*k=*/3, /*tokens=*/4, /*dim=*/5);
  CHECK(report.pass);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("logit scale modes") {
  LogitScale fixed = LogitScale::fixed_at(1.0);
  CHECK(fixed.value() == 1.0);
  CHECK(!fixed.log_scale.trainable);

  LogitScale learn = LogitScale::learnable();
  CHECK(learn.value() == doctest::Approx(1.0 / 0.07).epsilon(1e-12));
  learn.log_scale.value = Tensor::scalar(10.0);  // exp(10) >> 100
  CHECK(learn.value() == 100.0);
}

#include "pacl/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace pacl {

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

void set_trainable_all(std::vector<NamedParam> params, bool trainable) {
  for (auto& np : params) np.param->trainable = trainable;
}

Tensor causal_mask(int64_t len) {
  Tensor mask({len, len});
  for (int64_t i = 0; i < len; ++i) {
    for (int64_t j = i + 1; j < len; ++j) mask.at({i, j}) = -1e30;
  }
  return mask;
}

}  // namespace

std::pair<int64_t, int64_t> patch_grid_dims(int64_t h, int64_t w, int64_t patch, int64_t stride) {
  if (stride < 1) throw std::invalid_argument("patch_grid_dims: stride must be >= 1");
  if (patch > h || patch > w) {
    throw std::invalid_argument("patch_grid_dims: patch " + std::to_string(patch) + " exceeds image " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  return {(h - patch) / stride + 1, (w - patch) / stride + 1};
}

void VisionEncoderConfig::validate() const {
  if (patch_size > image_size) throw std::invalid_argument("vision config: patch exceeds image");
  if (train_stride < 1 || (image_size - patch_size) % train_stride != 0) {
    throw std::invalid_argument("vision config: (image_size - patch_size) must be divisible by train_stride");
  }
  if (width % heads != 0) throw std::invalid_argument("vision config: width must be divisible by heads");
  if (depth < 1 || channels < 1) throw std::invalid_argument("vision config: bad depth/channels");
}

std::pair<int64_t, int64_t> VisionEncoderConfig::train_grid() const {
  return patch_grid_dims(image_size, image_size, patch_size, train_stride);
}

void TextEncoderConfig::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("text config: vocabulary must include pad/start/end plus words");
  if (context_length < 3) throw std::invalid_argument("text config: context too short");
  if (width % heads != 0) throw std::invalid_argument("text config: width must be divisible by heads");
}

void TransformerBlock::init(int64_t width, int64_t hidden, Rng& rng) {
  ln1_g = Parameter(Tensor::full({width}, 1.0));
  ln1_b = Parameter(Tensor::zeros({width}));
  w_qkv = Parameter(normal_tensor({width, 3 * width}, rng, 0.02));
  b_qkv = Parameter(Tensor::zeros({3 * width}));
  w_proj = Parameter(normal_tensor({width, width}, rng, 0.02));
  b_proj = Parameter(Tensor::zeros({width}));
  ln2_g = Parameter(Tensor::full({width}, 1.0));
  ln2_b = Parameter(Tensor::zeros({width}));
  w_fc1 = Parameter(normal_tensor({width, hidden}, rng, 0.02));
  b_fc1 = Parameter(Tensor::zeros({hidden}));
  w_fc2 = Parameter(normal_tensor({hidden, width}, rng, 0.02));
  b_fc2 = Parameter(Tensor::zeros({width}));
}

void TransformerBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + "/ln1_g", &ln1_g});
  out.push_back({prefix + "/ln1_b", &ln1_b});
  out.push_back({prefix + "/w_qkv", &w_qkv});
  out.push_back({prefix + "/b_qkv", &b_qkv});
  out.push_back({prefix + "/w_proj", &w_proj});
  out.push_back({prefix + "/b_proj", &b_proj});
  out.push_back({prefix + "/ln2_g", &ln2_g});
  out.push_back({prefix + "/ln2_b", &ln2_b});
  out.push_back({prefix + "/w_fc1", &w_fc1});
  out.push_back({prefix + "/b_fc1", &b_fc1});
  out.push_back({prefix + "/w_fc2", &w_fc2});
  out.push_back({prefix + "/b_fc2", &b_fc2});
}

ad::Value transformer_block_forward(TransformerBlock& blk, const ad::Value& x, int64_t heads, const Tensor* mask) {
  const int64_t b = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
  const int64_t hd = d / heads;

  auto h1 = ad::layer_norm(x, ad::leaf(blk.ln1_g), ad::leaf(blk.ln1_b));
  auto qkv = ad::add(ad::matmul(h1, ad::leaf(blk.w_qkv)), ad::leaf(blk.b_qkv));
  auto split_heads = [&](const ad::Value& v) {
    return ad::permute(ad::reshape(v, {b, t, heads, hd}), {0, 2, 1, 3});  // [B,H,T,hd]
  };
  auto q = split_heads(ad::slice_last(qkv, 0, d));
  auto k = split_heads(ad::slice_last(qkv, d, d));
  auto v = split_heads(ad::slice_last(qkv, 2 * d, d));

  auto scores = ad::scale(ad::matmul(q, k, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(hd)));
  if (mask != nullptr) scores = ad::add(scores, ad::constant(*mask));
  auto attn = ad::softmax_last(scores);
  auto ctx = ad::reshape(ad::permute(ad::matmul(attn, v), {0, 2, 1, 3}), {b, t, d});
  auto proj = ad::add(ad::matmul(ctx, ad::leaf(blk.w_proj)), ad::leaf(blk.b_proj));
  auto x1 = ad::add(x, proj);

  auto h2 = ad::layer_norm(x1, ad::leaf(blk.ln2_g), ad::leaf(blk.ln2_b));
  auto mlp = ad::add(
      ad::matmul(ad::gelu(ad::add(ad::matmul(h2, ad::leaf(blk.w_fc1)), ad::leaf(blk.b_fc1))), ad::leaf(blk.w_fc2)),
      ad::leaf(blk.b_fc2));
  return ad::add(x1, mlp);
}

void VisionEncoder::init(Rng& rng) {
  cfg.validate();
  const auto [gh, gw] = cfg.train_grid();
  const int64_t cpp = cfg.channels * cfg.patch_size * cfg.patch_size;
  patch_w = Parameter(normal_tensor({cpp, cfg.width}, rng, 0.02));
  patch_b = Parameter(Tensor::zeros({cfg.width}));
  cls_token = Parameter(normal_tensor({cfg.width}, rng, 0.02));
  pos_emb = Parameter(normal_tensor({1 + gh * gw, cfg.width}, rng, 0.01));
  blocks.resize(static_cast<size_t>(cfg.depth));
  for (auto& blk : blocks) blk.init(cfg.width, cfg.mlp_hidden(), rng);
  lnf_g = Parameter(Tensor::full({cfg.width}, 1.0));
  lnf_b = Parameter(Tensor::zeros({cfg.width}));
}

std::vector<NamedParam> VisionEncoder::named_params(const std::string& prefix) {
  std::vector<NamedParam> out;
  out.push_back({prefix + "/patch_w", &patch_w});
  out.push_back({prefix + "/patch_b", &patch_b});
  out.push_back({prefix + "/cls_token", &cls_token});
  out.push_back({prefix + "/pos_emb", &pos_emb});
  for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "/block" + std::to_string(i), out);
  out.push_back({prefix + "/lnf_g", &lnf_g});
  out.push_back({prefix + "/lnf_b", &lnf_b});
  return out;
}

void VisionEncoder::set_trainable(bool trainable) { set_trainable_all(named_params(), trainable); }

void TextEncoder::init(Rng& rng) {
  cfg.validate();
  tok_emb = Parameter(normal_tensor({cfg.vocab_size, cfg.width}, rng, 0.02));
  pos_emb = Parameter(normal_tensor({cfg.context_length, cfg.width}, rng, 0.01));
  blocks.resize(static_cast<size_t>(cfg.depth));
  for (auto& blk : blocks) blk.init(cfg.width, cfg.mlp_hidden(), rng);
  lnf_g = Parameter(Tensor::full({cfg.width}, 1.0));
  lnf_b = Parameter(Tensor::zeros({cfg.width}));
}

std::vector<NamedParam> TextEncoder::named_params(const std::string& prefix) {
  std::vector<NamedParam> out;
  out.push_back({prefix + "/tok_emb", &tok_emb});
  out.push_back({prefix + "/pos_emb", &pos_emb});
  for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "/block" + std::to_string(i), out);
  out.push_back({prefix + "/lnf_g", &lnf_g});
  out.push_back({prefix + "/lnf_b", &lnf_b});
  return out;
}

void TextEncoder::set_trainable(bool trainable) { set_trainable_all(named_params(), trainable); }

Tensor interpolate_positions(const Tensor& pos, std::pair<int64_t, int64_t> old_grid,
                             std::pair<int64_t, int64_t> new_grid) {
  const auto [oh, ow] = old_grid;
  const auto [nh, nw] = new_grid;
  if (pos.rank() != 2 || pos.extent(0) != 1 + oh * ow) {
    throw std::invalid_argument("interpolate_positions: table rows " + shape_str(pos.shape()) +
                                " do not match grid " + std::to_string(oh) + "x" + std::to_string(ow));
  }
  if (oh == nh && ow == nw) return pos;
  const int64_t d = pos.extent(1);
  // Grid rows viewed as D channels of an oh x ow map.
  Tensor grid({d, oh, ow});
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      for (int64_t c = 0; c < d; ++c) grid.at({c, y, x}) = pos.at({1 + y * ow + x, c});
    }
  }
  const Tensor resized = bilinear_resize(grid, nh, nw);
  Tensor out({1 + nh * nw, d});
  for (int64_t c = 0; c < d; ++c) out.at({0, c}) = pos.at({0, c});
  for (int64_t y = 0; y < nh; ++y) {
    for (int64_t x = 0; x < nw; ++x) {
      for (int64_t c = 0; c < d; ++c) out.at({1 + y * nw + x, c}) = resized.at({c, y, x});
    }
  }
  return out;
}

Tensor unfold(const Tensor& images, int64_t patch, int64_t stride) {
  if (images.rank() != 4) throw std::invalid_argument("unfold: expected [B,C,H,W], got " + shape_str(images.shape()));
  const int64_t b = images.extent(0), c = images.extent(1), h = images.extent(2), w = images.extent(3);
  const auto [gh, gw] = patch_grid_dims(h, w, patch, stride);
  const int64_t t = gh * gw;
  const int64_t cpp = c * patch * patch;
  Tensor out({b, t, cpp});
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t gy = 0; gy < gh; ++gy) {
      for (int64_t gx = 0; gx < gw; ++gx) {
        double* dst = out.data() + ((bi * t + gy * gw + gx) * cpp);
        for (int64_t ch = 0; ch < c; ++ch) {
          for (int64_t py = 0; py < patch; ++py) {
            const double* src = images.data() + ((bi * c + ch) * h + gy * stride + py) * w + gx * stride;
            for (int64_t px = 0; px < patch; ++px) dst[(ch * patch + py) * patch + px] = src[px];
          }
        }
      }
    }
  }
  return out;
}

VisionForwardGraph vision_forward_graph(VisionEncoder& enc, const Tensor& images, int64_t stride) {
  const auto& cfg = enc.cfg;
  if (images.rank() != 4 || images.extent(1) != cfg.channels) {
    throw std::invalid_argument("vision_forward: image batch " + shape_str(images.shape()) +
                                " does not match the configured " + std::to_string(cfg.channels) + " channels");
  }
  // Foreign sizes are an inference-time densification device; training
  // always sees the configured square size (enforced via the grid check
  // against trainable positions below).
  const auto [gh, gw] = patch_grid_dims(images.extent(2), images.extent(3), cfg.patch_size, stride);
  const int64_t t = gh * gw;
  const auto train = cfg.train_grid();

  auto tokens = ad::add(ad::matmul(ad::constant(unfold(images, cfg.patch_size, stride)), ad::leaf(enc.patch_w)),
                        ad::leaf(enc.patch_b));
  auto x = ad::prepend_row(tokens, ad::leaf(enc.cls_token));

  ad::Value pos;
  if (gh == train.first && gw == train.second) {
    pos = ad::leaf(enc.pos_emb);
  } else {
    if (enc.pos_emb.trainable) {
      throw std::logic_error("vision_forward: stride-trick runs require frozen positional embeddings");
    }
    pos = ad::constant(interpolate_positions(enc.pos_emb.value, train, {gh, gw}));
  }
  x = ad::add(x, pos);

  for (auto& blk : enc.blocks) x = transformer_block_forward(blk, x, cfg.heads);
  x = ad::layer_norm(x, ad::leaf(enc.lnf_g), ad::leaf(enc.lnf_b));

  VisionForwardGraph out;
  out.cls = ad::select_axis1(x, std::vector<int64_t>(static_cast<size_t>(images.extent(0)), 0));
  out.patches = ad::slice_axis1(x, 1, t);
  out.grid_h = gh;
  out.grid_w = gw;
  return out;
}

VisionForwardResult vision_forward(VisionEncoder& enc, const Tensor& image, int64_t stride) {
  if (image.rank() != 3) throw std::invalid_argument("vision_forward: expected [C,H,W], got " + shape_str(image.shape()));
  Tensor batch({1, image.extent(0), image.extent(1), image.extent(2)},
               std::vector<double>(image.data(), image.data() + image.size()));
  auto g = vision_forward_graph(enc, batch, stride);
  VisionForwardResult out;
  const int64_t d = enc.cfg.width;
  out.cls = Tensor({d}, std::vector<double>(g.cls.val().data(), g.cls.val().data() + d));
  const int64_t t = g.grid_h * g.grid_w;
  out.patches = Tensor({t, d}, std::vector<double>(g.patches.val().data(), g.patches.val().data() + t * d));
  out.grid_h = g.grid_h;
  out.grid_w = g.grid_w;
  return out;
}

ad::Value text_forward_graph(TextEncoder& enc, const std::vector<std::vector<int32_t>>& ids) {
  const auto& cfg = enc.cfg;
  const int64_t b = static_cast<int64_t>(ids.size());
  if (b < 1) throw std::invalid_argument("text_forward: empty batch");
  const int64_t l = cfg.context_length;
  std::vector<int64_t> flat;
  flat.reserve(static_cast<size_t>(b * l));
  std::vector<int64_t> end_pos(static_cast<size_t>(b), -1);
  for (int64_t bi = 0; bi < b; ++bi) {
    const auto& seq = ids[static_cast<size_t>(bi)];
    if (static_cast<int64_t>(seq.size()) != l) {
      throw std::invalid_argument("text_forward: sequence length " + std::to_string(seq.size()) +
                                  " != context length " + std::to_string(l));
    }
    for (int64_t i = 0; i < l; ++i) {
      const int32_t id = seq[static_cast<size_t>(i)];
      if (id < 0 || id >= cfg.vocab_size) {
        throw std::invalid_argument("text_forward: unknown token id " + std::to_string(id));
      }
      if (id == 2 && end_pos[static_cast<size_t>(bi)] < 0) end_pos[static_cast<size_t>(bi)] = i;
      flat.push_back(id);
    }
    if (end_pos[static_cast<size_t>(bi)] < 0) {
      throw std::invalid_argument("text_forward: sequence has no end token");
    }
  }

  auto x = ad::add(ad::gather_rows(ad::leaf(enc.tok_emb), flat, {b, l}), ad::leaf(enc.pos_emb));
  const Tensor mask = causal_mask(l);
  for (auto& blk : enc.blocks) x = transformer_block_forward(blk, x, cfg.heads, &mask);
  x = ad::layer_norm(x, ad::leaf(enc.lnf_g), ad::leaf(enc.lnf_b));
  return ad::select_axis1(x, end_pos);
}

Tensor text_forward(TextEncoder& enc, const std::vector<int32_t>& ids) {
  auto g = text_forward_graph(enc, {ids});
  const int64_t d = enc.cfg.width;
  return Tensor({d}, std::vector<double>(g.val().data(), g.val().data() + d));
}

}  // namespace pacl

#include <doctest.h>

#include <cmath>

#include "pacl/encoders.hpp"
#include "test_helpers.hpp"

using namespace pacl;
using pacl::testing::random_tensor;

namespace {

VisionEncoder tiny_vision(uint64_t seed, int64_t image = 16, int64_t patch = 8) {
  VisionEncoder enc;
  enc.cfg.image_size = image;
  enc.cfg.patch_size = patch;
  enc.cfg.train_stride = patch;
  enc.cfg.width = 16;
  enc.cfg.depth = 2;
  enc.cfg.heads = 2;
  Rng rng(seed);
  enc.init(rng);
  return enc;
}

TextEncoder tiny_text(uint64_t seed, int64_t vocab = 12, int64_t context = 6) {
  TextEncoder enc;
  enc.cfg.vocab_size = vocab;
  enc.cfg.context_length = context;
  enc.cfg.width = 16;
  enc.cfg.depth = 2;
  enc.cfg.heads = 2;
  Rng rng(seed);
  enc.init(rng);
  return enc;
}

}  // namespace

TEST_CASE("patch_grid_dims closed forms") {
  CHECK(patch_grid_dims(32, 32, 16, 16) == std::pair<int64_t, int64_t>{2, 2});
  CHECK(patch_grid_dims(32, 32, 16, 4) == std::pair<int64_t, int64_t>{5, 5});
  CHECK(patch_grid_dims(16, 16, 16, 1) == std::pair<int64_t, int64_t>{1, 1});
  CHECK_THROWS_AS(patch_grid_dims(8, 8, 16, 1), std::invalid_argument);
}

TEST_CASE("token count law over a sweep of strides") {
  VisionEncoder enc = tiny_vision(1, 32, 8);
  enc.set_trainable(false);
  Rng rng(2);
  const Tensor image = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  for (int64_t stride : {1, 2, 4, 8}) {
    const auto [gh, gw] = patch_grid_dims(32, 32, 8, stride);
    const auto out = vision_forward(enc, image, stride);
    CHECK(out.grid_h == gh);
    CHECK(out.grid_w == gw);
    CHECK(out.patches.extent(0) == gh * gw);
    CHECK(out.patches.extent(1) == enc.cfg.width);
    CHECK(out.cls.size() == enc.cfg.width);
  }
  // stride 4 on a 32-pixel image with P=8 gives 7x7 = 49 tokens
  CHECK(vision_forward(enc, image, 4).patches.extent(0) == 49);
}

TEST_CASE("interpolate_positions identity, constancy and hand bilinear case") {
  Rng rng(3);
  const Tensor pos = random_tensor({5, 6}, rng);  // CLS + 2x2 grid
  const Tensor same = interpolate_positions(pos, {2, 2}, {2, 2});
  CHECK(max_abs_diff(same, pos) == 0.0);

  Tensor constant({5, 2});
  for (int64_t r = 1; r < 5; ++r) {
    constant.at({r, 0}) = 3.5;
    constant.at({r, 1}) = -1.0;
  }
  constant.at({0, 0}) = 9.0;
  const Tensor grown = interpolate_positions(constant, {2, 2}, {3, 3});
  CHECK(grown.extent(0) == 10);
  CHECK(grown.at({0, 0}) == 9.0);  // CLS row untouched
  for (int64_t r = 1; r < 10; ++r) {
    CHECK(grown.at({r, 0}) == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(grown.at({r, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
  }

  // 2x2 grid with values 0,1,2,3 resized to 3x3, corner-aligned
  Tensor ramp({5, 1});
  for (int64_t r = 0; r < 5; ++r) ramp.at({r, 0}) = r == 0 ? -7.0 : static_cast<double>(r - 1);
  const Tensor r3 = interpolate_positions(ramp, {2, 2}, {3, 3});
  const double expect[9] = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  CHECK(r3.at({0, 0}) == -7.0);
  for (int64_t i = 0; i < 9; ++i) CHECK(r3.at({1 + i, 0}) == doctest::Approx(expect[i]).epsilon(1e-12));

  CHECK_THROWS_AS(interpolate_positions(ramp, {3, 3}, {2, 2}), std::invalid_argument);
}

TEST_CASE("stride-trick consistency: train stride uses the stored table bit-exactly") {
  VisionEncoder enc = tiny_vision(4, 32, 8);
  const auto train = enc.cfg.train_grid();
  const Tensor interp = interpolate_positions(enc.pos_emb.value, train, train);
  CHECK(max_abs_diff(interp, enc.pos_emb.value) == 0.0);
}

TEST_CASE("vision_forward determinism and purity") {
  Rng rng(9);
  const Tensor image = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  VisionEncoder a = tiny_vision(7);
  VisionEncoder b = tiny_vision(7);
  const auto oa = vision_forward(a, image, 8);
  const auto ob = vision_forward(b, image, 8);
  CHECK(max_abs_diff(oa.cls, ob.cls) == 0.0);
  CHECK(max_abs_diff(oa.patches, ob.patches) == 0.0);

  const auto oa2 = vision_forward(a, image, 8);
  CHECK(max_abs_diff(oa.cls, oa2.cls) == 0.0);
}

TEST_CASE("vision_forward validates inputs and stride-trick freezing") {
  VisionEncoder enc = tiny_vision(11);
  Rng rng(1);
  const Tensor wrong_channels = random_tensor({1, 16, 16}, rng);
  CHECK_THROWS_AS(vision_forward(enc, wrong_channels, 8), std::invalid_argument);
  // a foreign size changes the grid; with trainable positions that is an error
  const Tensor wrong_size = random_tensor({3, 8, 8}, rng);
  CHECK_THROWS_AS(vision_forward(enc, wrong_size, 8), std::logic_error);

  // trainable positions reject off-train-stride runs
  const Tensor image = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  CHECK_THROWS_AS(vision_forward(enc, image, 4), std::logic_error);
  enc.set_trainable(false);
  CHECK_NOTHROW(vision_forward(enc, image, 4));

  // frozen encoders accept larger inputs (the upscale densification path)
  const Tensor big = random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const auto out = vision_forward(enc, big, 8);
  CHECK(out.patches.extent(0) == 16);
}

TEST_CASE("text_forward purity, shape and validation") {
  TextEncoder enc = tiny_text(21);
  const std::vector<int32_t> seq = {1, 5, 7, 9, 2, 0};
  const Tensor a = text_forward(enc, seq);
  const Tensor b = text_forward(enc, seq);
  CHECK(a.size() == enc.cfg.width);
  CHECK(max_abs_diff(a, b) == 0.0);

  const std::vector<int32_t> other = {1, 5, 7, 10, 2, 0};
  CHECK(max_abs_diff(a, text_forward(enc, other)) > 0.0);

  CHECK_THROWS_WITH_AS(text_forward(enc, {1, 99, 2, 0, 0, 0}), doctest::Contains("token id"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(text_forward(enc, {1, 5, 7, 9, 3, 0}), doctest::Contains("end token"),
                       std::invalid_argument);
  CHECK_THROWS_AS(text_forward(enc, {1, 2}), std::invalid_argument);
}

TEST_CASE("causal masking: tokens after the end position do not affect the CLS") {
  TextEncoder enc = tiny_text(33);
  enc.set_trainable(false);
  // same prefix up to the end token at position 3, different tail ids
  const std::vector<int32_t> s1 = {1, 5, 6, 2, 7, 8};
  const std::vector<int32_t> s2 = {1, 5, 6, 2, 9, 4};
  CHECK(max_abs_diff(text_forward(enc, s1), text_forward(enc, s2)) == 0.0);
}

TEST_CASE("config invariants") {
  VisionEncoderConfig bad;
  bad.train_stride = 5;  // (32-8) % 5 != 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = VisionEncoderConfig{};
  bad.width = 30;  // not divisible by heads=4
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  TextEncoderConfig tc;
  tc.vocab_size = 2;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

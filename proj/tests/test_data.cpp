#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "pacl/data.hpp"
#include "pacl/io.hpp"
#include "pacl/tensor.hpp"

using namespace pacl;

namespace {

bool pairs_equal(const ImageTextPair& a, const ImageTextPair& b) {
  return a.caption == b.caption && a.labelmap == b.labelmap && max_abs_diff(a.image, b.image) == 0.0;
}

}  // namespace

TEST_CASE("generator determinism: same seed gives bit-identical datasets") {
  SyntheticSceneSpec spec;
  spec.seed = 99;
  const Dataset a = generate_dataset(spec, 16);
  const Dataset b = generate_dataset(spec, 16);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (size_t i = 0; i < a.pairs.size(); ++i) CHECK(pairs_equal(a.pairs[i], b.pairs[i]));

  // thread count must not change the content
  const Dataset c = generate_dataset(spec, 16, /*threads=*/4);
  for (size_t i = 0; i < a.pairs.size(); ++i) CHECK(pairs_equal(a.pairs[i], c.pairs[i]));
}

TEST_CASE("single-object scene labels exactly the object's pixels") {
  SyntheticSceneSpec spec;
  spec.min_objects = 1;
  spec.max_objects = 1;
  spec.seed = 4;
  const Dataset ds = generate_dataset(spec, 8);
  const auto bg = background_rgb();
  for (const auto& pair : ds.pairs) {
    int64_t labeled = 0;
    for (int64_t y = 0; y < pair.labelmap.h; ++y) {
      for (int64_t x = 0; x < pair.labelmap.w; ++x) {
        const bool is_bg_pixel = pair.image.at({0, y, x}) == bg[0] / 255.0 &&
                                 pair.image.at({1, y, x}) == bg[1] / 255.0 &&
                                 pair.image.at({2, y, x}) == bg[2] / 255.0;
        const bool is_labeled = pair.labelmap.at(y, x) != kIgnoreId;
        CHECK(is_labeled == !is_bg_pixel);
        labeled += is_labeled ? 1 : 0;
      }
    }
    CHECK(labeled > 0);
  }
}

TEST_CASE("label soundness: labeled pixels carry their class's canonical color") {
  SyntheticSceneSpec spec;
  spec.seed = 12;
  const Dataset ds = generate_dataset(spec, 32);
  const auto names = spec.class_names();
  for (const auto& pair : ds.pairs) {
    for (int64_t y = 0; y < pair.labelmap.h; ++y) {
      for (int64_t x = 0; x < pair.labelmap.w; ++x) {
        const int32_t id = pair.labelmap.at(y, x);
        if (id == kIgnoreId) continue;
        REQUIRE(id < static_cast<int32_t>(names.size()));
        const auto color_word = Tokenizer::split_words(names[static_cast<size_t>(id)])[0];
        const auto rgb = color_rgb(color_word);
        CHECK(pair.image.at({0, y, x}) == rgb[0] / 255.0);
        CHECK(pair.image.at({1, y, x}) == rgb[1] / 255.0);
        CHECK(pair.image.at({2, y, x}) == rgb[2] / 255.0);
      }
    }
  }
}

TEST_CASE("captions mention exactly the classes present") {
  SyntheticSceneSpec spec;
  spec.seed = 31;
  const Dataset ds = generate_dataset(spec, 64);
  for (const auto& pair : ds.pairs) {
    std::set<int32_t> present;
    for (int32_t v : pair.labelmap.v) {
      if (v != kIgnoreId) present.insert(v);
    }
    const auto mentioned = extract_nouns(pair.caption, ds.class_names);
    std::set<int32_t> caption_ids;
    for (const auto& name : mentioned) {
      for (size_t c = 0; c < ds.class_names.size(); ++c) {
        if (ds.class_names[c] == name) caption_ids.insert(static_cast<int32_t>(c));
      }
    }
    CHECK(caption_ids == present);
  }
}

TEST_CASE("object class histogram is approximately uniform") {
  SyntheticSceneSpec spec;
  spec.seed = 7;
  const Dataset ds = generate_dataset(spec, 10000, /*threads=*/4);
  const int64_t classes = static_cast<int64_t>(ds.class_names.size());
  REQUIRE(classes == 24);
  // Count scenes' object classes via caption nouns (placement order kept).
  std::map<std::string, int64_t> counts;
  int64_t total = 0;
  for (const auto& pair : ds.pairs) {
    for (const auto& noun : extract_nouns(pair.caption, ds.class_names)) {
      ++counts[noun];
      ++total;
    }
  }
  const double expected = static_cast<double>(total) / static_cast<double>(classes);
  double chi2 = 0.0;
  for (const auto& name : ds.class_names) {
    const double diff = static_cast<double>(counts[name]) - expected;
    chi2 += diff * diff / expected;
  }
  // dof = 23, upper 1% critical value
  CHECK(chi2 < 41.638398118858476);
}

TEST_CASE("extract_nouns matches, dedups and preserves order") {
  const std::vector<std::string> lexicon = {"square", "circle"};
  CHECK(extract_nouns("a red square on grey", lexicon) == std::vector<std::string>{"square"});
  CHECK(extract_nouns("nothing relevant here", lexicon).empty());
  CHECK(extract_nouns("a square and a square", lexicon) == std::vector<std::string>{"square"});
  CHECK(extract_nouns("a circle then a square", lexicon) == std::vector<std::string>{"circle", "square"});

  const std::vector<std::string> phrases = {"red square", "blue circle"};
  CHECK(extract_nouns("a photo of a blue circle and a red square", phrases) ==
        std::vector<std::string>{"blue circle", "red square"});
}

TEST_CASE("the default prompt set has exactly the 7 templates") {
  const auto& prompts = default_prompts();
  REQUIRE(prompts.size() == 7);
  CHECK(prompts[0] == "itap of a ().");
  CHECK(prompts[1] == "a bad photo of the ().");
  CHECK(prompts[2] == "a origami ().");
  CHECK(prompts[3] == "a photo of the large ().");
  CHECK(prompts[4] == "a () in a video game.");
  CHECK(prompts[5] == "art of the ()");
  CHECK(prompts[6] == "a photo of the small ()");
}

TEST_CASE("prompt_augment templating, determinism and image identity") {
  CHECK(fill_prompt("a photo of the large ().", "circle") == "a photo of the large circle.");
  CHECK_THROWS_AS(fill_prompt("no placeholder", "x"), std::invalid_argument);

  ImageTextPair pair;
  pair.image = Tensor::full({3, 4, 4}, 0.25);
  pair.labelmap = IntGrid(4, 4, kIgnoreId);
  pair.caption = "a photo of a circle and a square";
  const std::vector<std::string> lexicon = {"square", "circle", "triangle"};

  Rng rng1(5), rng2(5);
  const auto extra1 = prompt_augment(pair, lexicon, default_prompts(), rng1);
  const auto extra2 = prompt_augment(pair, lexicon, default_prompts(), rng2);
  REQUIRE(extra1.size() == 2);  // one per noun
  for (size_t i = 0; i < extra1.size(); ++i) {
    CHECK(extra1[i].caption == extra2[i].caption);
    CHECK(max_abs_diff(extra1[i].image, pair.image) == 0.0);
  }

  ImageTextPair empty = pair;
  empty.caption = "nothing here";
  Rng rng3(5);
  CHECK(prompt_augment(empty, lexicon, default_prompts(), rng3).empty());
}

TEST_CASE("tokenizer basics") {
  const Tokenizer tok = Tokenizer::build({"a red square", "a blue circle"}, 8);
  const auto empty = tok.encode("");
  CHECK(empty[0] == Tokenizer::kStart);
  CHECK(empty[1] == Tokenizer::kEnd);
  for (size_t i = 2; i < empty.size(); ++i) CHECK(empty[i] == Tokenizer::kPad);

  // truncation keeps the end token at the last position
  const auto longseq = tok.encode("a red square a blue circle a red square");
  CHECK(longseq.size() == 8);
  CHECK(longseq[7] == Tokenizer::kEnd);
  CHECK(tok.end_position(longseq) == 7);

  CHECK_THROWS_WITH_AS(tok.encode("a green square"), doctest::Contains("green"), std::invalid_argument);
  CHECK(tok.covers("red blue a"));
  CHECK(!tok.covers("purple"));
}

TEST_CASE("tokenizer is injective on the generated caption corpus") {
  SyntheticSceneSpec spec;
  spec.seed = 17;
  const Dataset ds = generate_dataset(spec, 256);
  std::vector<std::string> captions;
  for (const auto& p : ds.pairs) captions.push_back(p.caption);
  const int64_t context = 24;
  const Tokenizer tok = Tokenizer::build(captions, context);

  std::map<std::vector<int32_t>, std::string> seen;
  for (const auto& caption : captions) {
    const auto words = Tokenizer::split_words(caption);
    if (static_cast<int64_t>(words.size()) > context - 2) continue;  // truncated captions may collide
    const auto ids = tok.encode(caption);
    const auto [it, inserted] = seen.emplace(ids, caption);
    if (!inserted) CHECK(it->second == caption);
  }
}

TEST_CASE("dataset directory round trip") {
  SyntheticSceneSpec spec;
  spec.seed = 23;
  const Dataset ds = generate_dataset(spec, 6);
  const auto dir = std::filesystem::temp_directory_path() / "pacl_data_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  CHECK(back.class_names == ds.class_names);
  CHECK(back.spec.seed == ds.spec.seed);
  CHECK(back.spec.colors == ds.spec.colors);
  REQUIRE(back.pairs.size() == ds.pairs.size());
  for (size_t i = 0; i < ds.pairs.size(); ++i) CHECK(pairs_equal(ds.pairs[i], back.pairs[i]));

  const auto classes = load_class_list(dir / "classes.txt");
  CHECK(classes == ds.class_names);
}

TEST_CASE("scene spec validation") {
  SyntheticSceneSpec spec;
  spec.colors.clear();
  CHECK_THROWS_AS(generate_dataset(spec, 1), std::invalid_argument);

  SyntheticSceneSpec bad_shape;
  bad_shape.shapes = {"hexagon"};
  CHECK_THROWS_AS(bad_shape.validate(), std::invalid_argument);

  SyntheticSceneSpec ok;
  CHECK_THROWS_AS(generate_dataset(ok, 0), std::invalid_argument);
}

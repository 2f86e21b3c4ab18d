#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pacl/grid.hpp"
#include "pacl/tensor.hpp"
#include "pacl/util.hpp"

namespace pacl {

// The 7 prompt templates used for class-name sentences; "()" is replaced by
// the class name.
const std::vector<std::string>& default_prompts();

enum class ClassMode { shape_color, color_only };

struct SyntheticSceneSpec {
  int64_t canvas = 32;  // square RGB canvas
  int64_t min_objects = 1;
  int64_t max_objects = 3;
  std::vector<std::string> shapes = {"square", "circle", "triangle"};
  std::vector<std::string> colors = {"red", "green", "blue", "yellow",
                                     "cyan", "magenta", "orange", "purple"};
  ClassMode class_mode = ClassMode::shape_color;
  int64_t min_size = 10;  // object bounding box side, pixels
  int64_t max_size = 16;
  uint64_t seed = 0;

  void validate() const;
  std::vector<std::string> class_names() const;  // line index = class id
};

// RGB in [0,255] for every color word the generator knows.
std::array<uint8_t, 3> color_rgb(const std::string& name);
std::array<uint8_t, 3> background_rgb();

struct ImageTextPair {
  Tensor image;      // [3,H,W] in [0,1]
  std::string caption;
  IntGrid labelmap;  // class ids, 255 = background/ignore
};

struct Dataset {
  SyntheticSceneSpec spec;
  std::vector<std::string> class_names;
  std::vector<ImageTextPair> pairs;
};

// Seeded, reproducible scene generation; sample i depends only on
// (spec.seed, i), so generation parallelises deterministically.
Dataset generate_dataset(const SyntheticSceneSpec& spec, int64_t n, int threads = 1);

// Ordered, deduplicated caption tokens present in the lexicon. Lexicon
// entries may be multi-word phrases ("red square").
std::vector<std::string> extract_nouns(const std::string& caption, const std::vector<std::string>& lexicon);

// For each lexicon noun found in a pair's caption, appends one extra pair
// with the same image and a templated caption (template picked by rng).
std::vector<ImageTextPair> prompt_augment(const ImageTextPair& pair, const std::vector<std::string>& lexicon,
                                          const std::vector<std::string>& prompts, Rng& rng);

std::string fill_prompt(const std::string& prompt, const std::string& name);

// ---- tokenizer -----------------------------------------------------------

class Tokenizer {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kStart = 1;
  static constexpr int32_t kEnd = 2;

  // Builds the closed vocabulary from a caption corpus.
  static Tokenizer build(const std::vector<std::string>& corpus, int64_t context_length);

  // Lowercase, split on non-alphanumerics, wrap with start/end, pad or
  // truncate to the context length keeping the end token.
  std::vector<int32_t> encode(const std::string& caption) const;
  int64_t end_position(const std::vector<int32_t>& ids) const;

  bool covers(const std::string& text) const;  // every word in vocab
  int64_t vocab_size() const { return static_cast<int64_t>(words_.size()) + 3; }
  int64_t context_length() const { return context_length_; }
  const std::vector<std::string>& words() const { return words_; }

  static Tokenizer from_words(std::vector<std::string> words, int64_t context_length);
  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::vector<std::string> words_;           // id = index + 3
  std::map<std::string, int32_t> word_ids_;
  int64_t context_length_ = 16;
};

// Vocabulary over the dataset captions plus every prompt template filled
// with every class name, so templated and probe-time text always tokenizes.
Tokenizer build_corpus_tokenizer(const Dataset& ds, int64_t context_length);

// ---- dataset directory layout ---------------------------------------------
// images/NNNNNN.ppm, labels/NNNNNN.pgm, captions.tsv, classes.txt,
// manifest.json

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<std::string> load_class_list(const std::filesystem::path& file);

}  // namespace pacl

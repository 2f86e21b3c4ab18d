#include "pacl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pacl/io.hpp"

namespace pacl {

namespace {

using nlohmann::json;

struct NamedColor {
  const char* name;
  std::array<uint8_t, 3> rgb;
};

// Flat canonical colors; label soundness relies on objects being drawn in
// exactly these values with no anti-aliasing.
constexpr NamedColor kColors[] = {
    {"red", {220, 30, 30}},    {"green", {40, 170, 60}},   {"blue", {40, 80, 220}},
    {"yellow", {235, 220, 40}}, {"cyan", {40, 200, 200}},   {"magenta", {200, 40, 190}},
    {"orange", {240, 150, 30}}, {"purple", {130, 50, 180}}, {"white", {245, 245, 245}},
    {"black", {15, 15, 15}},
};

constexpr std::array<uint8_t, 3> kBackground = {110, 110, 110};

const std::vector<std::string> kPrompts = {
    "itap of a ().",
    "a bad photo of the ().",
    "a origami ().",
    "a photo of the large ().",
    "a () in a video game.",
    "art of the ()",
    "a photo of the small ()",
};

const std::vector<std::string> kCaptionTemplates = {
    "a photo of a ()",
    "an image of a ()",
    "a picture showing a ()",
};

struct Placement {
  int64_t shape_idx;
  int64_t color_idx;
  int64_t x0, y0, size;
};

bool boxes_overlap(const Placement& a, const Placement& b) {
  return a.x0 < b.x0 + b.size && b.x0 < a.x0 + a.size && a.y0 < b.y0 + b.size && b.y0 < a.y0 + a.size;
}

bool inside_shape(const std::string& shape, int64_t px, int64_t py, int64_t size) {
  const double c = static_cast<double>(size - 1) / 2.0;
  if (shape == "square") return true;
  if (shape == "circle") {
    const double dx = static_cast<double>(px) - c;
    const double dy = static_cast<double>(py) - c;
    const double r = static_cast<double>(size) / 2.0;
    return dx * dx + dy * dy <= r * r;
  }
  if (shape == "triangle") {
    // Apex at top centre, base along the bottom row.
    const double half = size > 1 ? c * static_cast<double>(py) / static_cast<double>(size - 1) : c;
    return std::abs(static_cast<double>(px) - c) <= half + 1e-9;
  }
  throw std::invalid_argument("unknown shape '" + shape + "'");
}

int64_t class_id(const SyntheticSceneSpec& spec, int64_t color_idx, int64_t shape_idx) {
  if (spec.class_mode == ClassMode::color_only) return color_idx;
  return color_idx * static_cast<int64_t>(spec.shapes.size()) + shape_idx;
}

// Captions always name both words; class_mode only decides what the label
// map encodes (the other word becomes nuisance caption context).
std::string object_name(const SyntheticSceneSpec& spec, const Placement& p) {
  return spec.colors[static_cast<size_t>(p.color_idx)] + " " + spec.shapes[static_cast<size_t>(p.shape_idx)];
}

ImageTextPair render_scene(const SyntheticSceneSpec& spec, Rng rng) {
  const int64_t hw = spec.canvas;
  ImageTextPair pair;
  pair.image = Tensor({3, hw, hw});
  for (int64_t y = 0; y < hw; ++y) {
    for (int64_t x = 0; x < hw; ++x) {
      for (int64_t c = 0; c < 3; ++c) pair.image.at({c, y, x}) = kBackground[static_cast<size_t>(c)] / 255.0;
    }
  }
  pair.labelmap = IntGrid(hw, hw, kIgnoreId);

  const int64_t want = rng.randint(spec.min_objects, spec.max_objects);
  std::vector<Placement> placed;
  for (int64_t k = 0; k < want; ++k) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      Placement p;
      p.shape_idx = rng.randint(0, static_cast<int64_t>(spec.shapes.size()) - 1);
      p.color_idx = rng.randint(0, static_cast<int64_t>(spec.colors.size()) - 1);
      p.size = rng.randint(spec.min_size, spec.max_size);
      p.x0 = rng.randint(0, hw - p.size);
      p.y0 = rng.randint(0, hw - p.size);
      bool clash = false;
      for (const auto& q : placed) clash = clash || boxes_overlap(p, q);
      if (!clash) {
        placed.push_back(p);
        break;
      }
    }
  }

  std::vector<std::string> names;
  for (const auto& p : placed) {
    const auto& shape = spec.shapes[static_cast<size_t>(p.shape_idx)];
    const auto rgb = color_rgb(spec.colors[static_cast<size_t>(p.color_idx)]);
    const int32_t id = static_cast<int32_t>(class_id(spec, p.color_idx, p.shape_idx));
    for (int64_t py = 0; py < p.size; ++py) {
      for (int64_t px = 0; px < p.size; ++px) {
        if (!inside_shape(shape, px, py, p.size)) continue;
        const int64_t y = p.y0 + py, x = p.x0 + px;
        for (int64_t c = 0; c < 3; ++c) pair.image.at({c, y, x}) = rgb[static_cast<size_t>(c)] / 255.0;
        pair.labelmap.at(y, x) = id;
      }
    }
    const std::string name = object_name(spec, p);
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  }

  std::string list;
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) list += " and a ";
    list += names[i];
  }
  const auto& tpl = kCaptionTemplates[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(kCaptionTemplates.size()) - 1))];
  pair.caption = fill_prompt(tpl, list);
  return pair;
}

}  // namespace

const std::vector<std::string>& default_prompts() { return kPrompts; }

void SyntheticSceneSpec::validate() const {
  if (shapes.empty() || colors.empty()) throw std::invalid_argument("scene spec: shape/color vocabulary is empty");
  if (canvas < 4) throw std::invalid_argument("scene spec: canvas too small");
  if (min_objects < 1 || max_objects < min_objects) throw std::invalid_argument("scene spec: bad object count range");
  if (min_size < 3 || max_size < min_size || max_size > canvas) throw std::invalid_argument("scene spec: bad size range");
  for (const auto& c : colors) color_rgb(c);  // throws on unknown color
  for (const auto& s : shapes) {
    if (s != "square" && s != "circle" && s != "triangle") throw std::invalid_argument("scene spec: unknown shape '" + s + "'");
  }
  const size_t classes = class_mode == ClassMode::color_only ? colors.size() : colors.size() * shapes.size();
  if (classes >= 255) throw std::invalid_argument("scene spec: class count must stay below the ignore id 255");
}

std::vector<std::string> SyntheticSceneSpec::class_names() const {
  std::vector<std::string> names;
  if (class_mode == ClassMode::color_only) {
    names = colors;
  } else {
    for (const auto& c : colors) {
      for (const auto& s : shapes) names.push_back(c + " " + s);
    }
  }
  return names;
}

std::array<uint8_t, 3> color_rgb(const std::string& name) {
  for (const auto& c : kColors) {
    if (name == c.name) return c.rgb;
  }
  throw std::invalid_argument("unknown color '" + name + "'");
}

std::array<uint8_t, 3> background_rgb() { return kBackground; }

Dataset generate_dataset(const SyntheticSceneSpec& spec, int64_t n, int threads) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  Dataset ds;
  ds.spec = spec;
  ds.class_names = spec.class_names();
  ds.pairs.resize(static_cast<size_t>(n));
  const Rng root(spec.seed);
  parallel_for(n, threads, [&](int64_t i) {
    ds.pairs[static_cast<size_t>(i)] = render_scene(spec, root.derive(static_cast<uint64_t>(i)));
  });
  return ds;
}

std::vector<std::string> extract_nouns(const std::string& caption, const std::vector<std::string>& lexicon) {
  if (lexicon.empty()) throw std::invalid_argument("extract_nouns: lexicon is empty");
  const auto words = Tokenizer::split_words(caption);
  std::vector<std::pair<size_t, std::string>> hits;  // (first word position, noun)
  for (const auto& entry : lexicon) {
    const auto phrase = Tokenizer::split_words(entry);
    if (phrase.empty()) continue;
    for (size_t i = 0; i + phrase.size() <= words.size(); ++i) {
      bool match = true;
      for (size_t j = 0; j < phrase.size(); ++j) match = match && words[i + j] == phrase[j];
      if (match) {
        hits.emplace_back(i, entry);
        break;  // first occurrence decides order; dedup by construction
      }
    }
  }
  std::sort(hits.begin(), hits.end());
  std::vector<std::string> nouns;
  for (auto& [pos, noun] : hits) nouns.push_back(std::move(noun));
  return nouns;
}

std::vector<ImageTextPair> prompt_augment(const ImageTextPair& pair, const std::vector<std::string>& lexicon,
                                          const std::vector<std::string>& prompts, Rng& rng) {
  if (prompts.empty()) throw std::invalid_argument("prompt_augment: prompt set is empty");
  std::vector<ImageTextPair> extra;
  for (const auto& noun : extract_nouns(pair.caption, lexicon)) {
    const auto& tpl = prompts[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(prompts.size()) - 1))];
    ImageTextPair p;
    p.image = pair.image;
    p.labelmap = pair.labelmap;
    p.caption = fill_prompt(tpl, noun);
    extra.push_back(std::move(p));
  }
  return extra;
}

std::string fill_prompt(const std::string& prompt, const std::string& name) {
  const auto pos = prompt.find("()");
  if (pos == std::string::npos) {
    throw std::invalid_argument("prompt template '" + prompt + "' is missing the () placeholder");
  }
  std::string out = prompt;
  return out.replace(pos, 2, name);
}

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string word;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else if (!word.empty()) {
      words.push_back(std::move(word));
      word.clear();
    }
  }
  if (!word.empty()) words.push_back(std::move(word));
  return words;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus, int64_t context_length) {
  std::set<std::string> vocab;
  for (const auto& caption : corpus) {
    for (auto& w : split_words(caption)) vocab.insert(std::move(w));
  }
  return from_words(std::vector<std::string>(vocab.begin(), vocab.end()), context_length);
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words, int64_t context_length) {
  if (context_length < 3) throw std::invalid_argument("Tokenizer: context length must fit start+end+word");
  Tokenizer t;
  t.words_ = std::move(words);
  t.context_length_ = context_length;
  for (size_t i = 0; i < t.words_.size(); ++i) {
    t.word_ids_[t.words_[i]] = static_cast<int32_t>(i) + 3;
  }
  return t;
}

std::vector<int32_t> Tokenizer::encode(const std::string& caption) const {
  const auto words = split_words(caption);
  std::vector<int32_t> ids;
  ids.reserve(static_cast<size_t>(context_length_));
  ids.push_back(kStart);
  for (const auto& w : words) {
    if (static_cast<int64_t>(ids.size()) >= context_length_ - 1) break;  // keep room for end
    const auto it = word_ids_.find(w);
    if (it == word_ids_.end()) throw std::invalid_argument("tokenize: word '" + w + "' not in vocabulary");
    ids.push_back(it->second);
  }
  ids.push_back(kEnd);
  while (static_cast<int64_t>(ids.size()) < context_length_) ids.push_back(kPad);
  return ids;
}

int64_t Tokenizer::end_position(const std::vector<int32_t>& ids) const {
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kEnd) return static_cast<int64_t>(i);
  }
  throw std::invalid_argument("end_position: sequence has no end token");
}

bool Tokenizer::covers(const std::string& text) const {
  for (const auto& w : split_words(text)) {
    if (!word_ids_.count(w)) return false;
  }
  return true;
}

Tokenizer build_corpus_tokenizer(const Dataset& ds, int64_t context_length) {
  std::vector<std::string> corpus;
  corpus.reserve(ds.pairs.size() + ds.class_names.size() * default_prompts().size());
  for (const auto& p : ds.pairs) corpus.push_back(p.caption);
  for (const auto& name : ds.class_names) {
    for (const auto& prompt : default_prompts()) corpus.push_back(fill_prompt(prompt, name));
  }
  return Tokenizer::build(corpus, context_length);
}

namespace {

std::string sample_stem(int64_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(i));
  return buf;
}

json spec_to_json(const SyntheticSceneSpec& spec) {
  return json{{"canvas", spec.canvas},
              {"min_objects", spec.min_objects},
              {"max_objects", spec.max_objects},
              {"shapes", spec.shapes},
              {"colors", spec.colors},
              {"class_mode", spec.class_mode == ClassMode::color_only ? "color" : "shape_color"},
              {"min_size", spec.min_size},
              {"max_size", spec.max_size},
              {"seed", spec.seed}};
}

SyntheticSceneSpec spec_from_json(const json& j) {
  SyntheticSceneSpec spec;
  spec.canvas = j.at("canvas").get<int64_t>();
  spec.min_objects = j.at("min_objects").get<int64_t>();
  spec.max_objects = j.at("max_objects").get<int64_t>();
  spec.shapes = j.at("shapes").get<std::vector<std::string>>();
  spec.colors = j.at("colors").get<std::vector<std::string>>();
  spec.class_mode = j.at("class_mode").get<std::string>() == "color" ? ClassMode::color_only : ClassMode::shape_color;
  spec.min_size = j.at("min_size").get<int64_t>();
  spec.max_size = j.at("max_size").get<int64_t>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  std::string captions;
  for (size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto stem = sample_stem(static_cast<int64_t>(i));
    save_ppm(dir / "images" / (stem + ".ppm"), ds.pairs[i].image);
    save_pgm(dir / "labels" / (stem + ".pgm"), ds.pairs[i].labelmap);
    captions += std::to_string(i) + "\t" + ds.pairs[i].caption + "\n";
  }
  write_text_file(dir / "captions.tsv", captions);
  std::string classes;
  for (const auto& name : ds.class_names) classes += name + "\n";
  write_text_file(dir / "classes.txt", classes);
  json manifest{{"spec", spec_to_json(ds.spec)}, {"count", ds.pairs.size()}, {"seed", ds.spec.seed}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const json manifest = json::parse(read_text_file(dir / "manifest.json"));
  ds.spec = spec_from_json(manifest.at("spec"));
  const int64_t count = manifest.at("count").get<int64_t>();
  ds.class_names = load_class_list(dir / "classes.txt");

  std::istringstream captions(read_text_file(dir / "captions.tsv"));
  std::vector<std::string> caption_by_index(static_cast<size_t>(count));
  std::string line;
  while (std::getline(captions, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("captions.tsv: malformed line '" + line + "'");
    const auto idx = static_cast<size_t>(std::stoll(line.substr(0, tab)));
    if (idx >= caption_by_index.size()) throw std::runtime_error("captions.tsv: index out of range");
    caption_by_index[idx] = line.substr(tab + 1);
  }

  ds.pairs.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const auto stem = sample_stem(i);
    auto& p = ds.pairs[static_cast<size_t>(i)];
    p.image = load_ppm(dir / "images" / (stem + ".ppm"));
    p.labelmap = load_pgm(dir / "labels" / (stem + ".pgm"));
    p.caption = caption_by_index[static_cast<size_t>(i)];
  }
  return ds;
}

std::vector<std::string> load_class_list(const std::filesystem::path& file) {
  std::istringstream in(read_text_file(file));
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  if (names.empty()) throw std::runtime_error("class list " + file.string() + " is empty");
  return names;
}

}  // namespace pacl

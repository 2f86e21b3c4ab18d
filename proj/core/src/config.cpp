#include "pacl/config.hpp"

#include <cctype>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pacl/io.hpp"

namespace pacl {

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

TomlValue parse_scalar(const std::string& raw, int line) {
  const std::string token = trim(raw);
  if (token.empty()) fail(line, "missing value");
  TomlValue v;
  if (token.front() == '"') {
    if (token.size() < 2 || token.back() != '"') fail(line, "unterminated string");
    v.kind = TomlValue::Kind::string;
    v.s = token.substr(1, token.size() - 2);
    return v;
  }
  if (token == "true" || token == "false") {
    v.kind = TomlValue::Kind::boolean;
    v.b = token == "true";
    return v;
  }
  try {
    size_t used = 0;
    const int64_t i = std::stoll(token, &used);
    if (used == token.size()) {
      v.kind = TomlValue::Kind::integer;
      v.i = i;
      return v;
    }
  } catch (const std::exception&) {
    // fall through to float parsing
  }
  try {
    size_t used = 0;
    const double d = std::stod(token, &used);
    if (used != token.size()) fail(line, "malformed number '" + token + "'");
    v.kind = TomlValue::Kind::real;
    v.d = d;
    return v;
  } catch (const std::invalid_argument&) {
    fail(line, "malformed value '" + token + "'");
  } catch (const std::out_of_range&) {
    fail(line, "number out of range '" + token + "'");
  }
}

TomlValue parse_value(const std::string& raw, int line) {
  const std::string token = trim(raw);
  if (!token.empty() && token.front() == '[') {
    if (token.back() != ']') fail(line, "unterminated array");
    TomlValue v;
    v.kind = TomlValue::Kind::array;
    std::string body = token.substr(1, token.size() - 2);
    std::string item;
    bool in_string = false;
    for (char c : body) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        if (!trim(item).empty()) v.items.push_back(parse_scalar(item, line));
        item.clear();
      } else {
        item.push_back(c);
      }
    }
    if (!trim(item).empty()) v.items.push_back(parse_scalar(item, line));
    return v;
  }
  return parse_scalar(token, line);
}

}  // namespace

int64_t TomlValue::as_int(const std::string& context) const {
  if (kind != Kind::integer) throw std::invalid_argument("config: " + context + " must be an integer");
  return i;
}

double TomlValue::as_real(const std::string& context) const {
  if (kind == Kind::integer) return static_cast<double>(i);
  if (kind != Kind::real) throw std::invalid_argument("config: " + context + " must be a number");
  return d;
}

bool TomlValue::as_bool(const std::string& context) const {
  if (kind != Kind::boolean) throw std::invalid_argument("config: " + context + " must be true or false");
  return b;
}

const std::string& TomlValue::as_string(const std::string& context) const {
  if (kind != Kind::string) throw std::invalid_argument("config: " + context + " must be a quoted string");
  return s;
}

std::vector<std::string> TomlValue::as_string_array(const std::string& context) const {
  if (kind != Kind::array) throw std::invalid_argument("config: " + context + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& item : items) out.push_back(item.as_string(context));
  return out;
}

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      table[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    if (section.empty()) fail(line_no, "key outside any [section]");
    if (table[section].count(key)) fail(line_no, "duplicate key '" + key + "'");
    table[section][key] = parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

namespace {

void reject_unknown(const TomlSection& section, const std::string& name, const std::set<std::string>& known) {
  for (const auto& [key, value] : section) {
    if (!known.count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "' in [" + name + "]");
    }
  }
}

const TomlValue* get(const TomlSection& s, const std::string& key) {
  const auto it = s.find(key);
  return it == s.end() ? nullptr : &it->second;
}

void apply_model(const TomlSection& s, ModelConfig& m) {
  reject_unknown(s, "model",
                 {"image_size", "patch_size", "train_stride", "width", "depth", "heads", "mlp_ratio", "channels",
                  "text_context", "text_width", "text_depth", "text_heads", "embed_dim", "embed_hidden",
                  "pool_normalized", "logit_scale"});
  if (auto* v = get(s, "image_size")) m.vision.image_size = v->as_int("model.image_size");
  if (auto* v = get(s, "patch_size")) m.vision.patch_size = v->as_int("model.patch_size");
  if (auto* v = get(s, "train_stride")) m.vision.train_stride = v->as_int("model.train_stride");
  if (auto* v = get(s, "width")) m.vision.width = v->as_int("model.width");
  if (auto* v = get(s, "depth")) m.vision.depth = v->as_int("model.depth");
  if (auto* v = get(s, "heads")) m.vision.heads = v->as_int("model.heads");
  if (auto* v = get(s, "mlp_ratio")) m.vision.mlp_ratio = v->as_real("model.mlp_ratio");
  if (auto* v = get(s, "channels")) m.vision.channels = v->as_int("model.channels");
  if (auto* v = get(s, "text_context")) m.text_context = v->as_int("model.text_context");
  if (auto* v = get(s, "text_width")) m.text_width = v->as_int("model.text_width");
  if (auto* v = get(s, "text_depth")) m.text_depth = v->as_int("model.text_depth");
  if (auto* v = get(s, "text_heads")) m.text_heads = v->as_int("model.text_heads");
  if (auto* v = get(s, "embed_dim")) m.embed_dim = v->as_int("model.embed_dim");
  if (auto* v = get(s, "embed_hidden")) m.embed_hidden = v->as_int("model.embed_hidden");
  if (auto* v = get(s, "pool_normalized")) m.pool_normalized = v->as_bool("model.pool_normalized");
  if (auto* v = get(s, "logit_scale")) {
    const std::string& spec = v->as_string("model.logit_scale");
    if (spec.rfind("fixed:", 0) == 0) {
      m.logit_scale_fixed = true;
      m.logit_scale_init = std::stod(spec.substr(6));
    } else if (spec == "learnable") {
      m.logit_scale_fixed = false;
      m.logit_scale_init = 1.0 / 0.07;
    } else if (spec.rfind("learnable:", 0) == 0) {
      m.logit_scale_fixed = false;
      m.logit_scale_init = std::stod(spec.substr(10));
    } else {
      throw std::invalid_argument("config: model.logit_scale must be 'learnable', 'learnable:<v>' or 'fixed:<v>'");
    }
  }
}

void apply_train(const TomlSection& s, TrainConfig& t) {
  reject_unknown(s, "train",
                 {"batch_size", "epochs", "lr_init", "beta1", "beta2", "eps", "weight_decay", "seed", "precision",
                  "train_logit_scale", "prompt_augment", "threads"});
  if (auto* v = get(s, "batch_size")) t.batch_size = v->as_int("train.batch_size");
  if (auto* v = get(s, "epochs")) t.epochs = v->as_int("train.epochs");
  if (auto* v = get(s, "lr_init")) t.lr_init = v->as_real("train.lr_init");
  if (auto* v = get(s, "beta1")) t.beta1 = v->as_real("train.beta1");
  if (auto* v = get(s, "beta2")) t.beta2 = v->as_real("train.beta2");
  if (auto* v = get(s, "eps")) t.eps = v->as_real("train.eps");
  if (auto* v = get(s, "weight_decay")) t.weight_decay = v->as_real("train.weight_decay");
  if (auto* v = get(s, "seed")) t.seed = static_cast<uint64_t>(v->as_int("train.seed"));
  if (auto* v = get(s, "precision")) {
    const std::string& p = v->as_string("train.precision");
    if (p == "f32") {
      t.precision = Precision::f32;
    } else if (p == "f64") {
      t.precision = Precision::f64;
    } else {
      throw std::invalid_argument("config: train.precision must be 'f32' or 'f64'");
    }
  }
  if (auto* v = get(s, "train_logit_scale")) t.train_logit_scale = v->as_bool("train.train_logit_scale");
  if (auto* v = get(s, "prompt_augment")) t.prompt_augment = v->as_bool("train.prompt_augment");
  if (auto* v = get(s, "threads")) t.threads = static_cast<int>(v->as_int("train.threads"));
}

void apply_data(const TomlSection& s, SyntheticSceneSpec& d, int64_t& n) {
  reject_unknown(s, "data",
                 {"canvas", "min_objects", "max_objects", "shapes", "colors", "class_mode", "min_size", "max_size",
                  "seed", "n"});
  if (auto* v = get(s, "canvas")) d.canvas = v->as_int("data.canvas");
  if (auto* v = get(s, "min_objects")) d.min_objects = v->as_int("data.min_objects");
  if (auto* v = get(s, "max_objects")) d.max_objects = v->as_int("data.max_objects");
  if (auto* v = get(s, "shapes")) d.shapes = v->as_string_array("data.shapes");
  if (auto* v = get(s, "colors")) d.colors = v->as_string_array("data.colors");
  if (auto* v = get(s, "class_mode")) {
    const std::string& m = v->as_string("data.class_mode");
    if (m == "shape_color") {
      d.class_mode = ClassMode::shape_color;
    } else if (m == "color") {
      d.class_mode = ClassMode::color_only;
    } else {
      throw std::invalid_argument("config: data.class_mode must be 'shape_color' or 'color'");
    }
  }
  if (auto* v = get(s, "min_size")) d.min_size = v->as_int("data.min_size");
  if (auto* v = get(s, "max_size")) d.max_size = v->as_int("data.max_size");
  if (auto* v = get(s, "seed")) d.seed = static_cast<uint64_t>(v->as_int("data.seed"));
  if (auto* v = get(s, "n")) n = v->as_int("data.n");
}

void apply_infer(const TomlSection& s, InferConfig& f) {
  reject_unknown(s, "infer", {"stride", "bg_entropy", "softmax_before_upsample", "densify"});
  if (auto* v = get(s, "stride")) f.stride = v->as_int("infer.stride");
  if (auto* v = get(s, "bg_entropy")) f.bg_entropy = v->as_real("infer.bg_entropy");
  if (auto* v = get(s, "softmax_before_upsample")) f.softmax_before_upsample = v->as_bool("infer.softmax_before_upsample");
  if (auto* v = get(s, "densify")) {
    const std::string& m = v->as_string("infer.densify");
    if (m == "stride") {
      f.densify = DensifyMode::stride;
    } else if (m == "upscale") {
      f.densify = DensifyMode::upscale;
    } else {
      throw std::invalid_argument("config: infer.densify must be 'stride' or 'upscale'");
    }
  }
}

std::string quote_array(const std::vector<std::string>& items) {
  std::string out = "[";
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += "\"" + items[i] + "\"";
  }
  return out + "]";
}

}  // namespace

RunConfig RunConfig::from_toml_text(const std::string& text) {
  const TomlTable table = parse_toml(text);
  for (const auto& [name, section] : table) {
    if (name != "model" && name != "train" && name != "data" && name != "infer") {
      throw std::invalid_argument("config: unknown section [" + name + "]");
    }
  }
  RunConfig cfg;
  if (auto it = table.find("model"); it != table.end()) apply_model(it->second, cfg.model);
  if (auto it = table.find("train"); it != table.end()) apply_train(it->second, cfg.train);
  if (auto it = table.find("data"); it != table.end()) apply_data(it->second, cfg.data, cfg.data_n);
  if (auto it = table.find("infer"); it != table.end()) apply_infer(it->second, cfg.infer);
  cfg.model.vision.validate();
  cfg.data.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  return from_toml_text(read_text_file(path));
}

std::string RunConfig::to_toml() const {
  std::ostringstream os;
  os.precision(17);
  os << "[model]\n";
  os << "image_size = " << model.vision.image_size << "\n";
  os << "patch_size = " << model.vision.patch_size << "\n";
  os << "train_stride = " << model.vision.train_stride << "\n";
  os << "width = " << model.vision.width << "\n";
  os << "depth = " << model.vision.depth << "\n";
  os << "heads = " << model.vision.heads << "\n";
  os << "mlp_ratio = " << model.vision.mlp_ratio << "\n";
  os << "channels = " << model.vision.channels << "\n";
  os << "text_context = " << model.text_context << "\n";
  os << "text_width = " << model.text_width << "\n";
  os << "text_depth = " << model.text_depth << "\n";
  os << "text_heads = " << model.text_heads << "\n";
  os << "embed_dim = " << model.embed_dim << "\n";
  os << "embed_hidden = " << model.embed_hidden << "\n";
  os << "pool_normalized = " << (model.pool_normalized ? "true" : "false") << "\n";
  os << "logit_scale = \"" << (model.logit_scale_fixed ? "fixed:" : "learnable:") << model.logit_scale_init << "\"\n";
  os << "\n[train]\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "epochs = " << train.epochs << "\n";
  os << "lr_init = " << train.lr_init << "\n";
  os << "beta1 = " << train.beta1 << "\n";
  os << "beta2 = " << train.beta2 << "\n";
  os << "eps = " << train.eps << "\n";
  os << "weight_decay = " << train.weight_decay << "\n";
  os << "seed = " << train.seed << "\n";
  os << "precision = \"" << (train.precision == Precision::f32 ? "f32" : "f64") << "\"\n";
  os << "train_logit_scale = " << (train.train_logit_scale ? "true" : "false") << "\n";
  os << "prompt_augment = " << (train.prompt_augment ? "true" : "false") << "\n";
  os << "threads = " << train.threads << "\n";
  os << "\n[data]\n";
  os << "canvas = " << data.canvas << "\n";
  os << "min_objects = " << data.min_objects << "\n";
  os << "max_objects = " << data.max_objects << "\n";
  os << "shapes = " << quote_array(data.shapes) << "\n";
  os << "colors = " << quote_array(data.colors) << "\n";
  os << "class_mode = \"" << (data.class_mode == ClassMode::color_only ? "color" : "shape_color") << "\"\n";
  os << "min_size = " << data.min_size << "\n";
  os << "max_size = " << data.max_size << "\n";
  os << "seed = " << data.seed << "\n";
  os << "n = " << data_n << "\n";
  os << "\n[infer]\n";
  os << "stride = " << infer.stride << "\n";
  if (infer.bg_entropy.has_value()) os << "bg_entropy = " << *infer.bg_entropy << "\n";
  os << "softmax_before_upsample = " << (infer.softmax_before_upsample ? "true" : "false") << "\n";
  os << "densify = \"" << (infer.densify == DensifyMode::upscale ? "upscale" : "stride") << "\"\n";
  return os.str();
}

}  // namespace pacl

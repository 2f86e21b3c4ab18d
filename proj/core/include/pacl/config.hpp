#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pacl/data.hpp"
#include "pacl/inference.hpp"
#include "pacl/model.hpp"
#include "pacl/training.hpp"

namespace pacl {

// Minimal strict TOML subset: [section] headers, key = value lines with
// integers, floats, booleans, quoted strings and flat arrays thereof, and
// # comments. Covers the whole run-config schema; anything else is an error.
struct TomlValue {
  enum class Kind { integer, real, boolean, string, array };
  Kind kind = Kind::integer;
  int64_t i = 0;
  double d = 0.0;
  bool b = false;
  std::string s;
  std::vector<TomlValue> items;

  int64_t as_int(const std::string& context) const;
  double as_real(const std::string& context) const;
  bool as_bool(const std::string& context) const;
  const std::string& as_string(const std::string& context) const;
  std::vector<std::string> as_string_array(const std::string& context) const;
};

using TomlSection = std::map<std::string, TomlValue>;
using TomlTable = std::map<std::string, TomlSection>;

TomlTable parse_toml(const std::string& text);

struct InferConfig {
  int64_t stride = 4;
  std::optional<double> bg_entropy;
  bool softmax_before_upsample = false;
  DensifyMode densify = DensifyMode::stride;
};

// The resolved run configuration: [model], [train], [data], [infer].
// Unknown sections or keys are rejected; the resolved document is echoed
// into every run's output directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SyntheticSceneSpec data;
  int64_t data_n = 512;
  InferConfig infer;

  static RunConfig from_toml_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);
  std::string to_toml() const;
};

}  // namespace pacl

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pacl/grid.hpp"
#include "pacl/tensor.hpp"

namespace pacl {

// ---- netpbm ------------------------------------------------------------
// Binary P6 (RGB) for images and P5 (grey) for label maps / masks, 8-bit,
// maxval 255. Round trips are bit-exact.

void save_ppm(const std::filesystem::path& path, const Tensor& image);  // [3,H,W] in [0,1]
Tensor load_ppm(const std::filesystem::path& path);

void save_pgm(const std::filesystem::path& path, const IntGrid& map);  // values in [0, 255]
IntGrid load_pgm(const std::filesystem::path& path);

// ---- checkpoint container ------------------------------------------------
// Layout: magic "PACL", then a payload of {version u32, entry count u32,
// per entry: name length u32 + UTF-8 name, dtype u8, rank u8, extents u64
// each, raw little-endian data}, then CRC-32 of the payload.

enum class Dtype : uint8_t { f32 = 0, f64 = 1, i64 = 2 };

struct CheckpointEntry {
  std::string name;
  Dtype dtype = Dtype::f64;
  Shape shape;
  std::vector<uint8_t> data;  // little-endian raw payload

  static CheckpointEntry from_tensor(std::string name, const Tensor& t, Dtype dtype = Dtype::f64);
  static CheckpointEntry from_i64(std::string name, const std::vector<int64_t>& values, Shape shape);
  static CheckpointEntry from_scalar_i64(std::string name, int64_t value);
  static CheckpointEntry from_scalar_f64(std::string name, double value);
  static CheckpointEntry from_string(std::string name, const std::string& text);

  Tensor to_tensor() const;  // f32 / f64 entries
  std::vector<int64_t> to_i64() const;
  int64_t scalar_i64() const;
  double scalar_f64() const;
  std::string to_string_payload() const;
};

using Checkpoint = std::vector<CheckpointEntry>;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& entries);
Checkpoint load_checkpoint(const std::filesystem::path& path);

const CheckpointEntry* find_entry(const Checkpoint& ckpt, const std::string& name);
const CheckpointEntry& require_entry(const Checkpoint& ckpt, const std::string& name);

// ---- text outputs ---------------------------------------------------------

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace pacl

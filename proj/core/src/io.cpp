#include "pacl/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pacl/hash.hpp"

namespace pacl {

namespace {

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const uint8_t* p, size_t n, const std::string& context) : p_(p), n_(n), ctx_(context) {}

  uint8_t u8() { return take(1)[0]; }
  uint32_t u32() {
    const uint8_t* b = take(4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t u64() {
    uint64_t v = 0;
    const uint8_t* b = take(8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  const uint8_t* take(size_t k) {
    if (off_ + k > n_) throw std::runtime_error(ctx_ + ": truncated payload");
    const uint8_t* r = p_ + off_;
    off_ += k;
    return r;
  }
  size_t remaining() const { return n_ - off_; }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t off_ = 0;
  std::string ctx_;
};

std::vector<uint8_t> read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_binary(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Skips netpbm whitespace and # comments, then parses a decimal integer.
int64_t pnm_int(Reader& r) {
  int c = r.u8();
  for (;;) {
    if (c == '#') {
      while (c != '\n') c = r.u8();
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      c = r.u8();
    } else {
      break;
    }
  }
  if (c < '0' || c > '9') throw std::runtime_error("netpbm: malformed header");
  int64_t v = 0;
  while (c >= '0' && c <= '9') {
    v = v * 10 + (c - '0');
    c = r.u8();
  }
  // c is the single whitespace terminating the token
  return v;
}

uint8_t quantize(double x) {
  const double v = std::round(x * 255.0);
  return static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)));
}

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    case Dtype::i64: return 8;
  }
  throw std::runtime_error("checkpoint: unknown dtype");
}

}  // namespace

void save_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw std::invalid_argument("save_ppm: expected [3xHxW], got " + shape_str(image.shape()));
  }
  const int64_t h = image.extent(1), w = image.extent(2);
  std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) bytes.push_back(quantize(image.at({c, y, x})));
    }
  }
  write_binary(path, bytes);
}

Tensor load_ppm(const std::filesystem::path& path) {
  const auto bytes = read_binary(path);
  Reader r(bytes.data(), bytes.size(), "load_ppm " + path.string());
  if (r.u8() != 'P' || r.u8() != '6') throw std::runtime_error("load_ppm: bad magic in " + path.string());
  const int64_t w = pnm_int(r), h = pnm_int(r), maxval = pnm_int(r);
  if (maxval != 255) throw std::runtime_error("load_ppm: unsupported maxval " + std::to_string(maxval));
  Tensor image({3, h, w});
  const uint8_t* data = r.take(static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        image.at({c, y, x}) = static_cast<double>(data[(y * w + x) * 3 + c]) / 255.0;
      }
    }
  }
  return image;
}

void save_pgm(const std::filesystem::path& path, const IntGrid& map) {
  std::string header = "P5\n" + std::to_string(map.w) + " " + std::to_string(map.h) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + map.v.size());
  for (int32_t value : map.v) {
    if (value < 0 || value > 255) {
      throw std::invalid_argument("save_pgm: value " + std::to_string(value) + " outside [0,255]");
    }
    bytes.push_back(static_cast<uint8_t>(value));
  }
  write_binary(path, bytes);
}

IntGrid load_pgm(const std::filesystem::path& path) {
  const auto bytes = read_binary(path);
  Reader r(bytes.data(), bytes.size(), "load_pgm " + path.string());
  if (r.u8() != 'P' || r.u8() != '5') throw std::runtime_error("load_pgm: bad magic in " + path.string());
  const int64_t w = pnm_int(r), h = pnm_int(r), maxval = pnm_int(r);
  if (maxval != 255) throw std::runtime_error("load_pgm: unsupported maxval " + std::to_string(maxval));
  IntGrid map(h, w);
  const uint8_t* data = r.take(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i) map.v[static_cast<size_t>(i)] = data[i];
  return map;
}

CheckpointEntry CheckpointEntry::from_tensor(std::string name, const Tensor& t, Dtype dtype) {
  CheckpointEntry e;
  e.name = std::move(name);
  e.dtype = dtype;
  e.shape = t.shape();
  if (dtype == Dtype::f64) {
    e.data.reserve(static_cast<size_t>(t.size()) * 8);
    for (int64_t i = 0; i < t.size(); ++i) {
      const double v = t[i];
      uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(e.data, bits);
    }
  } else if (dtype == Dtype::f32) {
    e.data.reserve(static_cast<size_t>(t.size()) * 4);
    for (int64_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(e.data, bits);
    }
  } else {
    throw std::invalid_argument("from_tensor: use from_i64 for integer entries");
  }
  return e;
}

CheckpointEntry CheckpointEntry::from_i64(std::string name, const std::vector<int64_t>& values, Shape shape) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("from_i64: shape/value count mismatch");
  }
  CheckpointEntry e;
  e.name = std::move(name);
  e.dtype = Dtype::i64;
  e.shape = std::move(shape);
  for (int64_t v : values) put_u64(e.data, static_cast<uint64_t>(v));
  return e;
}

CheckpointEntry CheckpointEntry::from_scalar_i64(std::string name, int64_t value) {
  return from_i64(std::move(name), {value}, Shape{});
}

CheckpointEntry CheckpointEntry::from_scalar_f64(std::string name, double value) {
  return from_tensor(std::move(name), Tensor::scalar(value), Dtype::f64);
}

CheckpointEntry CheckpointEntry::from_string(std::string name, const std::string& text) {
  if (text.empty()) return from_i64(std::move(name), {0}, Shape{});  // rank-0 marker
  std::vector<int64_t> bytes;
  bytes.reserve(text.size());
  for (unsigned char c : text) bytes.push_back(static_cast<int64_t>(c));
  return from_i64(std::move(name), bytes, Shape{static_cast<int64_t>(bytes.size())});
}

Tensor CheckpointEntry::to_tensor() const {
  const int64_t n = numel(shape);
  std::vector<double> values(static_cast<size_t>(n));
  if (dtype == Dtype::f64) {
    for (int64_t i = 0; i < n; ++i) {
      uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) bits = (bits << 8) | data[static_cast<size_t>(i * 8 + b)];
      double d;
      std::memcpy(&d, &bits, 8);
      values[static_cast<size_t>(i)] = d;
    }
  } else if (dtype == Dtype::f32) {
    for (int64_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | data[static_cast<size_t>(i * 4 + b)];
      float f;
      std::memcpy(&f, &bits, 4);
      values[static_cast<size_t>(i)] = static_cast<double>(f);
    }
  } else {
    throw std::runtime_error("to_tensor: entry '" + name + "' is integer typed");
  }
  return Tensor(shape, std::move(values));
}

std::vector<int64_t> CheckpointEntry::to_i64() const {
  if (dtype != Dtype::i64) throw std::runtime_error("to_i64: entry '" + name + "' is not integer typed");
  const int64_t n = numel(shape);
  std::vector<int64_t> values(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | data[static_cast<size_t>(i * 8 + b)];
    values[static_cast<size_t>(i)] = static_cast<int64_t>(bits);
  }
  return values;
}

int64_t CheckpointEntry::scalar_i64() const {
  const auto v = to_i64();
  if (v.size() != 1) throw std::runtime_error("scalar_i64: entry '" + name + "' is not scalar");
  return v[0];
}

double CheckpointEntry::scalar_f64() const {
  const Tensor t = to_tensor();
  return t.item();
}

std::string CheckpointEntry::to_string_payload() const {
  std::string s;
  if (shape.empty()) return s;  // empty text marker
  for (int64_t v : to_i64()) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& entries) {
  std::vector<uint8_t> payload;
  put_u32(payload, 1u);  // format version
  put_u32(payload, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(payload, static_cast<uint32_t>(e.name.size()));
    payload.insert(payload.end(), e.name.begin(), e.name.end());
    payload.push_back(static_cast<uint8_t>(e.dtype));
    payload.push_back(static_cast<uint8_t>(e.shape.size()));
    for (int64_t ext : e.shape) put_u64(payload, static_cast<uint64_t>(ext));
    if (e.data.size() != static_cast<size_t>(numel(e.shape)) * dtype_size(e.dtype)) {
      throw std::invalid_argument("save_checkpoint: entry '" + e.name + "' has inconsistent payload size");
    }
    payload.insert(payload.end(), e.data.begin(), e.data.end());
  }
  std::vector<uint8_t> bytes = {'P', 'A', 'C', 'L'};
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  put_u32(bytes, crc32(payload));
  write_binary(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_binary(path);
  const std::string ctx = "load_checkpoint " + path.string();
  if (bytes.size() < 8 || bytes[0] != 'P' || bytes[1] != 'A' || bytes[2] != 'C' || bytes[3] != 'L') {
    throw std::runtime_error(ctx + ": bad magic");
  }
  const size_t payload_len = bytes.size() - 8;
  const uint8_t* payload = bytes.data() + 4;
  uint32_t stored_crc = 0;
  for (int i = 3; i >= 0; --i) stored_crc = (stored_crc << 8) | bytes[bytes.size() - 4 + static_cast<size_t>(i)];
  const uint32_t computed = crc32(std::span<const uint8_t>(payload, payload_len));
  if (computed != stored_crc) throw std::runtime_error(ctx + ": CRC mismatch, file is corrupt");

  Reader r(payload, payload_len, ctx);
  const uint32_t version = r.u32();
  if (version != 1) throw std::runtime_error(ctx + ": unsupported format version " + std::to_string(version));
  const uint32_t count = r.u32();
  Checkpoint entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const uint32_t name_len = r.u32();
    const uint8_t* name = r.take(name_len);
    e.name.assign(reinterpret_cast<const char*>(name), name_len);
    const uint8_t tag = r.u8();
    if (tag > 2) throw std::runtime_error(ctx + ": unknown dtype tag " + std::to_string(tag));
    e.dtype = static_cast<Dtype>(tag);
    const uint8_t rank = r.u8();
    e.shape.resize(rank);
    for (uint8_t d = 0; d < rank; ++d) e.shape[d] = static_cast<int64_t>(r.u64());
    const size_t n = static_cast<size_t>(numel(e.shape)) * dtype_size(e.dtype);
    const uint8_t* data = r.take(n);
    e.data.assign(data, data + n);
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw std::runtime_error(ctx + ": trailing bytes after last entry");
  return entries;
}

const CheckpointEntry* find_entry(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& e : ckpt) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const CheckpointEntry& require_entry(const Checkpoint& ckpt, const std::string& name) {
  const CheckpointEntry* e = find_entry(ckpt, name);
  if (e == nullptr) throw std::runtime_error("checkpoint: missing entry '" + name + "'");
  return *e;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace pacl

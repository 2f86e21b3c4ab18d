#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace pacl {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Rank 0 denotes a scalar (size 1).
// Tensors are plain values: copies are deep, moves are cheap, and nothing
// in the library mutates a tensor it did not create.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::initializer_list<double> data);
  static Tensor identity(int64_t n);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t extent(int64_t axis) const;
  bool defined() const { return !data_.empty(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  // Value of a size-1 tensor; throws otherwise.
  double item() const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// ---- shape helpers ----------------------------------------------------

// Flat offset of a multi-index under row-major layout.
int64_t flat_index(const Shape& shape, std::span<const int64_t> idx);

// ---- plain (non-differentiating) numeric operations --------------------

// 2-D matrix product. Throws on inner-extent mismatch, naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);

// Stable softmax along `axis`. Output sums to 1 along the reduced axis.
Tensor softmax(const Tensor& v, int64_t axis);

// v / (|v| + eps) over the whole tensor treated as one vector.
Tensor l2_normalize(const Tensor& v, double eps = 1e-12);

// Row-wise l2_normalize of a [T x D] matrix (by extension: last axis of any
// rank >= 1 tensor).
Tensor l2_normalize_rows(const Tensor& m, double eps = 1e-12);

// Shannon entropy in nats of a distribution; 0*ln(0) counts as 0.
// Throws on negative entries or if the entries do not sum to 1 within 1e-6.
double entropy(const Tensor& p);

// Channel-wise corner-aligned bilinear interpolation of a [C x h x w] grid
// to [C x H x W]. Identity (bit-exact copy) when sizes match.
Tensor bilinear_resize(const Tensor& grid, int64_t out_h, int64_t out_w);

double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace pacl

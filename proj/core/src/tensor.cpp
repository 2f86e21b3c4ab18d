#include "pacl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pacl {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t e : shape_) {
    if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent in " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (int64_t e : shape_) {
    if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent in " + shape_str(shape_));
  }
  if (static_cast<int64_t>(data_.size()) != numel(shape_)) {
    throw std::invalid_argument("Tensor: element count " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.data_.assign(1, value);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> data) {
  return Tensor(std::move(shape), std::vector<double>(data));
}

Tensor Tensor::identity(int64_t n) {
  Tensor t({n, n});
  for (int64_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

int64_t Tensor::extent(int64_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw std::out_of_range("Tensor::extent: axis " + std::to_string(axis) + " invalid for " + shape_str(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  std::vector<int64_t> v(idx);
  return data_[static_cast<size_t>(flat_index(shape_, v))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  std::vector<int64_t> v(idx);
  return data_[static_cast<size_t>(flat_index(shape_, v))];
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("Tensor::item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

int64_t flat_index(const Shape& shape, std::span<const int64_t> idx) {
  if (idx.size() != shape.size()) throw std::out_of_range("flat_index: rank mismatch");
  int64_t off = 0;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= shape[i]) throw std::out_of_range("flat_index: index out of range");
    off = off * shape[i] + idx[i];
  }
  return off;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int64_t m = a.extent(0), n = a.extent(1), p = b.extent(1);
  Tensor c({m, p});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t k = 0; k < n; ++k) {
      const double aik = pa[i * n + k];
      const double* brow = pb + k * p;
      double* crow = pc + i * p;
      for (int64_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Tensor softmax(const Tensor& v, int64_t axis) {
  if (axis < 0 || axis >= v.rank()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(v.shape()));
  }
  const int64_t extent = v.extent(axis);
  int64_t inner = 1;
  for (int64_t i = axis + 1; i < v.rank(); ++i) inner *= v.extent(i);
  const int64_t outer = v.size() / (extent * inner);
  Tensor out(v.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * extent * inner + in;
      double mx = v[base];
      for (int64_t e = 1; e < extent; ++e) mx = std::max(mx, v[base + e * inner]);
      double sum = 0.0;
      for (int64_t e = 0; e < extent; ++e) {
        const double ex = std::exp(v[base + e * inner] - mx);
        out[base + e * inner] = ex;
        sum += ex;
      }
      for (int64_t e = 0; e < extent; ++e) out[base + e * inner] /= sum;
    }
  }
  return out;
}

Tensor l2_normalize(const Tensor& v, double eps) {
  const double n = norm(v);
  Tensor out(v.shape(), std::vector<double>(v.data(), v.data() + v.size()));
  // Exact unit norm away from zero; the eps guard only handles degenerate
  // near-zero vectors.
  const double inv = n > eps ? 1.0 / n : 1.0 / (n + eps);
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
  return out;
}

Tensor l2_normalize_rows(const Tensor& m, double eps) {
  if (m.rank() < 1) throw std::invalid_argument("l2_normalize_rows: rank must be >= 1");
  const int64_t d = m.extent(m.rank() - 1);
  const int64_t rows = m.size() / d;
  Tensor out(m.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = m.data() + r * d;
    double* dst = out.data() + r * d;
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += src[j] * src[j];
    const double n = std::sqrt(s);
    const double inv = n > eps ? 1.0 / n : 1.0 / (n + eps);
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j] * inv;
  }
  return out;
}

double entropy(const Tensor& p) {
  double sum = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) throw std::domain_error("entropy: negative probability " + std::to_string(p[i]));
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::domain_error("entropy: probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
  double h = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

Tensor bilinear_resize(const Tensor& grid, int64_t out_h, int64_t out_w) {
  if (grid.rank() != 3) throw std::invalid_argument("bilinear_resize: expected [C x h x w], got " + shape_str(grid.shape()));
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("bilinear_resize: target extent must be positive");
  const int64_t c = grid.extent(0), h = grid.extent(1), w = grid.extent(2);
  if (out_h == h && out_w == w) return grid;
  Tensor out({c, out_h, out_w});
  // Corner-aligned sampling: output corners hit input corners exactly.
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
  for (int64_t ch = 0; ch < c; ++ch) {
    const double* src = grid.data() + ch * h * w;
    double* dst = out.data() + ch * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const double y = sy * static_cast<double>(i);
      const int64_t y0 = static_cast<int64_t>(std::floor(y));
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const double dy = y - static_cast<double>(y0);
      for (int64_t j = 0; j < out_w; ++j) {
        const double x = sx * static_cast<double>(j);
        const int64_t x0 = static_cast<int64_t>(std::floor(x));
        const int64_t x1 = std::min(x0 + 1, w - 1);
        const double dx = x - static_cast<double>(x0);
        dst[i * out_w + j] = src[y0 * w + x0] * (1.0 - dy) * (1.0 - dx) +
                             src[y0 * w + x1] * (1.0 - dy) * dx +
                             src[y1 * w + x0] * dy * (1.0 - dx) +
                             src[y1 * w + x1] * dy * dx;
      }
    }
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pacl

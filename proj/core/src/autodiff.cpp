#include "pacl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace pacl {
namespace ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

NodePtr new_node(Tensor value, std::vector<NodePtr> inputs, const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  n->op = op;
  for (const auto& in : n->inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  return n;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// True if b broadcasts over a: equal shape, scalar, or trailing-extent match.
enum class Bcast { equal, scalar, suffix };

Bcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::equal;
  if (numel(b) == 1) return Bcast::scalar;
  if (b.size() < a.size()) {
    bool ok = true;
    for (size_t i = 0; i < b.size(); ++i) {
      if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) ok = false;
    }
    if (ok) return Bcast::suffix;
  }
  throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(b) + " over " + shape_str(a));
}

// Sums a gradient shaped like `a` down to the broadcast operand's shape.
void reduce_into(Tensor& dst, const Tensor& g, Bcast kind) {
  if (kind == Bcast::equal) {
    accumulate(dst, g);
    return;
  }
  if (kind == Bcast::scalar) {
    double s = 0.0;
    for (int64_t i = 0; i < g.size(); ++i) s += g[i];
    dst[0] += s;
    return;
  }
  const int64_t suffix = dst.size();
  const int64_t lead = g.size() / suffix;
  for (int64_t l = 0; l < lead; ++l) {
    const double* src = g.data() + l * suffix;
    for (int64_t j = 0; j < suffix; ++j) dst[j] += src[j];
  }
}

// ---- matmul kernels (all accumulate into C) ----------------------------

// C[M,N] += A[M,K] * B[K,N]
void mm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
void mm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] += s;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void mm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

int64_t last_extent(const Value& v, const char* op) {
  if (v.shape().empty()) throw std::invalid_argument(std::string(op) + ": scalar input has no axis");
  return v.shape().back();
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (!grad.defined() || grad.size() != value.size()) grad = Tensor::zeros(value.shape());
  return grad;
}

Value constant(Tensor t) { return Value(new_node(std::move(t), {}, "const")); }

Value leaf(Parameter& p) {
  auto n = new_node(p.value, {}, "leaf");
  n->requires_grad = p.trainable;
  n->param = &p;
  return Value(n);
}

Value add(const Value& a, const Value& b) {
  const Bcast kind = broadcast_kind(a.shape(), b.shape(), "add");
  Tensor out = a.val();
  const Tensor& bv = b.val();
  if (kind == Bcast::equal) {
    for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else if (kind == Bcast::scalar) {
    const double s = bv[0];
    for (int64_t i = 0; i < out.size(); ++i) out[i] += s;
  } else {
    const int64_t suffix = bv.size();
    const int64_t lead = out.size() / suffix;
    for (int64_t l = 0; l < lead; ++l) {
      double* dst = out.data() + l * suffix;
      for (int64_t j = 0; j < suffix; ++j) dst[j] += bv[j];
    }
  }
  auto n = new_node(std::move(out), {a.node(), b.node()}, "add");
  n->backprop = [kind](Node& self) {
    if (self.inputs[0]->requires_grad) accumulate(self.inputs[0]->grad_buffer(), self.grad);
    if (self.inputs[1]->requires_grad) reduce_into(self.inputs[1]->grad_buffer(), self.grad, kind);
  };
  return Value(n);
}

Value sub(const Value& a, const Value& b) { return add(a, scale(b, -1.0)); }

Value mul(const Value& a, const Value& b) {
  const Bcast kind = broadcast_kind(a.shape(), b.shape(), "mul");
  Tensor out = a.val();
  const Tensor& bv = b.val();
  if (kind == Bcast::equal) {
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  } else if (kind == Bcast::scalar) {
    const double s = bv[0];
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  } else {
    const int64_t suffix = bv.size();
    const int64_t lead = out.size() / suffix;
    for (int64_t l = 0; l < lead; ++l) {
      double* dst = out.data() + l * suffix;
      for (int64_t j = 0; j < suffix; ++j) dst[j] *= bv[j];
    }
  }
  auto n = new_node(std::move(out), {a.node(), b.node()}, "mul");
  n->backprop = [kind](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv2 = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      Tensor& da = self.inputs[0]->grad_buffer();
      if (kind == Bcast::equal) {
        for (int64_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bv2[i];
      } else if (kind == Bcast::scalar) {
        const double s = bv2[0];
        for (int64_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * s;
      } else {
        const int64_t suffix = bv2.size();
        const int64_t lead = da.size() / suffix;
        for (int64_t l = 0; l < lead; ++l) {
          for (int64_t j = 0; j < suffix; ++j) da[l * suffix + j] += self.grad[l * suffix + j] * bv2[j];
        }
      }
    }
    if (self.inputs[1]->requires_grad) {
      Tensor tmp = Tensor::zeros(av.shape());
      for (int64_t i = 0; i < tmp.size(); ++i) tmp[i] = self.grad[i] * av[i];
      reduce_into(self.inputs[1]->grad_buffer(), tmp, kind);
    }
  };
  return Value(n);
}

Value scale(const Value& a, double s) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  auto n = new_node(std::move(out), {a.node()}, "scale");
  n->backprop = [s](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += s * self.grad[i];
  };
  return Value(n);
}

Value relu(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  auto n = new_node(std::move(out), {a.node()}, "relu");
  n->backprop = [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += x[i] > 0.0 ? self.grad[i] : 0.0;
  };
  return Value(n);
}

Value gelu(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  auto n = new_node(std::move(out), {a.node()}, "gelu");
  n->backprop = [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      da[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  };
  return Value(n);
}

Value exp(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  auto n = new_node(std::move(out), {a.node()}, "exp");
  n->backprop = [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * self.value[i];
  };
  return Value(n);
}

Value log(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  auto n = new_node(std::move(out), {a.node()}, "log");
  n->backprop = [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] / x[i];
  };
  return Value(n);
}

Value clamp_max(const Value& a, double cap) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], cap);
  auto n = new_node(std::move(out), {a.node()}, "clamp_max");
  n->backprop = [cap](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += x[i] < cap ? self.grad[i] : 0.0;
  };
  return Value(n);
}

Value matmul(const Value& a, const Value& b, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2) throw std::invalid_argument("matmul: left operand must have rank >= 2, got " + shape_str(as));
  const bool shared_b = bs.size() == 2 && as.size() != bs.size();
  if (!shared_b && bs.size() != as.size()) {
    throw std::invalid_argument("matmul: incompatible ranks " + shape_str(as) + " and " + shape_str(bs));
  }
  const int64_t m = as[as.size() - 2];
  const int64_t k = as[as.size() - 1];
  const int64_t bk = trans_b ? bs.back() : bs[bs.size() - 2];
  const int64_t n = trans_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) {
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(as) + (trans_b ? " x T" : " x ") +
                                shape_str(bs));
  }
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  if (!shared_b && bs.size() == as.size()) {
    for (size_t i = 0; i + 2 < as.size(); ++i) {
      if (bs[i] != as[i]) throw std::invalid_argument("matmul: batch dims differ, " + shape_str(as) + " vs " + shape_str(bs));
    }
  }
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);

  const double* pa = a.val().data();
  const double* pb = b.val().data();
  double* pc = out.data();
  const int64_t a_stride = m * k, b_stride = shared_b ? 0 : (trans_b ? n * k : k * n), c_stride = m * n;
  for (int64_t bi = 0; bi < batch; ++bi) {
    if (trans_b) {
      mm_nt(pc + bi * c_stride, pa + bi * a_stride, pb + bi * b_stride, m, k, n);
    } else {
      mm_nn(pc + bi * c_stride, pa + bi * a_stride, pb + bi * b_stride, m, k, n);
    }
  }

  auto node = new_node(std::move(out), {a.node(), b.node()}, "matmul");
  node->backprop = [m, k, n, batch, shared_b, trans_b, a_stride, b_stride, c_stride](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    const Tensor& g = self.grad;
    if (self.inputs[0]->requires_grad) {
      Tensor& da = self.inputs[0]->grad_buffer();
      for (int64_t bi = 0; bi < batch; ++bi) {
        const double* gp = g.data() + bi * c_stride;
        const double* bp = bv.data() + bi * b_stride;
        double* dap = da.data() + bi * a_stride;
        if (trans_b) {
          mm_nn(dap, gp, bp, m, n, k);  // dA = g * B, B stored [n, k]
        } else {
          mm_nt(dap, gp, bp, m, n, k);  // dA = g * B^T, B stored [k, n]
        }
      }
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& db = self.inputs[1]->grad_buffer();
      for (int64_t bi = 0; bi < batch; ++bi) {
        const double* gp = g.data() + bi * c_stride;
        const double* ap = av.data() + bi * a_stride;
        double* dbp = db.data() + bi * b_stride;
        if (trans_b) {
          mm_tn(dbp, gp, ap, m, n, k);  // dB[n,k] = g^T * A
        } else {
          mm_tn(dbp, ap, gp, m, k, n);  // dB[k,n] = A^T * g
        }
      }
    }
  };
  return Value(node);
}

Value softmax_last(const Value& a) {
  const int64_t d = last_extent(a, "softmax_last");
  const int64_t rows = a.val().size() / d;
  Tensor out(a.shape());
  const Tensor& x = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x.data() + r * d;
    double* dst = out.data() + r * d;
    double mx = src[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, src[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (int64_t j = 0; j < d; ++j) dst[j] /= sum;
  }
  auto n = new_node(std::move(out), {a.node()}, "softmax");
  n->backprop = [d, rows](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double* dst = da.data() + r * d;
      double gy = 0.0;
      for (int64_t j = 0; j < d; ++j) gy += g[j] * y[j];
      for (int64_t j = 0; j < d; ++j) dst[j] += y[j] * (g[j] - gy);
    }
  };
  return Value(n);
}

Value logsumexp_last(const Value& a) {
  const int64_t d = last_extent(a, "logsumexp_last");
  const int64_t rows = a.val().size() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out = rows == 1 && out_shape.empty() ? Tensor::scalar(0.0) : Tensor::zeros(out_shape);
  const Tensor& x = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x.data() + r * d;
    double mx = src[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, src[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) sum += std::exp(src[j] - mx);
    out[r] = mx + std::log(sum);
  }
  auto n = new_node(std::move(out), {a.node()}, "logsumexp");
  n->backprop = [d, rows](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x2 = self.inputs[0]->value;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      const double lse = self.value[r];
      const double g = self.grad[r];
      const double* src = x2.data() + r * d;
      double* dst = da.data() + r * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += g * std::exp(src[j] - lse);
    }
  };
  return Value(n);
}

Value l2norm_last(const Value& a, double eps) {
  const int64_t d = last_extent(a, "l2norm_last");
  const int64_t rows = a.val().size() / d;
  Tensor out(a.shape());
  std::vector<double> norms(static_cast<size_t>(rows));
  const Tensor& x = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x.data() + r * d;
    double* dst = out.data() + r * d;
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += src[j] * src[j];
    const double nrm = std::sqrt(s);
    norms[static_cast<size_t>(r)] = nrm;
    const double inv = nrm > eps ? 1.0 / nrm : 1.0 / (nrm + eps);
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j] * inv;
  }
  auto n = new_node(std::move(out), {a.node()}, "l2norm");
  n->backprop = [d, rows, eps, norms = std::move(norms)](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x2 = self.inputs[0]->value;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      const double nrm = norms[static_cast<size_t>(r)];
      const double denom = nrm > eps ? nrm : nrm + eps;
      const double* src = x2.data() + r * d;
      const double* g = self.grad.data() + r * d;
      double* dst = da.data() + r * d;
      double xg = 0.0;
      for (int64_t j = 0; j < d; ++j) xg += src[j] * g[j];
      const double coef = nrm > 1e-300 ? xg / (nrm * denom * denom) : 0.0;
      for (int64_t j = 0; j < d; ++j) dst[j] += g[j] / denom - src[j] * coef;
    }
  };
  return Value(n);
}

Value layer_norm(const Value& x, const Value& gamma, const Value& beta, double eps) {
  const int64_t d = last_extent(x, "layer_norm");
  if (gamma.val().size() != d || beta.val().size() != d) {
    throw std::invalid_argument("layer_norm: gamma/beta must have extent " + std::to_string(d));
  }
  const int64_t rows = x.val().size() / d;
  Tensor out(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> means(static_cast<size_t>(rows));
  const Tensor& xv = x.val();
  const Tensor& gv = gamma.val();
  const Tensor& bv = beta.val();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * d;
    double* dst = out.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    means[static_cast<size_t>(r)] = mu;
    inv_std[static_cast<size_t>(r)] = inv;
    for (int64_t j = 0; j < d; ++j) dst[j] = (src[j] - mu) * inv * gv[j] + bv[j];
  }
  auto n = new_node(std::move(out), {x.node(), gamma.node(), beta.node()}, "layer_norm");
  n->backprop = [d, rows, means = std::move(means), inv_std = std::move(inv_std)](Node& self) {
    const Tensor& xv2 = self.inputs[0]->value;
    const Tensor& gv2 = self.inputs[1]->value;
    for (int64_t r = 0; r < rows; ++r) {
      const double mu = means[static_cast<size_t>(r)];
      const double inv = inv_std[static_cast<size_t>(r)];
      const double* src = xv2.data() + r * d;
      const double* g = self.grad.data() + r * d;
      // xh_j = (x_j - mu) * inv
      if (self.inputs[0]->requires_grad) {
        double* dst = self.inputs[0]->grad_buffer().data() + r * d;
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double xh = (src[j] - mu) * inv;
          const double dxh = g[j] * gv2[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh;
        }
        mean_dxh /= static_cast<double>(d);
        mean_dxh_xh /= static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) {
          const double xh = (src[j] - mu) * inv;
          const double dxh = g[j] * gv2[j];
          dst[j] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
        }
      }
      if (self.inputs[1]->requires_grad) {
        double* dg = self.inputs[1]->grad_buffer().data();
        for (int64_t j = 0; j < d; ++j) dg[j] += g[j] * (src[j] - mu) * inv;
      }
      if (self.inputs[2]->requires_grad) {
        double* db = self.inputs[2]->grad_buffer().data();
        for (int64_t j = 0; j < d; ++j) db[j] += g[j];
      }
    }
  };
  return Value(n);
}

Value sum_last(const Value& a) {
  const int64_t d = last_extent(a, "sum_last");
  const int64_t rows = a.val().size() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out = out_shape.empty() ? Tensor::scalar(0.0) : Tensor::zeros(out_shape);
  const Tensor& x = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* src = x.data() + r * d;
    for (int64_t j = 0; j < d; ++j) s += src[j];
    out[r] = s;
  }
  auto n = new_node(std::move(out), {a.node()}, "sum_last");
  n->backprop = [d, rows](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      double* dst = da.data() + r * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += g;
    }
  };
  return Value(n);
}

Value sum_all(const Value& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.val().size(); ++i) s += a.val()[i];
  auto n = new_node(Tensor::scalar(s), {a.node()}, "sum_all");
  n->backprop = [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    const double g = self.grad[0];
    for (int64_t i = 0; i < da.size(); ++i) da[i] += g;
  };
  return Value(n);
}

Value mean_all(const Value& a) {
  const double inv = 1.0 / static_cast<double>(a.val().size());
  return scale(sum_all(a), inv);
}

Value reshape(const Value& a, Shape shape) {
  if (numel(shape) != a.val().size()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) + " changes element count");
  }
  Tensor out(shape, std::vector<double>(a.val().data(), a.val().data() + a.val().size()));
  auto n = new_node(std::move(out), {a.node()}, "reshape");
  n->backprop = [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
  };
  return Value(n);
}

namespace {

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace

Value permute(const Value& a, const std::vector<int64_t>& perm) {
  const Shape& as = a.shape();
  if (perm.size() != as.size()) throw std::invalid_argument("permute: perm rank mismatch");
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = as[static_cast<size_t>(perm[i])];
  const auto in_strides = strides_of(as);
  const auto out_strides = strides_of(out_shape);
  const int64_t total = a.val().size();
  Tensor out(out_shape);
  const Tensor& x = a.val();
  const size_t rank = as.size();
  std::vector<int64_t> src_stride_for_out(rank);
  for (size_t i = 0; i < rank; ++i) src_stride_for_out[i] = in_strides[static_cast<size_t>(perm[i])];
  for (int64_t oi = 0; oi < total; ++oi) {
    int64_t rem = oi, si = 0;
    for (size_t i = 0; i < rank; ++i) {
      const int64_t c = rem / out_strides[i];
      rem -= c * out_strides[i];
      si += c * src_stride_for_out[i];
    }
    out[oi] = x[si];
  }
  auto n = new_node(std::move(out), {a.node()}, "permute");
  n->backprop = [out_strides, src_stride_for_out, total, rank](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t oi = 0; oi < total; ++oi) {
      int64_t rem = oi, si = 0;
      for (size_t i = 0; i < rank; ++i) {
        const int64_t c = rem / out_strides[i];
        rem -= c * out_strides[i];
        si += c * src_stride_for_out[i];
      }
      da[si] += self.grad[oi];
    }
  };
  return Value(n);
}

Value slice_last(const Value& a, int64_t offset, int64_t len) {
  const int64_t d = last_extent(a, "slice_last");
  if (offset < 0 || len <= 0 || offset + len > d) {
    throw std::invalid_argument("slice_last: range [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                                ") invalid for extent " + std::to_string(d));
  }
  const int64_t rows = a.val().size() / d;
  Shape out_shape = a.shape();
  out_shape.back() = len;
  Tensor out(out_shape);
  const Tensor& x = a.val();
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = x.data() + r * d + offset;
    double* dst = out.data() + r * len;
    for (int64_t j = 0; j < len; ++j) dst[j] = src[j];
  }
  auto n = new_node(std::move(out), {a.node()}, "slice_last");
  n->backprop = [d, rows, offset, len](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t r = 0; r < rows; ++r) {
      double* dst = da.data() + r * d + offset;
      const double* g = self.grad.data() + r * len;
      for (int64_t j = 0; j < len; ++j) dst[j] += g[j];
    }
  };
  return Value(n);
}

Value slice_axis1(const Value& a, int64_t offset, int64_t len) {
  if (a.shape().size() != 3) throw std::invalid_argument("slice_axis1: expected rank 3, got " + shape_str(a.shape()));
  const int64_t b = a.shape()[0], t = a.shape()[1], d = a.shape()[2];
  if (offset < 0 || len <= 0 || offset + len > t) throw std::invalid_argument("slice_axis1: range invalid");
  Tensor out({b, len, d});
  const Tensor& x = a.val();
  for (int64_t bi = 0; bi < b; ++bi) {
    const double* src = x.data() + (bi * t + offset) * d;
    double* dst = out.data() + bi * len * d;
    for (int64_t j = 0; j < len * d; ++j) dst[j] = src[j];
  }
  auto n = new_node(std::move(out), {a.node()}, "slice_axis1");
  n->backprop = [b, t, d, offset, len](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t bi = 0; bi < b; ++bi) {
      double* dst = da.data() + (bi * t + offset) * d;
      const double* g = self.grad.data() + bi * len * d;
      for (int64_t j = 0; j < len * d; ++j) dst[j] += g[j];
    }
  };
  return Value(n);
}

Value select_axis1(const Value& a, const std::vector<int64_t>& idx) {
  if (a.shape().size() != 3) throw std::invalid_argument("select_axis1: expected rank 3, got " + shape_str(a.shape()));
  const int64_t b = a.shape()[0], t = a.shape()[1], d = a.shape()[2];
  if (static_cast<int64_t>(idx.size()) != b) throw std::invalid_argument("select_axis1: index count mismatch");
  for (int64_t i : idx) {
    if (i < 0 || i >= t) throw std::invalid_argument("select_axis1: index out of range");
  }
  Tensor out({b, d});
  const Tensor& x = a.val();
  for (int64_t bi = 0; bi < b; ++bi) {
    const double* src = x.data() + (bi * t + idx[static_cast<size_t>(bi)]) * d;
    double* dst = out.data() + bi * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  auto n = new_node(std::move(out), {a.node()}, "select_axis1");
  n->backprop = [b, t, d, idx](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t bi = 0; bi < b; ++bi) {
      double* dst = da.data() + (bi * t + idx[static_cast<size_t>(bi)]) * d;
      const double* g = self.grad.data() + bi * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  };
  return Value(n);
}

Value prepend_row(const Value& a, const Value& row) {
  if (a.shape().size() != 3) throw std::invalid_argument("prepend_row: expected rank 3, got " + shape_str(a.shape()));
  const int64_t b = a.shape()[0], t = a.shape()[1], d = a.shape()[2];
  if (row.val().size() != d) throw std::invalid_argument("prepend_row: row width mismatch");
  Tensor out({b, t + 1, d});
  const Tensor& x = a.val();
  const Tensor& rv = row.val();
  for (int64_t bi = 0; bi < b; ++bi) {
    double* dst = out.data() + bi * (t + 1) * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = rv[j];
    const double* src = x.data() + bi * t * d;
    for (int64_t j = 0; j < t * d; ++j) dst[d + j] = src[j];
  }
  auto n = new_node(std::move(out), {a.node(), row.node()}, "prepend_row");
  n->backprop = [b, t, d](Node& self) {
    if (self.inputs[1]->requires_grad) {
      Tensor& dr = self.inputs[1]->grad_buffer();
      for (int64_t bi = 0; bi < b; ++bi) {
        const double* g = self.grad.data() + bi * (t + 1) * d;
        for (int64_t j = 0; j < d; ++j) dr[j] += g[j];
      }
    }
    if (self.inputs[0]->requires_grad) {
      Tensor& da = self.inputs[0]->grad_buffer();
      for (int64_t bi = 0; bi < b; ++bi) {
        const double* g = self.grad.data() + bi * (t + 1) * d + d;
        double* dst = da.data() + bi * t * d;
        for (int64_t j = 0; j < t * d; ++j) dst[j] += g[j];
      }
    }
  };
  return Value(n);
}

Value gather_rows(const Value& table, const std::vector<int64_t>& ids, const Shape& lead) {
  if (table.shape().size() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
  const int64_t v = table.shape()[0], d = table.shape()[1];
  if (numel(lead) != static_cast<int64_t>(ids.size())) throw std::invalid_argument("gather_rows: lead shape mismatch");
  for (int64_t id : ids) {
    if (id < 0 || id >= v) throw std::invalid_argument("gather_rows: row id " + std::to_string(id) + " out of range");
  }
  Shape out_shape = lead;
  out_shape.push_back(d);
  Tensor out(out_shape);
  const Tensor& x = table.val();
  for (size_t i = 0; i < ids.size(); ++i) {
    const double* src = x.data() + ids[i] * d;
    double* dst = out.data() + static_cast<int64_t>(i) * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
  }
  auto n = new_node(std::move(out), {table.node()}, "gather_rows");
  n->backprop = [d, ids](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& dt = self.inputs[0]->grad_buffer();
    for (size_t i = 0; i < ids.size(); ++i) {
      double* dst = dt.data() + ids[i] * d;
      const double* g = self.grad.data() + static_cast<int64_t>(i) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  };
  return Value(n);
}

Value take_diag(const Value& a) {
  if (a.shape().size() != 2 || a.shape()[0] != a.shape()[1]) {
    throw std::invalid_argument("take_diag: expected square matrix, got " + shape_str(a.shape()));
  }
  const int64_t k = a.shape()[0];
  Tensor out({k});
  for (int64_t i = 0; i < k; ++i) out[i] = a.val()[i * k + i];
  auto n = new_node(std::move(out), {a.node()}, "take_diag");
  n->backprop = [k](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& da = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < k; ++i) da[i * k + i] += self.grad[i];
  };
  return Value(n);
}

void backward(const Value& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.val().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Post-order DFS over grad-requiring nodes, then reverse sweep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, bool>> stack;
  stack.emplace_back(loss.node().get(), false);
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (visited.count(node)) continue;
    visited.insert(node);
    stack.emplace_back(node, true);
    for (const auto& in : node->inputs) {
      if (in->requires_grad && !visited.count(in.get())) stack.emplace_back(in.get(), false);
    }
  }

  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->grad.defined()) continue;  // no gradient flowed here
    if (n->backprop) n->backprop(*n);
    if (n->param != nullptr && n->param->trainable) {
      accumulate(n->param->grad, n->grad);
    }
  }
}

}  // namespace ad

std::vector<Tensor> finite_diff_grad(std::span<Parameter* const> params,
                                     const std::function<double()>& f,
                                     double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g = Tensor::zeros(p->value.shape());
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double fp = f();
      p->value[i] = orig - eps;
      const double fm = f();
      p->value[i] = orig;
      g[i] = (fp - fm) / (2.0 * eps);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace pacl

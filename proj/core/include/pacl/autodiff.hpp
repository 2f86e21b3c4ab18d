#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pacl/tensor.hpp"

namespace pacl {

// A tensor with a gradient slot. The trainable flag decides whether
// backward() deposits a gradient and whether the optimizer may touch it.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v, bool train = true)
      : value(std::move(v)), grad(Tensor::zeros(value.shape())), trainable(train) {}

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

struct NamedParam {
  std::string name;
  Parameter* param;
};

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation during backward
  bool requires_grad = false;
  Parameter* param = nullptr;  // set on leaves bound to a Parameter
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backprop;  // pulls this->grad into inputs' grads
  const char* op = "";

  Tensor& grad_buffer();  // lazily zero-initialised, shaped like value
};

// Handle to a graph node. Graphs are built eagerly; backward() walks the
// recorded structure in reverse topological order.
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

Value constant(Tensor t);
Value leaf(Parameter& p);

// ---- elementwise and broadcasting -------------------------------------
// add/sub/mul accept equal shapes, a scalar right operand, or a right
// operand whose shape is a suffix of the left shape (bias rows, positional
// tables, masks); the broadcast gradient sums over the leading dims.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value relu(const Value& a);
Value gelu(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value clamp_max(const Value& a, double cap);

// ---- contractions ------------------------------------------------------
// matmul: [.., m, n] x [n, p] (shared right operand) or rank-matched
// batched [B.., m, n] x [B.., n, p]. With trans_b the right operand is
// given as [p, n] / [B.., p, n].
Value matmul(const Value& a, const Value& b, bool trans_b = false);

// ---- reductions and normalisations (last axis) -------------------------
Value softmax_last(const Value& a);
Value logsumexp_last(const Value& a);
Value l2norm_last(const Value& a, double eps = 1e-12);
Value layer_norm(const Value& x, const Value& gamma, const Value& beta, double eps = 1e-5);
Value sum_last(const Value& a);
Value sum_all(const Value& a);
Value mean_all(const Value& a);

// ---- data movement ------------------------------------------------------
Value reshape(const Value& a, Shape shape);
Value permute(const Value& a, const std::vector<int64_t>& perm);
Value slice_last(const Value& a, int64_t offset, int64_t len);
Value slice_axis1(const Value& a, int64_t offset, int64_t len);      // rank 3
Value select_axis1(const Value& a, const std::vector<int64_t>& idx); // rank 3 -> [B, D]
Value prepend_row(const Value& a, const Value& row);                 // [B,T,D] + [D] -> [B,T+1,D]
Value gather_rows(const Value& table, const std::vector<int64_t>& ids, const Shape& lead);
Value take_diag(const Value& a);  // [k,k] -> [k]

// Accumulates d(loss)/d(param) into Parameter::grad for every trainable
// leaf reachable from `loss`. The loss must be a scalar.
void backward(const Value& loss);

}  // namespace ad

// Central-difference gradient of f with respect to each listed parameter,
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate. Used as the
// independent oracle for ad::backward.
std::vector<Tensor> finite_diff_grad(std::span<Parameter* const> params,
                                     const std::function<double()>& f,
                                     double eps = 1e-5);

}  // namespace pacl

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pacl/autodiff.hpp"
#include "pacl/tensor.hpp"
#include "pacl/util.hpp"

namespace pacl::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Parameter random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Parameter(random_tensor(std::move(shape), rng, lo, hi));
}

// |a-b| / max(1, |a|, |b|), elementwise maximum.
inline double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Backward-vs-central-difference check of a scalar graph over `params`.
// Returns the worst relative error across all parameters.
inline double grad_check(std::vector<Parameter*> params, const std::function<double()>& forward_loss,
                         const std::function<ad::Value()>& build_graph, double eps = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  ad::backward(build_graph());
  const auto fd = finite_diff_grad(params, forward_loss, eps);
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    worst = std::max(worst, max_rel_err(params[i]->grad, fd[i]));
  }
  return worst;
}

}  // namespace pacl::testing

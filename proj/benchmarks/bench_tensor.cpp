#include <benchmark/benchmark.h>

#include "pacl/autodiff.hpp"
#include "pacl/tensor.hpp"
#include "pacl/util.hpp"

namespace {

pacl::Tensor random_tensor(pacl::Shape shape, pacl::Rng& rng) {
  pacl::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  pacl::Rng rng(1);
  const pacl::Tensor a = random_tensor({n, n}, rng);
  const pacl::Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pacl::matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_GraphMatmulBackward(benchmark::State& state) {
  const int64_t n = state.range(0);
  pacl::Rng rng(2);
  pacl::Parameter a(random_tensor({n, n}, rng));
  pacl::Parameter b(random_tensor({n, n}, rng));
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    auto loss = pacl::ad::mean_all(pacl::ad::matmul(pacl::ad::leaf(a), pacl::ad::leaf(b)));
    pacl::ad::backward(loss);
    benchmark::DoNotOptimize(a.grad.data());
  }
}
BENCHMARK(BM_GraphMatmulBackward)->Arg(32)->Arg(64);

}  // namespace

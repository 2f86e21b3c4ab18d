#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "pacl/tensor.hpp"
#include "pacl/util.hpp"

using namespace pacl;

namespace {

// Scalar triple-loop reference, kept deliberately independent of matmul's
// blocked loop order.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int64_t m = a.extent(0), n = a.extent(1), p = b.extent(1);
  Tensor c({m, p});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < n; ++k) s += a.at({i, k}) * b.at({k, j});
      c.at({i, j}) = s;
    }
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and orthogonal rows") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor i2 = Tensor::identity(2);
  CHECK(max_abs_diff(matmul(i2, a), a) == 0.0);

  const Tensor r = Tensor::from({1, 2}, {1, 0});
  const Tensor c = Tensor::from({2, 1}, {0, 1});
  CHECK(matmul(r, c).item() == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle on random shapes") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t m = rng.randint(1, 8), n = rng.randint(1, 8), p = rng.randint(1, 8);
    const Tensor a = random_tensor({m, n}, rng);
    const Tensor b = random_tensor({n, p}, rng);
    CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) <= 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched shapes with both shapes named") {
  const Tensor a({2, 3});
  const Tensor b({4, 5});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("softmax basics") {
  const Tensor s = softmax(Tensor::from({2}, {0, 0}), 0);
  CHECK(s[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-12));

  const Tensor t = softmax(Tensor::from({2}, {1, 0}), 0);
  CHECK(t[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(t[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));

  const Tensor u = softmax(Tensor::from({2}, {1000, 0}), 0);
  CHECK(u.all_finite());
  CHECK(u[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(u[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax sums to one along the reduced axis") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t rows = rng.randint(1, 5), cols = rng.randint(1, 9);
    const double mag = trial % 2 == 0 ? 1.0 : 1e3;
    const Tensor x = random_tensor({rows, cols}, rng, -mag, mag);
    for (int64_t axis = 0; axis < 2; ++axis) {
      const Tensor y = softmax(x, axis);
      const int64_t other = axis == 0 ? cols : rows;
      for (int64_t o = 0; o < other; ++o) {
        double sum = 0.0;
        for (int64_t e = 0; e < x.extent(axis); ++e) {
          sum += axis == 0 ? y.at({e, o}) : y.at({o, e});
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {1, 2}), 1), std::invalid_argument);
}

TEST_CASE("l2_normalize") {
  const Tensor v = l2_normalize(Tensor::from({2}, {3, 4}));
  CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-9));
  CHECK(v[1] == doctest::Approx(0.8).epsilon(1e-9));

  const Tensor unit = Tensor::from({2}, {0, 1});
  CHECK(max_abs_diff(l2_normalize(unit), unit) <= 1e-12);

  const Tensor zero = l2_normalize(Tensor::from({2}, {0, 0}));
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);
}

TEST_CASE("l2_normalize is idempotent away from zero") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t d = rng.randint(1, 16);
    Tensor v = random_tensor({d}, rng, -2.0, 2.0);
    if (norm(v) <= 1e-6) v[0] += 1.0;
    const Tensor once = l2_normalize(v);
    CHECK(max_abs_diff(l2_normalize(once), once) <= 1e-12);
  }
}

TEST_CASE("entropy closed forms") {
  CHECK(entropy(Tensor::from({2}, {0.5, 0.5})) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(entropy(Tensor::from({3}, {0, 1, 0})) == 0.0);

  const Tensor u21 = Tensor::full({21}, 1.0 / 21.0);
  const double h = entropy(u21);
  CHECK(h == doctest::Approx(3.044522437723423).epsilon(1e-12));
  CHECK(h > 1.5);

  CHECK_THROWS_AS(entropy(Tensor::from({2}, {-0.1, 1.1})), std::domain_error);
  CHECK_THROWS_AS(entropy(Tensor::from({2}, {0.5, 0.4})), std::domain_error);
}

TEST_CASE("entropy is maximised by the uniform distribution") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t c = rng.randint(2, 32);
    Tensor p({c});
    double sum = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      p[i] = rng.uniform(1e-6, 1.0);
      sum += p[i];
    }
    for (int64_t i = 0; i < c; ++i) p[i] /= sum;
    CHECK(entropy(p) <= std::log(static_cast<double>(c)) + 1e-12);
  }
}

TEST_CASE("bilinear_resize identity, constancy, and hand case") {
  Rng rng(5);
  const Tensor g = random_tensor({1, 2, 2}, rng);
  CHECK(max_abs_diff(bilinear_resize(g, 2, 2), g) == 0.0);

  const Tensor c = Tensor::full({2, 3, 3}, 0.75);
  const Tensor cr = bilinear_resize(c, 7, 5);
  for (int64_t i = 0; i < cr.size(); ++i) CHECK(cr[i] == doctest::Approx(0.75).epsilon(1e-12));

  const Tensor line = Tensor::from({1, 1, 2}, {0, 1});
  const Tensor wide = bilinear_resize(line, 1, 3);
  CHECK(wide[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(wide[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(wide[2] == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(bilinear_resize(line, 0, 3), std::invalid_argument);
}

TEST_CASE("bilinear_resize 2x2 to 3x3 corner-aligned") {
  const Tensor g = Tensor::from({1, 2, 2}, {0, 1, 2, 3});
  const Tensor r = bilinear_resize(g, 3, 3);
  const double expect[9] = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
  for (int64_t i = 0; i < 9; ++i) CHECK(r[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("tensor shape and element-count invariants") {
  CHECK_THROWS_AS((Tensor({2, 0})), std::invalid_argument);
  CHECK_THROWS_AS((Tensor({2, 2}, {1.0, 2.0})), std::invalid_argument);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK(Tensor::scalar(4.5).rank() == 0);
  CHECK(numel({}) == 1);
}

#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "dietcap/adam.hpp"
#include "dietcap/error.hpp"
#include "dietcap/rng.hpp"
#include "dietcap/tensor.hpp"
#include "support.hpp"

using namespace dietcap;
using T = Tensor<double>;

namespace {

T leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T::from(std::move(shape), std::move(v), true);
}

// Scalar projection with fixed random weights.
T weighted_sum(const T& out) {
  Rng rng(99);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  auto wt = T::from(out.shape(), std::move(w));
  return sum(mul(out, wt));
}

// Analytic gradients of f at `leaves` against central differences.
double max_grad_error(std::vector<T> leaves, const std::function<T(const std::vector<T>&)>& f) {
  auto loss = weighted_sum(f(leaves));
  loss.backward();
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& p : leaves) {
    const std::vector<double> g(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      NoGradGuard ng;
      data[i] = orig + h;
      const double up = weighted_sum(f(leaves)).item();
      data[i] = orig - h;
      const double down = weighted_sum(f(leaves)).item();
      data[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - g[i]) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and matrix ops have matching gradients") {
  CHECK(max_grad_error({leaf({3, 4}, 1), leaf({4, 2}, 2)}, [](const auto& v) { return matmul(v[0], v[1]); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 4}, 3)}, [](const auto& v) { return transpose(v[0]); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 3}, 4), leaf({2, 3}, 5)}, [](const auto& v) { return add(v[0], v[1]); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 3}, 6), leaf({2, 3}, 7)}, [](const auto& v) { return sub(v[0], v[1]); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 3}, 8), leaf({2, 3}, 9)}, [](const auto& v) { return mul(v[0], v[1]); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 2}, 10), leaf({1, 2}, 11)}, [](const auto& v) { return add_row(v[0], v[1]); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 2}, 12)}, [](const auto& v) { return scale(v[0], 2.5); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 2}, 13)}, [](const auto& v) { return add_scalar(v[0], 0.3); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 3}, 14)}, [](const auto& v) { return tanh(v[0]); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 3}, 15, 0.1, 1.0)}, [](const auto& v) { return relu(v[0]); }) < 1e-6);
}

TEST_CASE("normalization and loss ops have matching gradients") {
  CHECK(max_grad_error({leaf({3, 5}, 20)}, [](const auto& v) { return softmax(v[0], 1); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 5}, 21)}, [](const auto& v) { return softmax(v[0], 0); }) < 1e-6);
  const std::vector<std::uint8_t> allowed = {1, 1, 0, 1, 0, 0, 1, 1, 1};
  CHECK(max_grad_error({leaf({3, 3}, 22)}, [&](const auto& v) { return masked_softmax(v[0], allowed); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 6}, 23), leaf({1, 6}, 24), leaf({1, 6}, 25)},
                       [](const auto& v) { return layer_norm(v[0], v[1], v[2], 1e-5); }) < 1e-5);
  const std::vector<int> targets = {0, 3, 2};
  CHECK(max_grad_error({leaf({3, 4}, 26)}, [&](const auto& v) { return cross_entropy(v[0], targets); }) < 1e-6);
}

TEST_CASE("structural ops have matching gradients") {
  const std::vector<int> ids = {2, 0, 2};
  CHECK(max_grad_error({leaf({4, 3}, 30)}, [&](const auto& v) { return embedding(v[0], ids); }) < 1e-6);
  CHECK(max_grad_error({leaf({1, 3}, 31), leaf({2, 3}, 32)},
                       [](const auto& v) { return concat_rows(std::span<const T>(v.data(), 2)); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 1}, 33), leaf({2, 3}, 34)},
                       [](const auto& v) { return concat_cols(std::span<const T>(v.data(), 2)); }) < 1e-6);
  CHECK(max_grad_error({leaf({4, 3}, 35)}, [](const auto& v) { return slice_rows(v[0], 1, 2); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 4}, 36)}, [](const auto& v) { return slice_cols(v[0], 1, 2); }) < 1e-6);
  CHECK(max_grad_error({leaf({2, 6}, 37)}, [](const auto& v) { return reshape(v[0], {3, 4}); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 4}, 38)}, [](const auto& v) { return mean_rows(v[0]); }) < 1e-6);
  CHECK(max_grad_error({leaf({3, 4}, 39)}, [](const auto& v) { return mean(v[0]); }) < 1e-6);
  CHECK(max_grad_error({leaf({5, 4, 2}, 40)}, [](const auto& v) { return im2col(v[0], 3, 2, 1); }) < 1e-6);
}

TEST_CASE("a tensor used twice accumulates both gradient paths") {
  auto x = T::from({1, 2}, {1.5, -2.0}, true);
  auto y = sum(mul(x, x));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
}

TEST_CASE("matmul matches a hand-computed product") {
  auto a = T::from({2, 2}, {1, 2, 3, 4});
  auto b = T::from({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("im2col geometry follows the stride and padding formula") {
  const auto g = conv_output(5, 4, 3, 2, 1);
  CHECK(g.out_height == 3);
  CHECK(g.out_width == 2);
  auto x = T::from({5, 4, 2}, std::vector<double>(40, 1.0));
  auto cols = im2col(x, 3, 2, 1);
  CHECK(cols.dim(0) == 6);
  CHECK(cols.dim(1) == 18);
}

TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
  auto x = leaf({4, 5}, 50, -30.0, 30.0);
  std::vector<std::uint8_t> allowed(20, 1);
  allowed[3] = allowed[7] = allowed[19] = 0;
  auto p = masked_softmax(x, allowed);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += p.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK(p.at(0, 3) == 0.0);
  CHECK(p.at(1, 2) == 0.0);
  CHECK(p.at(3, 4) == 0.0);
}

TEST_CASE("softmax is stable for large logits") {
  auto x = T::from({1, 3}, {1000.0, 1000.0, -1000.0});
  auto p = softmax(x, 1);
  CHECK(p.at(0, 0) == doctest::Approx(0.5));
  CHECK(p.at(0, 2) == 0.0);
}

TEST_CASE("cross entropy of uniform logits is ln V") {
  auto x = T::zeros({3, 7});
  const std::vector<int> t = {1, 2, 6};
  CHECK(cross_entropy(x, t).item() == doctest::Approx(std::log(7.0)));
}

TEST_CASE("backward twice on the same graph is rejected") {
  auto x = leaf({2, 2}, 60);
  auto y = sum(mul(x, x));
  y.backward();
  CHECK_THROWS_AS(y.backward(), Error);
}

TEST_CASE("no-grad guard records nothing and restores the previous mode") {
  auto x = leaf({2, 2}, 61);
  {
    NoGradGuard ng;
    CHECK_FALSE(grad_enabled());
    auto y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("shape and index errors are classified") {
  auto a = T::zeros({2, 3});
  auto b = T::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Dimension);
  }
  const std::vector<int> bad = {0, 9};
  try {
    cross_entropy(a, bad);
    FAIL("expected an index error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Index);
  }
  auto nan = T::from({1, 2}, {std::numeric_limits<double>::quiet_NaN(), 0.0});
  try {
    softmax(nan, 1);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Numeric);
  }
}

TEST_CASE("adam first step moves each parameter by lr against the gradient sign") {
  // Bias-corrected first step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  auto p = T::from({1, 3}, {1.0, -2.0, 0.5}, true);
  auto loss = sum(mul(p, T::from({1, 3}, {2.0, -0.5, 0.0})));
  loss.backward();
  AdamState<double> state(AdamOptions{0.1, 0.9, 0.999, 1e-8});
  std::vector<T> params = {p};
  adam_step<double>(params, state);
  CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)));
  CHECK(p.data()[1] == doctest::Approx(-2.0 + 0.1 * 0.5 / (0.5 + 1e-8)));
  CHECK(p.data()[2] == doctest::Approx(0.5));
}

TEST_CASE("adam matches an independent two-step recurrence") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g1 = 0.3, g2 = -0.7;
  double m = 0, v = 0, x = 1.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  auto p = T::from({1, 1}, {1.0}, true);
  AdamState<double> state(AdamOptions{lr, b1, b2, eps});
  for (double g : {g1, g2}) {
    p.zero_grad();
    auto loss = sum(mul(p, T::from({1, 1}, {g})));
    loss.backward();
    std::vector<T> params = {p};
    adam_step<double>(params, state);
  }
  CHECK(p.data()[0] == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("rng streams are reproducible and forks are independent of later draws") {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(7);
  auto f1 = c.fork(1);
  Rng d(7);
  auto f2 = d.fork(1);
  CHECK(f1.next_u64() == f2.next_u64());
  double lo = 1.0, hi = 0.0;
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
}

#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "viact/ops.hpp"

using namespace viact;
using viact::testing::gradcheck;
using viact::testing::project;
using viact::testing::random_tensor;

namespace {
constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 10;

std::vector<double> vals(const Tensor& t) { return t.to_vector(); }
}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
  Tensor id = Tensor::from({1, 0, 0, 1}, {2, 2});
  Tensor b = Tensor::from({3, 4, 5, 6}, {2, 2});
  CHECK(vals(matmul(id, b)) == std::vector<double>{3, 4, 5, 6});
  Tensor row = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({3, 4}, {2, 1});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("matmul: gradient of sum vs finite differences, 4x5 by 5x3") {
  DTypeScope f64(DType::f64);
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    CHECK(gradcheck([&] { return sum_all(matmul(a, b)); }, {a, b}) < 1e-6);
  }
}

TEST_CASE("matmul: batched, broadcast and transposed variants") {
  DTypeScope f64(DType::f64);
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({2, 3, 4, 5}, rng);
  Tensor w = random_tensor({5, 2}, rng);
  Tensor bb = random_tensor({2, 3, 5, 4}, rng);
  Tensor bt = random_tensor({2, 3, 6, 5}, rng);
  Tensor m = random_tensor({4, 5}, rng);
  CHECK(gradcheck([&] { return project(matmul(a, w)); }, {a, w}) < kGradTol);
  CHECK(gradcheck([&] { return project(matmul(a, bb)); }, {a, bb}) < kGradTol);
  CHECK(gradcheck([&] { return project(matmul(a, bt, true)); }, {a, bt}) < kGradTol);
  CHECK(gradcheck([&] { return project(matmul(m, bb)); }, {m, bb}) < kGradTol);

  // Transposed layout agrees with an explicit transpose.
  auto lhs = vals(matmul(a, bt, true));
  auto rhs = vals(matmul(a, transpose(bt, -1, -2)));
  REQUIRE(lhs.size() == rhs.size());
  for (size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));
}

TEST_CASE("softmax: symmetry, stabilization, gradient") {
  auto s = vals(softmax(Tensor::from({0, 0, 0}, {3}), 0));
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0));
  auto big = vals(softmax(Tensor::from({1000, 0}, {2}), 0));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  DTypeScope f64(DType::f64);
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({6}, rng, -3, 3);
    CHECK(gradcheck([&] { return project(softmax(x, 0)); }, {x}) < 1e-6);
    Tensor y = random_tensor({3, 4, 2}, rng, -3, 3);
    CHECK(gradcheck([&] { return project(softmax(y, 1)); }, {y}) < kGradTol);
  }
}

TEST_CASE("softmax: rows sum to one along any axis") {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({3, 5, 4}, rng, -10, 10, false);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor total = sum(softmax(x, axis), axis);
    for (double v : vals(total)) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("layernorm: constant row, hand case, gradient") {
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  for (double v : vals(layernorm(Tensor::full({2, 4}, 3.5), gain, bias, 1e-6))) CHECK(v == 0.0);

  DTypeScope f64(DType::f64);
  auto r = vals(layernorm(Tensor::from({1, 3}, {1, 2}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12));
  CHECK(r[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(r[1] == doctest::Approx(1.0).epsilon(1e-9));

  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({3, 7}, rng, -2, 2);
    Tensor g = random_tensor({7}, rng, 0.5, 1.5);
    Tensor b = random_tensor({7}, rng);
    CHECK(gradcheck([&] { return project(layernorm(x, g, b, 1e-5)); }, {x, g, b}) < kGradTol);
  }
}

TEST_CASE("gelu: exact erf form, asymptotes, gradient") {
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(gelu(Tensor::scalar(10.0)).item() == doctest::Approx(10.0));
  CHECK(gelu(Tensor::scalar(-10.0)).item() == doctest::Approx(0.0));
  DTypeScope f64(DType::f64);
  // x * Phi(x) at x = 1: Phi(1) = 0.8413447460685429
  CHECK(gelu(Tensor::scalar(1.0)).item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  Tensor x = Tensor::from({-2, -0.5, 0.5, 2}, {4}, true);
  CHECK(gradcheck([&] { return project(gelu(x)); }, {x}) < kGradTol);
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor y = random_tensor({8}, rng, -3, 3);
    CHECK(gradcheck([&] { return project(gelu(y)); }, {y}) < kGradTol);
  }
}

TEST_CASE("elementwise, reductions and shape ops: gradients over seeds") {
  DTypeScope f64(DType::f64);
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(100 + seed);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor c = random_tensor({2, 3, 4}, rng);
    Tensor d = random_tensor({2, 2, 4}, rng);
    CHECK(gradcheck([&] { return project(add(a, b)); }, {a, b}) < kGradTol);
    CHECK(gradcheck([&] { return project(sub(a, c)); }, {a, c}) < kGradTol);
    CHECK(gradcheck([&] { return project(mul(a, b)); }, {a, b}) < kGradTol);
    CHECK(gradcheck([&] { return project(scale(a, -1.7)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(add_scalar(a, 0.3)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(sigmoid(a)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(sum(a, 1)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(mean(a, 2, true)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return mean_all(mul(a, a)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(transpose(a, 0, 2)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(permute(a, {1, 2, 0})); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(reshape(a, {4, -1})); }, {a}) < kGradTol);
    Tensor parts[] = {a, d};
    CHECK(gradcheck([&] { return project(concat(parts, 1)); }, {a, d}) < kGradTol);
    CHECK(gradcheck([&] { return project(slice(a, 2, 1, 2)); }, {a}) < kGradTol);
    std::vector<int64_t> idx{2, 0, 2};
    CHECK(gradcheck([&] { return project(index_select(a, 1, idx)); }, {a}) < kGradTol);
    std::vector<int64_t> rows{1, 1, 0, 2, 0, 1};
    CHECK(gradcheck([&] { return project(gather_rows(a, rows, 3)); }, {a}) < kGradTol);
    CHECK(gradcheck([&] { return project(broadcast_leading(b, {2, 2})); }, {b}) < kGradTol);
  }
}

TEST_CASE("linear, bce_with_logits and mse: gradients over seeds") {
  DTypeScope f64(DType::f64);
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(200 + seed);
    Tensor x = random_tensor({5, 3}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    CHECK(gradcheck([&] { return project(linear(x, w, b)); }, {x, w, b}) < kGradTol);
    Tensor z = random_tensor({6}, rng, -4, 4);
    Tensor y = Tensor::from({1, 0, 1, 1, 0, 0}, {6});
    CHECK(gradcheck([&] { return bce_with_logits(z, y); }, {z}) < kGradTol);
    Tensor p = random_tensor({2, 5}, rng);
    Tensor t = random_tensor({2, 5}, rng);
    CHECK(gradcheck([&] { return mse(p, t); }, {p, t}) < kGradTol);
  }
}

TEST_CASE("bce_with_logits and mse values") {
  DTypeScope f64(DType::f64);
  Tensor zero = Tensor::from({0.0}, {1});
  CHECK(bce_with_logits(zero, Tensor::from({1.0}, {1})).item() == doctest::Approx(std::log(2.0)));
  CHECK(bce_with_logits(Tensor::from({800.0}, {1}), Tensor::from({1.0}, {1})).item() == doctest::Approx(0.0));
  Tensor t = Tensor::from({1, 2, 3, 4}, {2, 2});
  CHECK(mse(t, t).item() == 0.0);
  CHECK(mse(add_scalar(t, 1.0), t).item() == doctest::Approx(1.0));
}

TEST_CASE("broadcasting only over leading dims") {
  Tensor a = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), DimensionError);
  CHECK_THROWS_AS(add(a, Tensor::zeros({2, 1})), DimensionError);
  CHECK_NOTHROW(add(a, Tensor::zeros({3})));
}

TEST_CASE("chain rule: composed graphs match hand-fused gradients") {
  DTypeScope f64(DType::f64);
  std::mt19937_64 rng(7);

  SUBCASE("affine then mse") {
    Tensor x = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng, -1, 1, false);
    Tensor t = random_tensor({3, 4}, rng, -1, 1, false);
    mse(add(scale(x, 2.0), b), t).backward();
    auto g = vals(x.grad());
    auto xv = vals(x), bv = vals(b), tv = vals(t);
    for (size_t i = 0; i < g.size(); ++i) {
      double expected = 2.0 * 2.0 * (2.0 * xv[i] + bv[i % 4] - tv[i]) / 12.0;
      CHECK(g[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("logistic regression") {
    Tensor x = random_tensor({6, 3}, rng, -1, 1, false);
    Tensor w = random_tensor({3, 1}, rng);
    Tensor y = Tensor::from({1, 0, 0, 1, 1, 0}, {6, 1});
    bce_with_logits(matmul(x, w), y).backward();
    auto g = vals(w.grad());
    auto xv = vals(x), wv = vals(w), yv = vals(y);
    for (int j = 0; j < 3; ++j) {
      double expected = 0.0;
      for (int i = 0; i < 6; ++i) {
        double z = xv[i * 3 + 0] * wv[0] + xv[i * 3 + 1] * wv[1] + xv[i * 3 + 2] * wv[2];
        expected += xv[i * 3 + j] * (1.0 / (1.0 + std::exp(-z)) - yv[i]) / 6.0;
      }
      CHECK(g[j] == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("weighted softmax") {
    Tensor x = random_tensor({5}, rng, -2, 2);
    Tensor w = random_tensor({5}, rng, -1, 1, false);
    sum_all(mul(softmax(x, 0), w)).backward();
    auto g = vals(x.grad());
    auto xv = vals(x), wv = vals(w);
    double mx = *std::max_element(xv.begin(), xv.end()), z = 0.0;
    std::vector<double> s(5);
    for (int i = 0; i < 5; ++i) z += s[i] = std::exp(xv[i] - mx);
    double sw = 0.0;
    for (int i = 0; i < 5; ++i) sw += (s[i] /= z) * wv[i];
    for (int i = 0; i < 5; ++i) CHECK(g[i] == doctest::Approx(s[i] * (wv[i] - sw)).epsilon(1e-12));
  }
}

TEST_CASE("forward values do not depend on gradient recording") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor g = random_tensor({6}, rng);
  Tensor b = random_tensor({6}, rng);
  auto run = [&] { return vals(softmax(gelu(layernorm(x, g, b)), -1)); };
  auto with = run();
  std::vector<double> without;
  {
    NoGradGuard ng;
    without = run();
  }
  CHECK(with == without);
  CHECK(run() == with);
}

TEST_CASE("backward: leaf gradients accumulate and have the leaf shape") {
  Tensor x = Tensor::from({1, 2, 3}, {3}, true);
  sum_all(x).backward();
  sum_all(scale(x, 2.0)).backward();
  CHECK(x.grad().shape() == Shape{3});
  for (double v : vals(x.grad())) CHECK(v == 3.0);
  x.zero_grad();
  CHECK_FALSE(x.grad().defined());
}

TEST_CASE("memory stats track tensor storage") {
  auto before = memory_stats().current_bytes;
  {
    Tensor big = Tensor::zeros({1000}, DType::f64, false);
    CHECK(memory_stats().current_bytes - before == 8000);
  }
  CHECK(memory_stats().current_bytes == before);
}

/* Copyright 2026 The ESI-HGE Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "esihge/adam.hpp"
#include "esihge/tensor.hpp"
#include "test_support.hpp"

namespace esihge {
namespace {

using testing::grad_check;
using testing::random_tensor;

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor::from({2, 2, 2}, std::vector<double>(8)), DimensionError);
  const Tensor t = Tensor::zeros({3, 4});
  EXPECT_EQ(t.numel(), 12u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
}

TEST(Matmul, IdentityAndHandProduct) {
  const Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(matmul(id, m).to_vector(), m.to_vector());

  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 1}, {5, 6});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c(0, 0), 17.0);
  EXPECT_DOUBLE_EQ(c(1, 0), 39.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x3]", msg.find("[2x3]") + 1), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor(rng, 3, 3);
  Tensor b = random_tensor(rng, 3, 3);
  const auto check = grad_check({a, b}, [&] { return sum(matmul(a, b)); });
  for (double e : check.rel_error) EXPECT_LT(e, 1e-6);
}

SparseMatrix path_graph_normalized() {
  // A + I for the path 0-1-2, degrees (2, 3, 2).
  const double d[] = {2.0, 3.0, 2.0};
  std::vector<SparseMatrix::Triplet> t;
  const int edges[][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {1, 0}, {1, 2}, {2, 1}};
  for (const auto& e : edges) {
    t.push_back({static_cast<std::size_t>(e[0]), static_cast<std::size_t>(e[1]),
                 1.0 / std::sqrt(d[e[0]] * d[e[1]])});
  }
  return SparseMatrix::from_triplets(3, 3, t);
}

TEST(Spmm, IdentityAndRowSums) {
  std::mt19937_64 rng(3);
  const Tensor d = random_tensor(rng, 4, 3);
  EXPECT_EQ(spmm(SparseMatrix::identity(4), d).to_vector(), d.to_vector());

  const SparseMatrix a = path_graph_normalized();
  const Tensor out = spmm(a, Tensor::full({3, 1}, 1.0));
  const auto dense = a.to_dense();
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 3; ++j) row += dense[i * 3 + j];
    EXPECT_NEAR(out(i, 0), row, 1e-15);
  }
  EXPECT_NEAR(out(0, 0), 0.5 + 1.0 / std::sqrt(6.0), 1e-15);
}

TEST(Spmm, MatchesDensifiedMatmulOnRandomMatrices) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> size(1, 50);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = size(rng), k = 1 + size(rng) % 7;
    const double density = 0.3 * u(rng);
    std::vector<SparseMatrix::Triplet> t;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (u(rng) < density) t.push_back({i, j, 2.0 * u(rng) - 1.0});
    const SparseMatrix s = SparseMatrix::from_triplets(n, n, t);
    const Tensor dense = Tensor::from({n, n}, s.to_dense());
    Tensor d = random_tensor(rng, n, k);
    d.set_requires_grad(true);
    const Tensor a = spmm(s, d);
    const Tensor b = matmul(dense, d);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);

    // Adjoint against the dense path.
    Tensor w = random_tensor(rng, n, k);
    sum(spmm(s, d) * w).backward();
    const std::vector<double> g_sparse(d.grad().begin(), d.grad().end());
    d.zero_grad();
    sum(matmul(dense, d) * w).backward();
    for (std::size_t i = 0; i < g_sparse.size(); ++i) EXPECT_NEAR(g_sparse[i], d.grad()[i], 1e-10);
    d.zero_grad();
  }
}

TEST(Spmm, DimensionMismatch) {
  EXPECT_THROW(spmm(SparseMatrix::identity(3), Tensor::zeros({4, 2})), DimensionError);
}

TEST(SparseMatrix, RejectsBrokenLayout) {
  EXPECT_THROW(SparseMatrix(2, 2, {0, 2, 1}, {0, 1}, {1.0, 1.0}), DimensionError);
  EXPECT_THROW(SparseMatrix(1, 3, {0, 2}, {1, 1}, {1.0, 1.0}), DimensionError);
  EXPECT_THROW(SparseMatrix(1, 3, {0, 2}, {2, 0}, {1.0, 1.0}), DimensionError);
  EXPECT_THROW(SparseMatrix(1, 3, {0, 1}, {0, 1}, {1.0, 1.0}), DimensionError);
}

TEST(Elementwise, ReferenceValues) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  // tanh(x) = Σ 2^{2n}(2^{2n}−1) B_{2n} x^{2n−1} / (2n)!, evaluated as the
  // continued fraction x / (1 + x²/(3 + x²/(5 + ...))).
  const double x = 0.5;
  double cf = 0.0;
  for (int k = 41; k >= 3; k -= 2) cf = x * x / (k + cf);
  const double tanh_ref = x / (1.0 + cf);
  EXPECT_NEAR(tanh(Tensor::scalar(x)).item(), tanh_ref, 1e-15);
  EXPECT_NEAR(tanh_ref, 0.462117, 1e-6);
}

TEST(Elementwise, ReluGradient) {
  Tensor x = Tensor::from({1, 2}, {-1.5, 2.0}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
}

TEST(Elementwise, DomainErrors) {
  EXPECT_THROW(log(Tensor::scalar(-1.0)), DomainError);
  EXPECT_THROW(sqrt(Tensor::scalar(-1e-3)), DomainError);
  EXPECT_THROW(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), DomainError);
  EXPECT_THROW(Tensor::scalar(1.0) / 0.0, DomainError);
}

TEST(Elementwise, BroadcastRules) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor col = Tensor::from({2, 1}, {10, 20});
  const Tensor row = Tensor::from({1, 3}, {1, 0, -1});
  EXPECT_EQ((x + col).to_vector(), (std::vector<double>{11, 12, 13, 24, 25, 26}));
  EXPECT_EQ((x * row).to_vector(), (std::vector<double>{1, 0, -3, 4, 0, -6}));
  EXPECT_THROW(x + Tensor::zeros({3, 2}), DimensionError);
}

TEST(Elementwise, EveryOpPassesFiniteDifferences) {
  std::mt19937_64 rng(21);
  using Fn = std::function<Tensor(const Tensor&, const Tensor&)>;
  const std::vector<std::pair<std::string, Fn>> cases = {
      {"add", [](const Tensor& a, const Tensor& b) { return a + b; }},
      {"sub", [](const Tensor& a, const Tensor& b) { return a - b; }},
      {"mul", [](const Tensor& a, const Tensor& b) { return a * b; }},
      {"div", [](const Tensor& a, const Tensor& b) { return a / (b * b + 0.5); }},
      {"exp", [](const Tensor& a, const Tensor&) { return exp(a); }},
      {"log", [](const Tensor& a, const Tensor&) { return log(a * a + 0.1); }},
      {"sqrt", [](const Tensor& a, const Tensor&) { return sqrt(a * a + 0.1); }},
      {"pow", [](const Tensor& a, const Tensor&) { return pow(a * a + 0.2, 1.7); }},
      {"tanh", [](const Tensor& a, const Tensor&) { return tanh(a); }},
      {"sigmoid", [](const Tensor& a, const Tensor&) { return sigmoid(a); }},
      {"softplus", [](const Tensor& a, const Tensor&) { return softplus(3.0 * a); }},
      {"asinh", [](const Tensor& a, const Tensor&) { return asinh(2.0 * a); }},
      {"relu", [](const Tensor& a, const Tensor&) { return relu(a + 0.05); }},
      {"square", [](const Tensor& a, const Tensor&) { return square(a); }},
      {"rdiv", [](const Tensor& a, const Tensor&) { return 1.0 / (a * a + 0.3); }},
      {"row-broadcast", [](const Tensor& a, const Tensor& b) { return a * slice_cols(b, 0, 1); }},
      {"col-broadcast", [](const Tensor& a, const Tensor& b) {
         return a + gather_rows(b, {1});
       }},
      {"matmul-t", [](const Tensor& a, const Tensor& b) { return matmul(a, transpose(b)); }},
      {"hcat", [](const Tensor& a, const Tensor& b) { return hcat({a, b, a}); }},
      {"gather", [](const Tensor& a, const Tensor&) { return gather_rows(a, {2, 0, 0, 1}); }},
      {"sum-rows", [](const Tensor& a, const Tensor&) { return sum(a, Axis::kRows); }},
      {"mean-cols", [](const Tensor& a, const Tensor&) { return mean(a, Axis::kCols); }},
      {"lse-cols", [](const Tensor& a, const Tensor&) { return logsumexp(a, Axis::kCols); }},
      {"lse-rows", [](const Tensor& a, const Tensor&) { return logsumexp(a, Axis::kRows); }},
      {"lse-all", [](const Tensor& a, const Tensor&) { return logsumexp(a); }},
      {"clamp", [](const Tensor& a, const Tensor&) { return clamp(a, -0.5, 0.5); }},
  };
  for (const auto& [name, fn] : cases) {
    for (int trial = 0; trial < 3; ++trial) {
      Tensor a = random_tensor(rng, 3, 4);
      Tensor b = random_tensor(rng, 3, 4);
      Tensor w = random_tensor(rng, 1, 1, 0.5, 1.5);
      const auto check = grad_check({a, b}, [&] { return sum(fn(a, b) * fn(a, b)) * w; });
      EXPECT_LT(check.worst(), 1e-4) << name;
    }
  }
}

TEST(Reduce, ReferenceValues) {
  EXPECT_NEAR(logsumexp(Tensor::from({1, 2}, {0, 0})).item(), std::numbers::ln2, 1e-15);
  EXPECT_DOUBLE_EQ(logsumexp(Tensor::from({1, 2}, {1000, 1000})).item(),
                   1000.0 + std::numbers::ln2);
  EXPECT_DOUBLE_EQ(mean(Tensor::from({1, 3}, {1, 2, 3})).item(), 2.0);
  EXPECT_THROW(sum(Tensor::zeros({0, 3}), Axis::kRows), DimensionError);
  EXPECT_THROW(logsumexp(Tensor::zeros({2, 0}), Axis::kCols), DimensionError);
  EXPECT_THROW(sum(Tensor::zeros({2, 2}), static_cast<Axis>(4)), DimensionError);
}

TEST(Reduce, LogsumexpBoundsOnRandomInputs) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> scale(-300.0, 300.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 17;
    Tensor x = random_tensor(rng, 1, n, -1.0, 1.0) * std::abs(scale(rng)) + scale(rng);
    const double lse = logsumexp(x).item();
    const double mx = *std::max_element(x.data().begin(), x.data().end());
    ASSERT_TRUE(std::isfinite(lse));
    EXPECT_GE(lse, mx);
    EXPECT_LE(lse, mx + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(Backward, SimpleAndErrorPaths) {
  Tensor x = Tensor::scalar(3.0, true);
  const Tensor y = x * x;
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_THROW(y.backward(), GraphError);

  Tensor v = Tensor::from({1, 2}, {1, 2}, true);
  EXPECT_THROW((v * 2.0).backward(), GraphError);
  EXPECT_THROW((Tensor::scalar(1.0) + 2.0).backward(), GraphError);

  Tensor z = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  (sum(z * 0.0) + 5.0).backward();
  for (double g : z.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, FanOutAccumulates) {
  Tensor x = Tensor::scalar(2.0, true);
  const Tensor a = x * 3.0;
  (a * a + a).backward();  // 9x² + 3x → 18x + 3
  EXPECT_DOUBLE_EQ(x.grad()[0], 39.0);
}

TEST(Backward, VisitsEveryRecordedOperationOnceInReverseOrder) {
  Tensor x = Tensor::from({1, 3}, {0.1, 0.2, 0.3}, true);
  const Tensor a = tanh(x);
  const Tensor b = a * x;
  const Tensor out = sum(b + a);
  EXPECT_LT(a.node()->seq, b.node()->seq);
  EXPECT_LT(b.node()->seq, out.node()->seq);
  out.backward();
  // Released after the pass.
  EXPECT_TRUE(a.node()->inputs.empty());
  EXPECT_TRUE(b.node()->consumed);
  EXPECT_THROW(a + 1.0, GraphError);
}

TEST(Backward, ReplayIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor w = random_tensor(rng, 5, 4);
    w.set_requires_grad(true);
    const Tensor x = random_tensor(rng, 6, 5);
    const Tensor loss = sum(logsumexp(tanh(matmul(x, w)), Axis::kCols));
    loss.backward();
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(NoGrad, SuppressesRecording) {
  Tensor x = Tensor::scalar(1.0, true);
  NoGradGuard guard;
  const Tensor y = x * 2.0;
  EXPECT_FALSE(y.requires_grad());
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p = {1.0, -2.0};
  const std::vector<double> g = {0.0, 0.0};
  AdamState s;
  adam_step(p, g, s, AdamConfig{0.1});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p = {0.0};
  const std::vector<double> g = {1.0};
  AdamState s;
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(p, g, s, cfg);
  // m̂ = 1, v̂ = 1 after bias correction.
  EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto run = [] {
    std::vector<double> p = {0.3, -0.7, 1.1};
    AdamState s;
    for (int i = 0; i < 20; ++i) {
      const std::vector<double> g = {std::sin(i * 1.0), std::cos(i * 0.5), 0.01 * i};
      adam_step(p, g, s, AdamConfig{0.01});
    }
    return p;
  };
  EXPECT_EQ(run(), run());
  std::vector<double> p = {0.0, 0.0};
  AdamState s;
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, s, AdamConfig{}), DimensionError);
}

TEST(Adam, MaximizeAscends) {
  Tensor x = Tensor::scalar(0.0, true);
  Adam opt({x}, AdamConfig{0.1}, /*maximize=*/true);
  (x * 2.0).backward();
  opt.step();
  EXPECT_GT(x.item(), 0.0);
  EXPECT_TRUE(x.grad().empty());
}

}  // namespace
}  // namespace esihge

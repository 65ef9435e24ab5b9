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

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every operation on tracked inputs creates a node holding its value, its
// inputs and an adjoint closure. Nodes carry a global creation sequence
// number, so sorting the reachable nodes by descending sequence replays the
// adjoints in reverse execution order. Tensors are at most rank 2; a rank-1
// tensor behaves as a single row.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "esihge/errors.hpp"

namespace esihge {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// ---------------------------------------------------------------------------
// SparseMatrix
// ---------------------------------------------------------------------------

/// Compressed-row sparse matrix of doubles. Copies share storage.
class SparseMatrix {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  SparseMatrix() {
    auto s = std::make_shared<Storage>();
    s->offsets = {0};
    storage_ = std::move(s);
  }

  SparseMatrix(std::size_t rows, std::size_t cols,
               std::vector<std::size_t> offsets,
               std::vector<std::size_t> indices, std::vector<double> values) {
    auto s = std::make_shared<Storage>();
    s->rows = rows;
    s->cols = cols;
    s->offsets = std::move(offsets);
    s->indices = std::move(indices);
    s->values = std::move(values);
    validate(*s);
    storage_ = std::move(s);
  }

  /// Duplicate coordinates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> triplets) {
    std::sort(triplets.begin(), triplets.end(),
              [](const Triplet& a, const Triplet& b) {
                return a.row != b.row ? a.row < b.row : a.col < b.col;
              });
    std::vector<std::size_t> offsets(rows + 1, 0);
    std::vector<std::size_t> indices;
    std::vector<double> values;
    indices.reserve(triplets.size());
    values.reserve(triplets.size());
    std::size_t prev_row = std::numeric_limits<std::size_t>::max();
    std::size_t prev_col = 0;
    for (const auto& t : triplets) {
      if (t.row >= rows || t.col >= cols) {
        throw DimensionError("triplet (" + std::to_string(t.row) + "," +
                             std::to_string(t.col) + ") outside " +
                             shape_str({rows, cols}));
      }
      if (t.row == prev_row && t.col == prev_col) {
        values.back() += t.value;
        continue;
      }
      indices.push_back(t.col);
      values.push_back(t.value);
      ++offsets[t.row + 1];
      prev_row = t.row;
      prev_col = t.col;
    }
    for (std::size_t r = 0; r < rows; ++r) offsets[r + 1] += offsets[r];
    return SparseMatrix(rows, cols, std::move(offsets), std::move(indices),
                        std::move(values));
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> offsets(n + 1);
    std::vector<std::size_t> indices(n);
    std::iota(offsets.begin(), offsets.end(), std::size_t{0});
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    return SparseMatrix(n, n, std::move(offsets), std::move(indices),
                        std::vector<double>(n, 1.0));
  }

  /// Row-major dense values, keeping only nonzero entries.
  static SparseMatrix from_dense(std::size_t rows, std::size_t cols,
                                 std::span<const double> dense) {
    if (dense.size() != rows * cols) {
      throw DimensionError("dense buffer of " + std::to_string(dense.size()) +
                           " values does not match " +
                           shape_str({rows, cols}));
    }
    std::vector<std::size_t> offsets(rows + 1, 0);
    std::vector<std::size_t> indices;
    std::vector<double> values;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = dense[r * cols + c];
        if (v != 0.0) {
          indices.push_back(c);
          values.push_back(v);
        }
      }
      offsets[r + 1] = indices.size();
    }
    return SparseMatrix(rows, cols, std::move(offsets), std::move(indices),
                        std::move(values));
  }

  std::size_t rows() const { return storage_->rows; }
  std::size_t cols() const { return storage_->cols; }
  std::size_t nnz() const { return storage_->values.size(); }
  std::span<const std::size_t> offsets() const { return storage_->offsets; }
  std::span<const std::size_t> indices() const { return storage_->indices; }
  std::span<const double> values() const { return storage_->values; }

  double density() const {
    const double total = static_cast<double>(rows()) * static_cast<double>(cols());
    return total > 0 ? static_cast<double>(nnz()) / total : 0.0;
  }

  /// Value at (r, c), zero when not stored.
  double at(std::size_t r, std::size_t c) const {
    const auto& s = *storage_;
    const auto first = s.indices.begin() + static_cast<std::ptrdiff_t>(s.offsets[r]);
    const auto last = s.indices.begin() + static_cast<std::ptrdiff_t>(s.offsets[r + 1]);
    const auto it = std::lower_bound(first, last, c);
    if (it == last || *it != c) return 0.0;
    return s.values[static_cast<std::size_t>(it - s.indices.begin())];
  }

  SparseMatrix transpose() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for_each([&](std::size_t r, std::size_t c, double v) { t.push_back({c, r, v}); });
    return from_triplets(cols(), rows(), std::move(t));
  }

  std::vector<double> to_dense() const {
    std::vector<double> out(rows() * cols(), 0.0);
    for_each([&](std::size_t r, std::size_t c, double v) { out[r * cols() + c] = v; });
    return out;
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    const auto& s = *storage_;
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t k = s.offsets[r]; k < s.offsets[r + 1]; ++k) {
        fn(r, s.indices[k], s.values[k]);
      }
    }
  }

 private:
  struct Storage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> indices;
    std::vector<double> values;
  };

  static void validate(const Storage& s) {
    if (s.offsets.size() != s.rows + 1) {
      throw DimensionError("sparse offsets length " +
                           std::to_string(s.offsets.size()) + " != rows + 1");
    }
    if (s.indices.size() != s.values.size()) {
      throw DimensionError("sparse index/value length mismatch");
    }
    if (s.offsets.front() != 0 || s.offsets.back() != s.values.size()) {
      throw DimensionError("sparse offsets must start at 0 and end at nnz");
    }
    for (std::size_t r = 0; r < s.rows; ++r) {
      if (s.offsets[r] > s.offsets[r + 1]) {
        throw DimensionError("sparse offsets not monotone at row " +
                             std::to_string(r));
      }
      for (std::size_t k = s.offsets[r]; k < s.offsets[r + 1]; ++k) {
        if (s.indices[k] >= s.cols) {
          throw DimensionError("sparse column index out of range in row " +
                               std::to_string(r));
        }
        if (k > s.offsets[r] && s.indices[k] <= s.indices[k - 1]) {
          throw DimensionError("sparse column indices not strictly increasing in row " +
                               std::to_string(r));
        }
      }
    }
  }

  std::shared_ptr<const Storage> storage_;
};

// ---------------------------------------------------------------------------
// Computation record
// ---------------------------------------------------------------------------

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> adjoint;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables recording for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape.size() > 2) {
      throw DimensionError("tensors are at most rank 2, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = detail::next_seq();
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1, 1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::size_t rows() const {
    const auto& s = node_->shape;
    return s.size() < 2 ? 1 : s[0];
  }
  std::size_t cols() const {
    const auto& s = node_->shape;
    if (s.empty()) return 1;
    return s.size() == 1 ? s[0] : s[1];
  }

  std::span<const double> data() const { return node_->value; }
  std::vector<double> to_vector() const { return node_->value; }
  double operator()(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  double item() const {
    if (numel() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  /// In-place access for leaves only (optimizers, initializers).
  std::span<double> mutable_data() {
    if (!node_->leaf) {
      throw GraphError("mutable_data() on a non-leaf tensor (" +
                       std::string(node_->op) + ")");
    }
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  const char* op_name() const { return node_->op; }

  Tensor& set_requires_grad(bool flag) {
    if (!node_->leaf) {
      throw GraphError("requires_grad can only be toggled on leaves");
    }
    node_->requires_grad = flag;
    return *this;
  }

  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Untracked leaf holding a copy of the current values.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Populates gradients of every tracked leaf reachable from this scalar.
  /// The record is released afterwards; calling again is an error.
  void backward() const;

  // Internal construction hook for operations.
  static Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> adjoint,
                        const char* op) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    node->seq = detail::next_seq();
    node->leaf = false;
    bool track = false;
    if (detail::grad_mode()) {
      for (const auto& in : inputs) {
        if (in.node_->consumed) {
          throw GraphError(std::string("operation '") + op +
                           "' consumes a tensor whose record was already released");
        }
        track = track || in.node_->requires_grad;
      }
    }
    if (track) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node_);
      node->adjoint = std::move(adjoint);
    }
    return Tensor(std::move(node));
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

inline void Tensor::backward() const {
  if (numel() != 1) {
    throw GraphError("backward() needs a scalar output, got shape " +
                     shape_str(shape()));
  }
  if (node_->consumed) {
    throw GraphError("backward() called twice on the same record");
  }
  if (!node_->requires_grad) {
    throw GraphError("backward() on an output detached from every tracked leaf");
  }
  if (node_->leaf) {
    node_->grad_buffer()[0] += 1.0;
    return;
  }

  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{node_};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  node_->grad_buffer()[0] = 1.0;
  for (auto& n : order) {
    if (n->leaf) continue;
    if (n->adjoint && n->grad.size() == n->value.size()) n->adjoint(*n);
    n->adjoint = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap as_matrix(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline MutMap as_matrix(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MutMap(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

inline bool wants_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df, const char* name) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::make_op(
      x.shape(), std::move(out), {x},
      [df](Node& self) {
        auto& src = *self.inputs[0];
        auto& g = src.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i] * df(src.value[i], self.value[i]);
        }
      },
      name);
}

struct Broadcast {
  std::size_t rows, cols;
  bool x_row1, x_col1, y_row1, y_col1;
  Shape shape;
};

inline Broadcast broadcast_shapes(const Tensor& x, const Tensor& y, const char* name) {
  if (x.shape() == y.shape()) {
    return {x.rows(), x.cols(), false, false, false, false, x.shape()};
  }
  const std::size_t xr = x.rows(), xc = x.cols(), yr = y.rows(), yc = y.cols();
  auto fits = [](std::size_t a, std::size_t b) { return a == b || a == 1 || b == 1; };
  if (!fits(xr, yr) || !fits(xc, yc)) {
    throw DimensionError(std::string(name) + ": cannot broadcast " +
                         shape_str(x.shape()) + " with " + shape_str(y.shape()));
  }
  const std::size_t r = std::max(xr, yr), c = std::max(xc, yc);
  return {r, c, xr == 1 && r > 1, xc == 1 && c > 1, yr == 1 && r > 1,
          yc == 1 && c > 1, Shape{r, c}};
}

// f(a, b) value; da(a, b, out) and db(a, b, out) partials.
template <class F, class DA, class DB>
Tensor binary(const Tensor& x, const Tensor& y, F f, DA da, DB db, const char* name) {
  const Broadcast bc = broadcast_shapes(x, y, name);
  const auto xv = x.data();
  const auto yv = y.data();
  const std::size_t xc = x.cols(), yc = y.cols();
  std::vector<double> out(bc.rows * bc.cols);
  for (std::size_t i = 0; i < bc.rows; ++i) {
    const std::size_t xi = bc.x_row1 ? 0 : i, yi = bc.y_row1 ? 0 : i;
    for (std::size_t j = 0; j < bc.cols; ++j) {
      const std::size_t xj = bc.x_col1 ? 0 : j, yj = bc.y_col1 ? 0 : j;
      out[i * bc.cols + j] = f(xv[xi * xc + xj], yv[yi * yc + yj]);
    }
  }
  return Tensor::make_op(
      bc.shape, std::move(out), {x, y},
      [bc, xc, yc, da, db](Node& self) {
        auto& a = *self.inputs[0];
        auto& b = *self.inputs[1];
        const bool ga = a.requires_grad, gb = b.requires_grad;
        std::vector<double>* gx = ga ? &a.grad_buffer() : nullptr;
        std::vector<double>* gy = gb ? &b.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < bc.rows; ++i) {
          const std::size_t xi = bc.x_row1 ? 0 : i, yi = bc.y_row1 ? 0 : i;
          for (std::size_t j = 0; j < bc.cols; ++j) {
            const std::size_t xj = bc.x_col1 ? 0 : j, yj = bc.y_col1 ? 0 : j;
            const std::size_t o = i * bc.cols + j;
            const double av = a.value[xi * xc + xj];
            const double bv = b.value[yi * yc + yj];
            if (ga) (*gx)[xi * xc + xj] += self.grad[o] * da(av, bv, self.value[o]);
            if (gb) (*gy)[yi * yc + yj] += self.grad[o] * db(av, bv, self.value[o]);
          }
        }
      },
      name);
}

}  // namespace detail

// Elementwise --------------------------------------------------------------

inline Tensor add(const Tensor& x, const Tensor& y) {
  return detail::binary(
      x, y, [](double a, double b) { return a + b; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; }, "add");
}

inline Tensor sub(const Tensor& x, const Tensor& y) {
  return detail::binary(
      x, y, [](double a, double b) { return a - b; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; }, "sub");
}

inline Tensor mul(const Tensor& x, const Tensor& y) {
  return detail::binary(
      x, y, [](double a, double b) { return a * b; },
      [](double, double b, double) { return b; },
      [](double a, double, double) { return a; }, "mul");
}

inline Tensor div(const Tensor& x, const Tensor& y) {
  for (double v : y.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary(
      x, y, [](double a, double b) { return a / b; },
      [](double, double b, double) { return 1.0 / b; },
      [](double, double b, double out) { return -out / b; }, "div");
}

inline Tensor neg(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return -v; }, [](double, double) { return -1.0; }, "neg");
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; },
      "add_scalar");
}

inline Tensor mul_scalar(const Tensor& x, double s) {
  return detail::unary(
      x, [s](double v) { return v * s; }, [s](double, double) { return s; },
      "mul_scalar");
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; }, "exp");
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0 || std::isnan(v)) {
      throw DomainError("log: negative input " + std::to_string(v));
    }
  }
  return detail::unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; }, "log");
}

inline Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0 || std::isnan(v)) {
      throw DomainError("sqrt: negative input " + std::to_string(v));
    }
  }
  return detail::unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; }, "sqrt");
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; },
      "square");
}

inline Tensor pow(const Tensor& x, double p) {
  if (p != std::floor(p)) {
    for (double v : x.data()) {
      if (v < 0.0) throw DomainError("pow: negative base with fractional exponent");
    }
  }
  return detail::unary(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); }, "pow");
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; }, "tanh");
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      "softplus");
}

inline Tensor asinh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::asinh(v); },
      [](double v, double) { return 1.0 / std::sqrt(1.0 + v * v); }, "asinh");
}

/// Values outside [lo, hi] are pinned; their gradient is zero.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; }, "clamp");
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(double s, const Tensor& a) {
  for (double v : a.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return detail::unary(
      a, [s](double v) { return s / v; },
      [](double v, double y) { return -y / v; }, "rdiv");
}
inline Tensor operator/(const Tensor& a, double s) {
  if (s == 0.0) throw DomainError("div: division by zero");
  return mul_scalar(a, 1.0 / s);
}

// Linear algebra ------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ for " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  if (m && n) {
    auto c = detail::as_matrix(out, m, n);
    c.noalias() = detail::as_matrix(a.node()->value, m, k) *
                  detail::as_matrix(b.node()->value, k, n);
  }
  return Tensor::make_op(
      {m, n}, std::move(out), {a, b},
      [m, k, n](detail::Node& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        const auto dc = detail::as_matrix(self.grad, m, n);
        if (an.requires_grad) {
          auto da = detail::as_matrix(an.grad_buffer(), m, k);
          da.noalias() += dc * detail::as_matrix(bn.value, k, n).transpose();
        }
        if (bn.requires_grad) {
          auto db = detail::as_matrix(bn.grad_buffer(), k, n);
          db.noalias() += detail::as_matrix(an.value, m, k).transpose() * dc;
        }
      },
      "matmul");
}

inline Tensor transpose(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return Tensor::make_op(
      {c, r}, std::move(out), {x},
      [r, c](detail::Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
      },
      "transpose");
}

/// Sparse-dense product s·d. The adjoint flows to d only.
inline Tensor spmm(const SparseMatrix& s, const Tensor& d) {
  if (s.cols() != d.rows()) {
    throw DimensionError("spmm: sparse " + shape_str({s.rows(), s.cols()}) +
                         " times dense " + shape_str(d.shape()));
  }
  const std::size_t n = s.rows(), k = d.cols();
  std::vector<double> out(n * k, 0.0);
  const auto dv = d.data();
  const auto off = s.offsets();
  const auto idx = s.indices();
  const auto val = s.values();
  for (std::size_t r = 0; r < n; ++r) {
    double* orow = out.data() + r * k;
    for (std::size_t p = off[r]; p < off[r + 1]; ++p) {
      const double w = val[p];
      const double* drow = dv.data() + idx[p] * k;
      for (std::size_t j = 0; j < k; ++j) orow[j] += w * drow[j];
    }
  }
  return Tensor::make_op(
      {n, k}, std::move(out), {d},
      [s, n, k](detail::Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        const auto off = s.offsets();
        const auto idx = s.indices();
        const auto val = s.values();
        for (std::size_t r = 0; r < n; ++r) {
          const double* grow = self.grad.data() + r * k;
          for (std::size_t p = off[r]; p < off[r + 1]; ++p) {
            double* trow = g.data() + idx[p] * k;
            const double w = val[p];
            for (std::size_t j = 0; j < k; ++j) trow[j] += w * grow[j];
          }
        }
      },
      "spmm");
}

// Reductions ----------------------------------------------------------------

/// axis -1: whole tensor to 1x1; axis 0: over rows to 1xC; axis 1: over
/// columns to Rx1.
enum class Axis : int { kAll = -1, kRows = 0, kCols = 1 };

namespace detail {

inline void check_axis(const Tensor& x, Axis axis, const char* name) {
  const int a = static_cast<int>(axis);
  if (a < -1 || a > 1) throw DimensionError(std::string(name) + ": invalid axis");
  const std::size_t extent = axis == Axis::kAll   ? x.numel()
                             : axis == Axis::kRows ? x.rows()
                                                   : x.cols();
  if (extent == 0) {
    throw DimensionError(std::string(name) + ": empty reduction over " +
                         shape_str(x.shape()));
  }
}

inline Shape reduced_shape(const Tensor& x, Axis axis) {
  switch (axis) {
    case Axis::kAll: return {1, 1};
    case Axis::kRows: return {1, x.cols()};
    case Axis::kCols: return {x.rows(), 1};
  }
  return {1, 1};
}

// Output slot for element (i, j).
inline std::size_t reduced_index(Axis axis, std::size_t i, std::size_t j) {
  switch (axis) {
    case Axis::kAll: return 0;
    case Axis::kRows: return j;
    case Axis::kCols: return i;
  }
  return 0;
}

}  // namespace detail

inline Tensor sum(const Tensor& x, Axis axis = Axis::kAll) {
  detail::check_axis(x, axis, "sum");
  const Shape shape = detail::reduced_shape(x, axis);
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(shape_numel(shape), 0.0);
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[detail::reduced_index(axis, i, j)] += v[i * c + j];
  return Tensor::make_op(
      shape, std::move(out), {x},
      [axis, r, c](detail::Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            g[i * c + j] += self.grad[detail::reduced_index(axis, i, j)];
      },
      "sum");
}

inline Tensor mean(const Tensor& x, Axis axis = Axis::kAll) {
  detail::check_axis(x, axis, "mean");
  const std::size_t count = axis == Axis::kAll   ? x.numel()
                            : axis == Axis::kRows ? x.rows()
                                                  : x.cols();
  return mul_scalar(sum(x, axis), 1.0 / static_cast<double>(count));
}

/// max + log Σ exp(x − max); finite for every finite input.
inline Tensor logsumexp(const Tensor& x, Axis axis = Axis::kAll) {
  detail::check_axis(x, axis, "logsumexp");
  const Shape shape = detail::reduced_shape(x, axis);
  const std::size_t r = x.rows(), c = x.cols();
  const auto v = x.data();
  std::vector<double> mx(shape_numel(shape), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      auto& m = mx[detail::reduced_index(axis, i, j)];
      m = std::max(m, v[i * c + j]);
    }
  std::vector<double> acc(mx.size(), 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const auto o = detail::reduced_index(axis, i, j);
      if (std::isfinite(mx[o])) acc[o] += std::exp(v[i * c + j] - mx[o]);
    }
  std::vector<double> out(mx.size());
  for (std::size_t o = 0; o < out.size(); ++o) {
    out[o] = std::isfinite(mx[o]) ? mx[o] + std::log(acc[o]) : mx[o];
  }
  return Tensor::make_op(
      shape, std::move(out), {x},
      [axis, r, c](detail::Node& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const auto o = detail::reduced_index(axis, i, j);
            if (!std::isfinite(self.value[o])) continue;
            g[i * c + j] += self.grad[o] * std::exp(in.value[i * c + j] - self.value[o]);
          }
      },
      "logsumexp");
}

// Structural ----------------------------------------------------------------

/// Column-wise concatenation of tensors with equal row counts.
inline Tensor hcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("hcat: no inputs");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("hcat: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + col0);
    col0 += widths[k];
  }
  return Tensor::make_op(
      {r, total}, std::move(out), parts,
      [r, total, widths](detail::Node& self) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          auto& in = *self.inputs[k];
          if (in.requires_grad) {
            auto& g = in.grad_buffer();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                g[i * widths[k] + j] += self.grad[i * total + col + j];
          }
          col += widths[k];
        }
      },
      "hcat");
}

/// Rows of x selected by index (repeats allowed).
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  const std::size_t c = x.cols();
  for (auto i : index) {
    if (i >= x.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(i) +
                           " out of range for " + shape_str(x.shape()));
    }
  }
  std::vector<double> out(index.size() * c);
  const auto v = x.data();
  for (std::size_t k = 0; k < index.size(); ++k)
    std::copy_n(v.data() + index[k] * c, c, out.data() + k * c);
  const std::size_t n = index.size();
  return Tensor::make_op(
      {n, c}, std::move(out), {x},
      [index = std::move(index), c](detail::Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t k = 0; k < index.size(); ++k)
          for (std::size_t j = 0; j < c; ++j) g[index[k] * c + j] += self.grad[k * c + j];
      },
      "gather_rows");
}

/// Columns [first, first + count).
inline Tensor slice_cols(const Tensor& x, std::size_t first, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  if (first + count > c) {
    throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  }
  std::vector<double> out(r * count);
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(v.data() + i * c + first, count, out.data() + i * count);
  return Tensor::make_op(
      {r, count}, std::move(out), {x},
      [r, c, first, count](detail::Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < count; ++j)
            g[i * c + first + j] += self.grad[i * count + j];
      },
      "slice_cols");
}

/// Row-wise squared Euclidean norm, Rx1.
inline Tensor row_sqnorm(const Tensor& x) { return sum(square(x), Axis::kCols); }

/// Row-wise inner product of equally shaped (or row-broadcast) tensors, Rx1.
inline Tensor row_dot(const Tensor& x, const Tensor& y) { return sum(mul(x, y), Axis::kCols); }

}  // namespace esihge

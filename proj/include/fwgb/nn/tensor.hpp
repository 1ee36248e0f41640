#pragma once

// Dense row-major matrices with tape-free reverse-mode differentiation: every
// op result keeps shared references to its inputs and a closure that pushes
// its gradient back into them. backward() walks that graph in reverse
// topological order.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "fwgb/common.hpp"

namespace fwgb::nn {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // same size as value when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw std::invalid_argument("tensor value count does not match shape");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return constant(rows, cols, std::vector<double>(rows * cols, 0.0));
  }
  // Leaf that accumulates gradients.
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    auto t = constant(rows, cols, std::move(values));
    t.node_->requires_grad = true;
    t.node_->grad.assign(t.node_->value.size(), 0.0);
    return t;
  }
  static Tensor scalar(double v) { return constant(1, 1, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }

  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const {
    if (size() != 1) throw std::invalid_argument("item() on a non-scalar tensor");
    return node_->value[0];
  }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  // Fresh leaf with a copy of this tensor's values.
  Tensor clone_parameter() const { return parameter(rows(), cols(), node_->value); }
  Tensor detach() const { return constant(rows(), cols(), node_->value); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  for (const auto& t : inputs) n->requires_grad = n->requires_grad || t.requires_grad();
  if (n->requires_grad) {
    n->grad.assign(n->value.size(), 0.0);
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

// Propagates d(scalar)/d(node) into every reachable node's grad.
inline void backward(const Tensor& scalar_loss) {
  if (scalar_loss.size() != 1) throw std::invalid_argument("backward() needs a scalar");
  auto root = scalar_loss.node();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

// A (m x k) * B (k x n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double x = av[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  }
  return detail::make_result(m, n, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto& g = self.grad;
    if (A.requires_grad) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) A.grad[i * k + p] += gij * B.value[p * n + j];
        }
    }
    if (B.requires_grad) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double x = A.value[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) B.grad[p * n + j] += x * g[i * n + j];
        }
    }
  });
}

// A (m x k) * B^T where B is (n x k)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n, 0.0);
  auto av = a.value(), bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = s;
    }
  return detail::make_result(m, n, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto& g = self.grad;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double gij = g[i * n + j];
        if (gij == 0.0) continue;
        if (A.requires_grad)
          for (std::size_t p = 0; p < k; ++p) A.grad[i * k + p] += gij * B.value[j * k + p];
        if (B.requires_grad)
          for (std::size_t p = 0; p < k; ++p) B.grad[j * k + p] += gij * A.value[i * k + p];
      }
  });
}

// A^T * B where A is (k x m) and B is (k x n)
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  auto av = a.value(), bv = b.value();
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      double x = av[p * m + i];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  return detail::make_result(m, n, std::move(out), {a, b}, [k, m, n](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const auto& g = self.grad;
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double gij = g[i * n + j];
          if (A.requires_grad) A.grad[p * m + i] += gij * B.value[p * n + j];
          if (B.requires_grad) B.grad[p * n + j] += gij * A.value[p * m + i];
        }
  });
}

// ---------------------------------------------------------------------------
// Element-wise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
    for (auto* in : {self.inputs[0].get(), self.inputs[1].get()}) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
    }
  });
}

// Adds the 1 x c row `b` to every row of `a`.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  detail::require(b.rows() == 1 && b.cols() == a.cols(), "add_row: bias shape mismatch");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.value()[i * c + j] + b.value()[j];
  return detail::make_result(r, c, std::move(out), {a, b}, [r, c](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double g = self.grad[i * c + j];
        if (A.requires_grad) A.grad[i * c + j] += g;
        if (B.requires_grad) B.grad[j] += g;
      }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (A.requires_grad) A.grad[i] += self.grad[i] * B.value[i];
      if (B.requires_grad) B.grad[i] += self.grad[i] * A.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.value()[i];
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a}, [s](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += s * self.grad[i];
  });
}

// Applies f element-wise; df(x, f(x)) gives the derivative.
inline Tensor elementwise(const Tensor& a, const std::function<double(double)>& f,
                          std::function<double(double, double)> df) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a}, [df = std::move(df)](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * df(A.value[i], self.value[i]);
  });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      A.grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    }
  });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(a.value()[i]);
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      A.grad[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Reshaping and selection

// Rows ids[0], ids[1], ... of a table.
inline Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  const std::size_t c = table.cols();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw std::out_of_range("row id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.value().begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return detail::make_result(ids.size(), c, std::move(out), {table}, [idx = std::move(idx), c](Node& self) {
    auto& T = *self.inputs[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) T.grad[static_cast<std::size_t>(idx[i]) * c + j] += self.grad[i * c + j];
  });
}

inline Tensor row(const Tensor& a, std::size_t r) {
  detail::require(r < a.rows(), "row: index out of range");
  const std::size_t c = a.cols();
  std::vector<double> out(a.value().begin() + static_cast<std::ptrdiff_t>(r * c),
                          a.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  return detail::make_result(1, c, std::move(out), {a}, [r, c](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t j = 0; j < c; ++j) A.grad[r * c + j] += self.grad[j];
  });
}

inline Tensor column(const Tensor& a, std::size_t col) {
  detail::require(col < a.cols(), "column: index out of range");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = a.value()[i * c + col];
  return detail::make_result(r, 1, std::move(out), {a}, [r, c, col](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i) A.grad[i * c + col] += self.grad[i];
  });
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  detail::require(start + count <= a.cols(), "slice_cols: range out of bounds");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a.value()[i * c + start + j];
  return detail::make_result(r, count, std::move(out), {a}, [r, c, start, count](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) A.grad[i * c + start + j] += self.grad[i * count + j];
  });
}

// Stacks 1 x c rows into an n x c matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  detail::require(!rows.empty(), "stack_rows: no rows");
  const std::size_t c = rows.front().cols();
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (const auto& r : rows) {
    detail::require(r.rows() == 1 && r.cols() == c, "stack_rows: row shape mismatch");
    out.insert(out.end(), r.value().begin(), r.value().end());
  }
  return detail::make_result(rows.size(), c, std::move(out), rows, [c](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      auto& R = *self.inputs[i];
      if (!R.requires_grad) continue;
      for (std::size_t j = 0; j < c; ++j) R.grad[j] += self.grad[i * c + j];
    }
  });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require(a.rows() == b.rows(), "concat_cols: row counts differ");
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out[i * c + j] = a.value()[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[i * c + ca + j] = b.value()[i * cb + j];
  }
  return detail::make_result(r, c, std::move(out), {a, b}, [r, ca, cb, c](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    for (std::size_t i = 0; i < r; ++i) {
      if (A.requires_grad)
        for (std::size_t j = 0; j < ca; ++j) A.grad[i * ca + j] += self.grad[i * c + j];
      if (B.requires_grad)
        for (std::size_t j = 0; j < cb; ++j) B.grad[i * cb + j] += self.grad[i * c + ca + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalisation

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.value().begin(), a.value().end(), 0.0);
  return detail::make_result(1, 1, {s}, {a}, [](Node& self) {
    auto& A = *self.inputs[0];
    for (auto& g : A.grad) g += self.grad[0];
  });
}

// r x c -> r x 1, summing across columns.
inline Tensor row_sums(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a.value()[i * c + j];
  return detail::make_result(r, 1, std::move(out), {a}, [r, c](Node& self) {
    auto& A = *self.inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += self.grad[i];
  });
}

namespace detail {

// Softmax over `count` entries spaced `stride` apart, starting at `offset`.
inline void softmax_strided(std::span<const double> in, std::span<double> out, std::size_t offset, std::size_t count,
                            std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) mx = std::max(mx, in[offset + k * stride]);
  double z = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    double e = std::exp(in[offset + k * stride] - mx);
    out[offset + k * stride] = e;
    z += e;
  }
  for (std::size_t k = 0; k < count; ++k) out[offset + k * stride] /= z;
}

inline void softmax_strided_backward(const Node& self, Node& in, std::size_t offset, std::size_t count,
                                     std::size_t stride) {
  double dot = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    auto idx = offset + k * stride;
    dot += self.grad[idx] * self.value[idx];
  }
  for (std::size_t k = 0; k < count; ++k) {
    auto idx = offset + k * stride;
    in.grad[idx] += self.value[idx] * (self.grad[idx] - dot);
  }
}

}  // namespace detail

// Each column normalised over its rows.
inline Tensor softmax_columns(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(r > 0, "softmax_columns: empty input");
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < c; ++j) detail::softmax_strided(a.value(), out, j, r, c);
  return detail::make_result(r, c, std::move(out), {a}, [r, c](Node& self) {
    for (std::size_t j = 0; j < c; ++j) detail::softmax_strided_backward(self, *self.inputs[0], j, r, c);
  });
}

// Each row normalised over its columns.
inline Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(c > 0, "softmax_rows: empty input");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i) detail::softmax_strided(a.value(), out, i * c, c, 1);
  return detail::make_result(r, c, std::move(out), {a}, [r, c](Node& self) {
    for (std::size_t i = 0; i < r; ++i) detail::softmax_strided_backward(self, *self.inputs[0], i * c, c, 1);
  });
}

// -sum_i [t_i log(p_i) + (1 - t_i) log(1 - p_i)], p clamped to [eps, 1 - eps].
// Clamped entries receive no gradient.
inline Tensor binary_cross_entropy_sum(const Tensor& p, std::span<const double> target, double eps) {
  detail::require(p.size() == target.size(), "binary_cross_entropy_sum: shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double q = std::clamp(p.value()[i], eps, 1.0 - eps);
    loss -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  std::vector<double> t(target.begin(), target.end());
  return detail::make_result(1, 1, {loss}, {p}, [t = std::move(t), eps](Node& self) {
    auto& P = *self.inputs[0];
    for (std::size_t i = 0; i < t.size(); ++i) {
      double x = P.value[i];
      if (x < eps || x > 1.0 - eps) continue;
      P.grad[i] += self.grad[0] * (-t[i] / x + (1.0 - t[i]) / (1.0 - x));
    }
  });
}

// -log(max(p[index], floor)).
inline Tensor negative_log(const Tensor& p, std::size_t index, double floor) {
  detail::require(index < p.size(), "negative_log: index out of range");
  double x = p.value()[index];
  double loss = -std::log(std::max(x, floor));
  return detail::make_result(1, 1, {loss}, {p}, [index, floor](Node& self) {
    auto& P = *self.inputs[0];
    double v = P.value[index];
    if (v < floor) return;
    P.grad[index] += -self.grad[0] / v;
  });
}

}  // namespace fwgb::nn

#pragma once

// Embedding lookup, single-layer bidirectional LSTM and context-vector
// attention (one or several heads sharing the score projection).

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fwgb/nn/tensor.hpp"

namespace fwgb::nn {

inline Tensor embed(std::span<const std::int32_t> ids, const Tensor& table) {
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside embedding table");
    }
  }
  return gather_rows(table, ids);
}

// One direction. Gate blocks are laid out [input | forget | candidate | output]
// along the columns of w_x (d_e x 4d_h), w_h (d_h x 4d_h) and b (1 x 4d_h).
struct LstmDirection {
  Tensor w_x;
  Tensor w_h;
  Tensor b;
};

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  LstmDirection forward;
  LstmDirection backward;

  void check() const {
    for (const auto* d : {&forward, &backward}) {
      if (d->w_x.rows() != input_dim || d->w_x.cols() != 4 * hidden_dim || d->w_h.rows() != hidden_dim ||
          d->w_h.cols() != 4 * hidden_dim || d->b.rows() != 1 || d->b.cols() != 4 * hidden_dim) {
        throw std::invalid_argument("LSTM parameters are dimensionally inconsistent");
      }
    }
  }
};

namespace detail {

// Hidden states of one direction over x's rows in the given order; the result
// rows follow the original row order.
inline Tensor lstm_direction(const Tensor& x, const LstmDirection& p, std::size_t hidden, bool reverse) {
  const std::size_t steps = x.rows();
  auto projected = add_row(matmul(x, p.w_x), p.b);  // steps x 4h
  std::vector<Tensor> states(steps);
  Tensor h, c;
  for (std::size_t k = 0; k < steps; ++k) {
    std::size_t t = reverse ? steps - 1 - k : k;
    auto z = row(projected, t);
    if (h.defined()) z = add(z, matmul(h, p.w_h));
    auto in_gate = sigmoid(slice_cols(z, 0, hidden));
    auto forget_gate = sigmoid(slice_cols(z, hidden, hidden));
    auto candidate = tanh(slice_cols(z, 2 * hidden, hidden));
    auto out_gate = sigmoid(slice_cols(z, 3 * hidden, hidden));
    c = c.defined() ? add(mul(forget_gate, c), mul(in_gate, candidate)) : mul(in_gate, candidate);
    h = mul(out_gate, tanh(c));
    states[t] = h;
  }
  return stack_rows(states);
}

}  // namespace detail

// L x d_e -> L x 2d_h; row i is [forward h_i | backward h_i], zero initial states.
inline Tensor bilstm(const Tensor& x, const LstmParams& p) {
  p.check();
  if (x.rows() == 0) throw std::invalid_argument("bilstm: empty sequence");
  if (x.cols() != p.input_dim) throw std::invalid_argument("bilstm: input dimension mismatch");
  auto fwd = detail::lstm_direction(x, p.forward, p.hidden_dim, false);
  auto bwd = detail::lstm_direction(x, p.backward, p.hidden_dim, true);
  return concat_cols(fwd, bwd);
}

// Score projection W (d_a x d_h2) and b (1 x d_a) shared by all heads; one
// context vector per head in the rows of u (heads x d_a).
struct AttentionParams {
  Tensor w;
  Tensor b;
  Tensor u;

  std::size_t heads() const { return u.rows(); }
  std::size_t dim() const { return w.rows(); }
};

// L x heads matrix of tanh(W h_i + b) . u_n.
inline Tensor attention_scores(const Tensor& h, const AttentionParams& p) {
  if (p.w.cols() != h.cols() || p.b.cols() != p.w.rows() || p.u.cols() != p.w.rows()) {
    throw std::invalid_argument("attention parameter shapes do not match the hidden states");
  }
  auto projected = tanh(add_row(matmul_nt(h, p.w), p.b));  // L x d_a
  return matmul_nt(projected, p.u);                          // L x heads
}

// Column n holds the weights of head n; every column sums to 1.
inline Tensor multi_attention(const Tensor& h, const AttentionParams& p) {
  if (p.heads() == 0) throw std::invalid_argument("attention needs at least one head");
  return softmax_columns(attention_scores(h, p));
}

// Single head: L x 1 weight column.
inline Tensor attention(const Tensor& h, const AttentionParams& p) {
  if (p.heads() != 1) throw std::invalid_argument("single attention needs exactly one context vector");
  return multi_attention(h, p);
}

// ---------------------------------------------------------------------------
// Initialisation helpers

inline Tensor uniform_parameter(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor::parameter(rows, cols, std::move(v));
}

inline Tensor zero_parameter(std::size_t rows, std::size_t cols) {
  return Tensor::parameter(rows, cols, std::vector<double>(rows * cols, 0.0));
}

inline LstmDirection init_lstm_direction(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmDirection d{uniform_parameter(input_dim, 4 * hidden, bound, rng), uniform_parameter(hidden, 4 * hidden, bound, rng),
                  zero_parameter(1, 4 * hidden)};
  // Forget-gate bias starts at 1.
  for (std::size_t j = hidden; j < 2 * hidden; ++j) d.b.mutable_value()[j] = 1.0;
  return d;
}

inline LstmParams init_lstm(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden;
  p.forward = init_lstm_direction(input_dim, hidden, rng);
  p.backward = init_lstm_direction(input_dim, hidden, rng);
  return p;
}

inline AttentionParams init_attention(std::size_t input_dim, std::size_t attn_dim, std::size_t heads,
                                      std::mt19937_64& rng) {
  double w_bound = std::sqrt(6.0 / static_cast<double>(input_dim + attn_dim));
  double u_bound = std::sqrt(3.0 / static_cast<double>(attn_dim));
  return {uniform_parameter(attn_dim, input_dim, w_bound, rng), zero_parameter(1, attn_dim),
          uniform_parameter(heads, attn_dim, u_bound, rng)};
}

}  // namespace fwgb::nn

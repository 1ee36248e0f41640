#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fwgb/common.hpp"
#include "fwgb/nn/tensor.hpp"

namespace fwgb::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CoordinateError {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct TensorCheck {
  std::string name;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  std::vector<CoordinateError> flagged;  // coordinates above tolerance
  CoordinateError worst;
  double tolerance = 0.0;

  double max_relative_error() const { return worst.relative_error; }
  bool passed() const { return flagged.empty(); }
};

// Gradients smaller than this are compared on absolute error; central
// differences of a double-precision LSTM loss carry ~1e-11 of rounding noise.
inline constexpr double kRelativeErrorFloor = 1e-6;

// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares the backpropagated gradient of the scalar built by `f` against
// central differences (f(x + eps) - f(x - eps)) / 2eps on every coordinate of
// every listed tensor. `f` must rebuild the graph from the current values on
// each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                                  double eps = 1e-4, double tol = 1e-4,
                                  double floor = kRelativeErrorFloor) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must be in (0, 1e-2]");
  auto evaluate = [&] {
    double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
    return v;
  };

  for (auto& p : params) p.tensor.zero_grad();
  auto loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: objective is not finite");
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    for (double g : analytic.back()) {
      if (!std::isfinite(g)) throw NumericError("grad_check: analytic gradient of " + p.name + " is not finite");
    }
  }

  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].tensor.mutable_value();
    TensorCheck check{params[t].name, values.size(), 0.0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      double up = evaluate();
      values[i] = original - eps;
      double down = evaluate();
      values[i] = original;
      double numeric = (up - down) / (2.0 * eps);
      CoordinateError err{params[t].name, i, analytic[t][i], numeric,
                          relative_error(analytic[t][i], numeric, floor)};
      check.max_relative_error = std::max(check.max_relative_error, err.relative_error);
      if (err.relative_error > report.worst.relative_error || report.worst.tensor.empty()) report.worst = err;
      if (err.relative_error > tol) report.flagged.push_back(err);
    }
    report.tensors.push_back(check);
  }
  for (auto& p : params) p.tensor.zero_grad();
  return report;
}

}  // namespace fwgb::nn

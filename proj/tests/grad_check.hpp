#pragma once

// Central finite-difference oracle for the autograd engine. Independent of
// the backward closures: it only calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "trimodal/tensor.hpp"

namespace trimodal::testing {

struct GradCheck {
  double max_rel_err = 0.0;  // over entries whose absolute error exceeds abs_floor
  double max_abs_err = 0.0;
  double max_rel_err_raw = 0.0;  // no floor, over entries with magnitude above 1e-6
  std::size_t checked = 0;
  bool ok(double rel_tol = 1e-4) const { return max_rel_err <= rel_tol; }
};

/// Compares autograd gradients of scalar `f()` against central differences
/// with step h for every entry of every input. Absolute errors below
/// abs_floor count as agreement (guards entries whose true gradient is ~0).
inline GradCheck grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                            double h = 1e-5, double abs_floor = 1e-8) {
  for (auto& in : inputs) in.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    auto g = in.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(in.numel(), 0.0);
  }
  GradCheck out;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto data = inputs[t].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = f().item();
      data[i] = saved - h;
      const double fm = f().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      const double abs_err = std::fabs(a - numeric);
      out.max_abs_err = std::max(out.max_abs_err, abs_err);
      ++out.checked;
      const double denom = std::max(std::fabs(a), std::fabs(numeric));
      if (denom > 1e-6) out.max_rel_err_raw = std::max(out.max_rel_err_raw, abs_err / denom);
      if (abs_err <= abs_floor) continue;
      out.max_rel_err = std::max(out.max_rel_err, abs_err / denom);
    }
  }
  return out;
}

/// Leaf tensor with uniform entries in [lo, hi] that requires gradients.
inline Tensor random_leaf(const Shape& shape, std::mt19937_64& rng, double lo = -2.0,
                          double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  Tensor t = Tensor::from(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

/// Constant tensor with uniform entries in [-1, 1]; used as fixed weights to
/// reduce an op's output to a scalar so every entry gets a distinct upstream
/// gradient.
inline Tensor random_constant(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v));
}

}  // namespace trimodal::testing

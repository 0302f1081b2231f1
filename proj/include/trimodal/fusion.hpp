#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trimodal/nn.hpp"
#include "trimodal/tensor.hpp"

namespace trimodal {

/// eta * sigmoid(alpha).
double vat_lambda(double alpha, double eta);

/// softmax over the last axis of lambda_b * logits, logits [B, T, C, E] and
/// one lambda per batch item.
Tensor route_weights(const Tensor& logits, std::span<const double> lambda);

/// Sum over experts of weights[..., e] * preds[e]; weights [B, T, C, E].
Tensor fuse(const Tensor& weights, const std::vector<Tensor>& preds);

/// Maps the temporal query to per-step expert logits Z and adds the constant
/// bias b, which favours expert 0 (the temporal backbone).
class VatRouter {
 public:
  VatRouter() = default;
  VatRouter(ParamStore& store, std::size_t d_model, std::size_t horizon, std::size_t experts,
            double eta, bool temperature = true);

  /// Z + b as [B, T, C, E] from query [B, C, D].
  Tensor logits(const Tensor& query) const;
  /// Per-item inverse temperatures; all 1 with temperature routing disabled.
  std::vector<double> lambdas(std::span<const double> alpha) const;
  Tensor weights(const Tensor& query, std::span<const double> alpha) const;

  std::size_t experts() const { return experts_; }
  double eta() const { return eta_; }
  bool temperature() const { return temperature_; }

  Linear proj;
  Tensor bias;  // [E], not trainable

 private:
  std::size_t horizon_ = 0, experts_ = 0;
  double eta_ = 2.0;
  bool temperature_ = true;
};

}  // namespace trimodal

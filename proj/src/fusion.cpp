#include "trimodal/fusion.hpp"

#include <cmath>
#include <string>

#include "trimodal/errors.hpp"

namespace trimodal {

double vat_lambda(double alpha, double eta) {
  if (!(eta > 0.0)) throw ConfigError("vat.eta must be positive");
  return eta / (1.0 + std::exp(-alpha));
}

Tensor route_weights(const Tensor& logits, std::span<const double> lambda) {
  if (logits.dim() != 4 || lambda.size() != logits.shape()[0]) {
    throw DimensionError("route_weights: logits " + shape_str(logits.shape()) + " with " +
                         std::to_string(lambda.size()) + " temperatures");
  }
  Tensor scale = Tensor::from({lambda.size(), 1, 1, 1}, {lambda.begin(), lambda.end()});
  return softmax(mul(logits, scale), -1);
}

Tensor fuse(const Tensor& weights, const std::vector<Tensor>& preds) {
  if (weights.dim() != 4 || preds.size() != weights.shape()[3]) {
    throw ContractError("fuse: " + std::to_string(preds.size()) + " predictions for weights " +
                        shape_str(weights.shape()));
  }
  const Shape target{weights.shape()[0], weights.shape()[1], weights.shape()[2]};
  Tensor out;
  for (std::size_t e = 0; e < preds.size(); ++e) {
    if (preds[e].shape() != target) {
      throw ContractError("fuse: prediction " + shape_str(preds[e].shape()) + " vs weights " +
                          shape_str(weights.shape()));
    }
    Tensor term = mul(reshape(narrow(weights, 3, e, 1), target), preds[e]);
    out = e == 0 ? term : add(out, term);
  }
  return out;
}

VatRouter::VatRouter(ParamStore& store, std::size_t d_model, std::size_t horizon,
                     std::size_t experts, double eta, bool temperature)
    : horizon_(horizon), experts_(experts), eta_(eta), temperature_(temperature) {
  if (experts == 0) throw ConfigError("router needs at least one expert");
  if (!(eta > 0.0)) throw ConfigError("vat.eta must be positive");
  proj = Linear(store, "vat.proj", d_model, horizon * experts);
  std::vector<double> b(experts, 0.0);
  b[0] = 1.0;
  bias = store.add_tensor("vat.bias", Tensor::from({experts}, std::move(b)), false);
}

Tensor VatRouter::logits(const Tensor& query) const {
  const std::size_t b = query.shape()[0], c = query.shape()[1];
  Tensor z = reshape(proj(query), {b, c, horizon_, experts_});
  return add(permute(z, {0, 2, 1, 3}), bias);
}

std::vector<double> VatRouter::lambdas(std::span<const double> alpha) const {
  std::vector<double> out(alpha.size(), 1.0);
  if (temperature_)
    for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = vat_lambda(alpha[i], eta_);
  return out;
}

Tensor VatRouter::weights(const Tensor& query, std::span<const double> alpha) const {
  return route_weights(logits(query), lambdas(alpha));
}

}  // namespace trimodal

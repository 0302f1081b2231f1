#pragma once

#include <cstddef>
#include <string>

#include "trimodal/nn.hpp"
#include "trimodal/tensor.hpp"

namespace trimodal {

/// GELU(LayerNorm(Linear(O))) per channel row: O [B, C, D] -> [B, T, C].
class ForecastHead {
 public:
  ForecastHead() = default;
  ForecastHead(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t horizon);
  Tensor operator()(const Tensor& attended) const;

  Linear proj;
  LayerNorm norm;
};

/// Cross-attention from the temporal query into the prompt-token pool.
class TextualLearner {
 public:
  TextualLearner() = default;
  TextualLearner(ParamStore& store, std::size_t d_model, std::size_t heads, std::size_t horizon);

  /// query [B, C, D]; pool holds the aligned prompt tokens of each item.
  Tensor attend(const Tensor& query, const KeyPool& pool) const;
  Tensor forward(const Tensor& query, const KeyPool& pool) const;

  MultiHeadAttention cross;
  ForecastHead head;
};

}  // namespace trimodal

#pragma once

#include <array>
#include <cstddef>

#include "trimodal/nn.hpp"
#include "trimodal/tensor.hpp"
#include "trimodal/textual.hpp"

namespace trimodal {

struct SymbolicOutput {
  Tensor y;                       // [B, T, C] mixed forecast
  std::array<Tensor, 3> scales;   // fine, mid, coarse forecasts
  Tensor mix;                     // softmax(omega) [3]
};

/// Independent cross-attention and head per symbolic scale, combined by a
/// learned softmax mixture.
class SymbolicLearner {
 public:
  SymbolicLearner() = default;
  SymbolicLearner(ParamStore& store, std::size_t d_model, std::size_t heads, std::size_t horizon);

  Tensor scale_forward(std::size_t scale, const Tensor& query, const KeyPool& pool) const;
  SymbolicOutput forward(const Tensor& query, const std::array<KeyPool, 3>& pools) const;
  Tensor mix_weights() const { return softmax(omega, 0); }

  std::array<MultiHeadAttention, 3> cross;
  std::array<ForecastHead, 3> heads;
  Tensor omega;  // [3]
};

}  // namespace trimodal

#include "trimodal/symbolic.hpp"

#include "trimodal/errors.hpp"

namespace trimodal {

namespace {
constexpr const char* kScaleNames[3] = {"fine", "mid", "coarse"};
}

SymbolicLearner::SymbolicLearner(ParamStore& store, std::size_t d_model, std::size_t heads_,
                                 std::size_t horizon) {
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string base = std::string("sym.") + kScaleNames[s];
    cross[s] = MultiHeadAttention(store, base + ".cross", d_model, heads_);
    heads[s] = ForecastHead(store, base + ".head", d_model, horizon);
  }
  omega = store.add("sym.omega", {3}, Init::zeros());
}

Tensor SymbolicLearner::scale_forward(std::size_t scale, const Tensor& query,
                                      const KeyPool& pool) const {
  if (scale >= 3) throw ContractError("symbolic scale out of range");
  return heads[scale](cross[scale].attend(query, pool));
}

SymbolicOutput SymbolicLearner::forward(const Tensor& query,
                                        const std::array<KeyPool, 3>& pools) const {
  SymbolicOutput out;
  out.mix = mix_weights();
  for (std::size_t s = 0; s < 3; ++s) {
    out.scales[s] = scale_forward(s, query, pools[s]);
    Tensor term = mul(out.scales[s], narrow(out.mix, 0, s, 1));
    out.y = s == 0 ? term : add(out.y, term);
  }
  return out;
}

}  // namespace trimodal

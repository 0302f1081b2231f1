#include "trimodal/textual.hpp"

#include "trimodal/errors.hpp"

namespace trimodal {

ForecastHead::ForecastHead(ParamStore& store, const std::string& name, std::size_t d_model,
                           std::size_t horizon)
    : proj(store, name + ".proj", d_model, horizon), norm(store, name + ".norm", horizon) {}

Tensor ForecastHead::operator()(const Tensor& attended) const {
  return transpose(gelu(norm(proj(attended))), 1, 2);
}

TextualLearner::TextualLearner(ParamStore& store, std::size_t d_model, std::size_t heads,
                               std::size_t horizon)
    : cross(store, "text.cross", d_model, heads), head(store, "text.head", d_model, horizon) {}

Tensor TextualLearner::attend(const Tensor& query, const KeyPool& pool) const {
  if (query.dim() != 3 || query.shape()[2] != cross.d_model()) {
    throw ConfigError("text query " + shape_str(query.shape()) + " does not match d_model " +
                      std::to_string(cross.d_model()));
  }
  if (pool.max_len > 0 && pool.table.shape()[1] != cross.d_model()) {
    throw ConfigError("text pool width " + std::to_string(pool.table.shape()[1]) +
                      " does not match d_model " + std::to_string(cross.d_model()));
  }
  return cross.attend(query, pool);
}

Tensor TextualLearner::forward(const Tensor& query, const KeyPool& pool) const {
  return head(attend(query, pool));
}

}  // namespace trimodal

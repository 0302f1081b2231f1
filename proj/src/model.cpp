#include "trimodal/model.hpp"

#include "trimodal/errors.hpp"

namespace trimodal {

StatModel::StatModel(const ModelConfig& cfg, std::shared_ptr<const EmbeddingProvider> provider,
                     std::uint64_t seed)
    : cfg_(cfg), provider_(std::move(provider)), store_(seed) {
  const TemporalConfig& t = cfg.temporal;
  t.validate();
  temporal = TemporalLearner(store_, t);
  if (cfg.use_text || cfg.use_symbolic) {
    if (!provider_) throw ConfigError("text and symbol branches need an embedding provider");
    align = Linear(store_, "align", provider_->dim(), t.d_model);
  }
  if (cfg.use_text) text = TextualLearner(store_, t.d_model, t.heads, t.horizon);
  if (cfg.use_symbolic) symbolic = SymbolicLearner(store_, t.d_model, t.heads, t.horizon);
  router = VatRouter(store_, t.d_model, t.horizon, expert_names().size(), cfg.eta, cfg.use_vat);
  bank_ = MemoryBank(t.bank_size, t.d_model);
}

std::vector<std::string> StatModel::expert_names() const {
  std::vector<std::string> names{"temp"};
  if (cfg_.use_text) names.push_back("txt");
  if (cfg_.use_symbolic) names.push_back("sym");
  return names;
}

ModelOutput StatModel::forward(const ModelBatch& batch, bool update_bank) {
  const std::size_t b = batch.x.shape()[0];
  if (batch.alpha.size() != b) throw ContractError("one alpha per batch item required");
  ModelOutput out;
  out.experts = expert_names();
  TemporalOutput temp = temporal.forward(batch.x, bank_);
  out.y_temp = temp.y;
  std::vector<Tensor> preds{temp.y};
  if (cfg_.use_text) {
    if (batch.prompts.size() != b) throw ContractError("one prompt per batch item required");
    out.y_txt = text.forward(temp.query, align_tokens(*provider_, align, batch.prompts));
    preds.push_back(out.y_txt);
  }
  if (cfg_.use_symbolic) {
    std::array<KeyPool, 3> pools;
    for (std::size_t s = 0; s < 3; ++s) {
      if (batch.symbols[s].size() != b) throw ContractError("one symbol list per item and scale");
      pools[s] = align_tokens(*provider_, align, batch.symbols[s]);
    }
    out.y_sym = symbolic.forward(temp.query, pools).y;
    preds.push_back(out.y_sym);
  }
  out.weights = router.weights(temp.query, batch.alpha);
  out.y = fuse(out.weights, preds);
  if (update_bank) bank_.enqueue(temp.embedded);
  return out;
}

}  // namespace trimodal

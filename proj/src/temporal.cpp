#include "trimodal/temporal.hpp"

#include <algorithm>
#include <string>

#include "trimodal/errors.hpp"

namespace trimodal {

void TemporalConfig::validate() const {
  if (patch_len == 0 || patch_len > lookback) {
    throw ConfigError("patch length " + std::to_string(patch_len) + " must be in [1, " +
                      std::to_string(lookback) + "]");
  }
  if (stride == 0 || stride > patch_len) {
    throw ConfigError("stride " + std::to_string(stride) + " must be in [1, patch length]");
  }
  if (horizon == 0 || channels == 0) throw ConfigError("horizon and channels must be positive");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (top_k == 0 || bank_size == 0) throw ConfigError("top_k and bank_size must be positive");
}

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), slots_(capacity * dim, 0.0) {
  if (capacity == 0 || dim == 0) throw ConfigError("memory bank needs positive capacity and dim");
}

void MemoryBank::push(std::span<const double> row) {
  if (row.size() != dim_) {
    throw DimensionError("memory bank row of " + std::to_string(row.size()) + " values, expected " +
                         std::to_string(dim_));
  }
  std::copy(row.begin(), row.end(), slots_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
  head_ = (head_ + 1) % capacity_;
  fill_ = std::min(fill_ + 1, capacity_);
}

void MemoryBank::enqueue(const Tensor& x_emb) {
  if (x_emb.dim() != 3 || x_emb.shape()[2] != dim_) {
    throw DimensionError("memory bank enqueue expects [B, N, " + std::to_string(dim_) + "], got " +
                         shape_str(x_emb.shape()));
  }
  const std::size_t b = x_emb.shape()[0], n = x_emb.shape()[1];
  const auto v = x_emb.data();
  std::vector<double> row(dim_);
  for (std::size_t i = 0; i < b; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t d = 0; d < dim_; ++d) row[d] += v[(i * n + p) * dim_ + d];
    for (auto& r : row) r /= static_cast<double>(n);
    push(row);
  }
}

std::vector<double> MemoryBank::row(std::size_t i) const {
  if (i >= fill_) throw ContractError("memory bank row out of range");
  const std::size_t oldest = fill_ < capacity_ ? 0 : head_;
  const std::size_t slot = (oldest + i) % capacity_;
  return {slots_.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
          slots_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_)};
}

Tensor MemoryBank::matrix() const {
  std::vector<double> out;
  out.reserve(fill_ * dim_);
  for (std::size_t i = 0; i < fill_; ++i) {
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor::from({fill_, dim_}, std::move(out));
}

Retrieval retrieve(const Tensor& x_emb, const MemoryBank& bank, std::size_t k) {
  if (bank.empty()) throw ContractError("retrieve from an empty memory bank");
  const std::size_t b = x_emb.shape()[0], n = x_emb.shape()[1];
  const std::size_t kk = std::min(k, bank.fill());
  Tensor table = bank.matrix();
  TopK top = top_k(cosine_similarity(x_emb, table), kk);
  Retrieval r;
  r.weights = softmax(top.values, -1);
  r.indices = top.indices;
  Tensor rows = index_rows(table, top.indices, {b, n, kk});  // [B, N, k, D]
  r.retrieved = sum(mul(unsqueeze(r.weights, -1), rows), 2);
  return r;
}

TemporalLearner::TemporalLearner(ParamStore& store, const TemporalConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const std::size_t n = cfg.patches(), d = cfg.d_model;
  patch_proj = Linear(store, "temporal.patch_proj", cfg.patch_len * cfg.channels, d);
  positions = store.add("temporal.positions", {n, d}, Init::normal(0.02));
  local_mlp = Mlp(store, "temporal.local_mlp", d, 2 * d, d);
  self_attn = MultiHeadAttention(store, "temporal.self_attn", d, cfg.heads);
  out_head = Linear(store, "temporal.head", n * d, cfg.horizon * cfg.channels);
  query_proj = Linear(store, "temporal.query_proj", d, d);
  query_norm = LayerNorm(store, "temporal.query_norm", d);
  channel_embed = store.add("temporal.channel_embed", {cfg.channels, d}, Init::normal(0.02));
}

Tensor TemporalLearner::embed_patches(const Tensor& patches) const {
  const std::size_t n = patches.shape()[1];
  if (n > positions.shape()[0]) {
    throw ConfigError(std::to_string(n) + " patches exceed the positional table of " +
                      std::to_string(positions.shape()[0]));
  }
  return add(patch_proj(patches), narrow(positions, 0, 0, n));
}

Tensor TemporalLearner::local_correlation(const Tensor& x_emb, const MemoryBank& bank) const {
  if (bank.empty()) return x_emb;
  return add(x_emb, local_mlp(retrieve(x_emb, bank, cfg_.top_k).retrieved));
}

Tensor TemporalLearner::global_correlation(const Tensor& x_emb) const {
  return mean(self_attn(x_emb, x_emb, x_emb), 1);
}

Tensor TemporalLearner::head(const Tensor& features) const {
  const std::size_t b = features.shape()[0];
  Tensor flat = reshape(features, {b, features.shape()[1] * features.shape()[2]});
  return reshape(out_head(flat), {b, cfg_.horizon, cfg_.channels});
}

Tensor TemporalLearner::query(const Tensor& features) const {
  Tensor pooled = query_norm(query_proj(mean(features, 1)));  // [B, D]
  return add(unsqueeze(pooled, 1), channel_embed);            // [B, C, D]
}

TemporalOutput TemporalLearner::forward(const Tensor& x, const MemoryBank& bank) const {
  if (x.dim() != 3 || x.shape()[1] != cfg_.lookback || x.shape()[2] != cfg_.channels) {
    throw DimensionError("temporal input expected [B, " + std::to_string(cfg_.lookback) + ", " +
                         std::to_string(cfg_.channels) + "], got " + shape_str(x.shape()));
  }
  TemporalOutput out;
  out.embedded = embed_patches(patchify(x, cfg_.patch_len, cfg_.stride));
  Tensor local = local_correlation(out.embedded, bank);
  Tensor global = global_correlation(out.embedded);
  out.features = add(local, unsqueeze(global, 1));
  out.y = head(out.features);
  out.query = query(out.features);
  return out;
}

}  // namespace trimodal

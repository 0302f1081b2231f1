#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trimodal/nn.hpp"
#include "trimodal/tensor.hpp"

namespace trimodal {

struct TemporalConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t channels = 1;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t top_k = 5;
  std::size_t bank_size = 256;

  std::size_t patches() const { return (lookback - patch_len) / stride + 1; }
  /// Throws ConfigError on an impossible combination.
  void validate() const;
};

/// FIFO ring of pooled patch embeddings. Rows come back oldest first.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, std::size_t dim);

  void push(std::span<const double> row);
  /// Enqueues the mean over N of every item of x_emb [B, N, D].
  void enqueue(const Tensor& x_emb);
  void clear() { fill_ = 0, head_ = 0; }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t fill() const { return fill_; }
  bool empty() const { return fill_ == 0; }
  std::vector<double> row(std::size_t i) const;  // 0 = oldest
  Tensor matrix() const;                         // [fill, D], constant

 private:
  std::size_t capacity_ = 0, dim_ = 0, fill_ = 0, head_ = 0;  // head_: next write slot
  std::vector<double> slots_;
};

struct Retrieval {
  Tensor weights;                    // [B, N, k] softmax over similarities
  std::vector<std::size_t> indices;  // flat [B, N, k] bank rows, oldest-first numbering
  Tensor retrieved;                  // [B, N, D]
};

/// Cosine top-k over the bank; k is clamped to the fill. Ties pick the older row.
Retrieval retrieve(const Tensor& x_emb, const MemoryBank& bank, std::size_t k);

struct TemporalOutput {
  Tensor y;         // [B, T, C]
  Tensor query;     // [B, C, D]
  Tensor features;  // F_temp [B, N, D]
  Tensor embedded;  // X_emb [B, N, D]
};

class TemporalLearner {
 public:
  TemporalLearner() = default;
  TemporalLearner(ParamStore& store, const TemporalConfig& cfg);

  const TemporalConfig& config() const { return cfg_; }

  /// patches [B, N, P*C] -> [B, N, D] with learned positions added.
  Tensor embed_patches(const Tensor& patches) const;
  /// X_emb plus an MLP of the retrieved neighbours; X_emb itself for an empty bank.
  Tensor local_correlation(const Tensor& x_emb, const MemoryBank& bank) const;
  /// Self-attention over patches averaged over N: [B, D].
  Tensor global_correlation(const Tensor& x_emb) const;
  /// Head and query from F_temp.
  Tensor head(const Tensor& features) const;
  Tensor query(const Tensor& features) const;

  TemporalOutput forward(const Tensor& x, const MemoryBank& bank) const;

  Linear patch_proj;
  Tensor positions;  // [N, D]
  Mlp local_mlp;
  MultiHeadAttention self_attn;
  Linear out_head;  // N*D -> T*C
  Linear query_proj;
  LayerNorm query_norm;
  Tensor channel_embed;  // [C, D]

 private:
  TemporalConfig cfg_;
};

}  // namespace trimodal

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trimodal/tensor.hpp"

namespace trimodal {

/// Initialization recipe for a parameter tensor.
struct Init {
  enum class Kind { kZeros, kOnes, kUniform, kNormal, kIdentity };
  Kind kind = Kind::kZeros;
  double scale = 0.0;

  static Init zeros() { return {Kind::kZeros, 0.0}; }
  static Init ones() { return {Kind::kOnes, 0.0}; }
  static Init uniform(double bound) { return {Kind::kUniform, bound}; }
  static Init normal(double stddev) { return {Kind::kNormal, stddev}; }
  /// Square 2-D identity (other shapes rejected).
  static Init identity() { return {Kind::kIdentity, 0.0}; }
};

struct Param {
  Tensor tensor;
  std::string name;
  bool trainable = true;
};

/// Owns every named parameter of a model. Names are unique; iteration order
/// is registration order, which keeps checkpoints and optimizer state stable.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0);

  Tensor add(const std::string& name, Shape shape, Init init, bool trainable = true);
  Tensor add_tensor(const std::string& name, Tensor value, bool trainable);

  const std::vector<Param>& params() const { return params_; }
  const Param* find(const std::string& name) const;
  Param* find(const std::string& name);
  std::vector<Tensor> trainable_tensors() const;
  void zero_grad();
  std::size_t trainable_count() const;

  /// FNV-1a over names and raw value bytes of the selected parameters.
  std::uint64_t hash(bool trainable_only) const;

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<Param> params_;
  std::mt19937_64 rng_;
};

class Linear {
 public:
  Linear() = default;
  /// Weight [in, out] and bias [out], uniform in +-1/sqrt(in).
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  Tensor weight;
  Tensor bias;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);

  Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias, 1e-5); }

  Tensor gain;
  Tensor bias;
};

/// Key-side sequences packed as a shared row table plus per-item row ids.
///
/// Items are padded to the longest sequence; `lengths[b]` valid keys per item.
/// Packing lets per-token projections run once per distinct row.
struct KeyPool {
  Tensor table;                      // [U, D]
  std::vector<std::size_t> ids;      // [B * max_len] rows into table (padding -> 0)
  std::vector<std::size_t> lengths;  // [B]
  std::size_t max_len = 0;

  std::size_t batch() const { return lengths.size(); }
  /// Dense [B, max_len, D] view of the pool.
  Tensor dense() const;
  /// Pool whose table is the flattened dense tensor [B, L, D], all rows valid.
  static KeyPool from_dense(const Tensor& keys);
};

/// Scaled dot-product attention with `heads` heads, per-head 1/sqrt(d_head)
/// scaling, head concatenation and an output projection.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t d_model,
                     std::size_t heads);

  /// q [B, Lq, D]; k, v [B, Lk, D].
  Tensor operator()(const Tensor& q, const Tensor& k, const Tensor& v) const;
  /// Cross attention where keys and values both come from `pool`. Items with
  /// no valid key produce an all-zero output row.
  Tensor attend(const Tensor& q, const KeyPool& pool) const;

  std::size_t heads() const { return heads_; }
  std::size_t d_model() const { return d_model_; }

  Linear wq, wk, wv, wo;

 private:
  Tensor core(const Tensor& q, const Tensor& k, const Tensor& v,
              const std::vector<std::size_t>* lengths) const;

  std::size_t d_model_ = 0;
  std::size_t heads_ = 1;
};

/// Two-layer perceptron with a GELU between the layers.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
      std::size_t out);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

  Linear fc1, fc2;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

/// One Adam update of `param` from its gradient buffer (no-op without one).
void adam_step(Tensor& param, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  double lr_;
};

}  // namespace trimodal

#include "trimodal/nn.hpp"

#include <cmath>
#include <cstring>

#include "trimodal/errors.hpp"

namespace trimodal {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

constexpr double kMaskedScore = -1e9;

}  // namespace

// ---------------------------------------------------------------- ParamStore

ParamStore::ParamStore(std::uint64_t seed) : rng_(seed) {}

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, bool trainable) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, 0.0);
  switch (init.kind) {
    case Init::Kind::kZeros:
      break;
    case Init::Kind::kOnes:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::Kind::kUniform: {
      std::uniform_real_distribution<double> dist(-init.scale, init.scale);
      for (auto& v : values) v = dist(rng_);
      break;
    }
    case Init::Kind::kNormal: {
      std::normal_distribution<double> dist(0.0, init.scale);
      for (auto& v : values) v = dist(rng_);
      break;
    }
    case Init::Kind::kIdentity:
      if (shape.size() != 2 || shape[0] != shape[1]) {
        throw ConfigError("identity init needs a square matrix, got " + shape_str(shape));
      }
      for (std::size_t i = 0; i < shape[0]; ++i) values[i * shape[0] + i] = 1.0;
      break;
  }
  return add_tensor(name, Tensor::from(std::move(shape), std::move(values)), trainable);
}

Tensor ParamStore::add_tensor(const std::string& name, Tensor value, bool trainable) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  params_.push_back(Param{value, name, trainable});
  return value;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::vector<Tensor> ParamStore::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.tensor.numel();
  }
  return n;
}

std::uint64_t ParamStore::hash(bool trainable_only) const {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params_) {
    if (trainable_only && !p.trainable) continue;
    fnv_mix(h, p.name.data(), p.name.size());
    const auto data = p.tensor.data();
    fnv_mix(h, data.data(), data.size_bytes());
  }
  return h;
}

// ---------------------------------------------------------------- layers

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.add(name + ".weight", {in, out}, Init::uniform(bound));
  if (with_bias) bias = store.add(name + ".bias", {out}, Init::uniform(bound));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim) {
  gain = store.add(name + ".gain", {dim}, Init::ones());
  bias = store.add(name + ".bias", {dim}, Init::zeros());
}

Mlp::Mlp(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
         std::size_t out)
    : fc1(store, name + ".fc1", in, hidden), fc2(store, name + ".fc2", hidden, out) {}

Tensor KeyPool::dense() const {
  return index_rows(table, ids, {batch(), max_len});
}

KeyPool KeyPool::from_dense(const Tensor& keys) {
  if (keys.dim() != 3) throw DimensionError("KeyPool::from_dense expects [B, L, D]");
  const std::size_t b = keys.shape()[0], l = keys.shape()[1], d = keys.shape()[2];
  KeyPool pool;
  pool.table = reshape(keys, {b * l, d});
  pool.ids.resize(b * l);
  for (std::size_t i = 0; i < b * l; ++i) pool.ids[i] = i;
  pool.lengths.assign(b, l);
  pool.max_len = l;
  return pool;
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       std::size_t d_model, std::size_t heads)
    : d_model_(d_model), heads_(heads) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("attention '" + name + "': model dim " + std::to_string(d_model) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  wq = Linear(store, name + ".q", d_model, d_model);
  wk = Linear(store, name + ".k", d_model, d_model);
  wv = Linear(store, name + ".v", d_model, d_model);
  wo = Linear(store, name + ".o", d_model, d_model);
}

Tensor MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v) const {
  if (q.dim() != 3 || k.dim() != 3 || v.dim() != 3 || q.shape()[2] != d_model_ ||
      k.shape()[2] != d_model_ || v.shape()[2] != d_model_ || k.shape() != v.shape() ||
      q.shape()[0] != k.shape()[0]) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()) +
                         " with model dim " + std::to_string(d_model_));
  }
  return core(wq(q), wk(k), wv(v), nullptr);
}

Tensor MultiHeadAttention::attend(const Tensor& q, const KeyPool& pool) const {
  if (q.dim() != 3 || q.shape()[2] != d_model_ || pool.table.dim() != 2 ||
      pool.table.shape()[1] != d_model_ || q.shape()[0] != pool.batch()) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " vs key pool " +
                         shape_str(pool.table.shape()) + " for " +
                         std::to_string(pool.batch()) + " items");
  }
  if (pool.max_len == 0) {
    return Tensor::zeros(q.shape());
  }
  const Shape gathered{pool.batch(), pool.max_len};
  Tensor keys = index_rows(wk(pool.table), pool.ids, gathered);
  Tensor values = index_rows(wv(pool.table), pool.ids, gathered);
  return core(wq(q), keys, values, &pool.lengths);
}

Tensor MultiHeadAttention::core(const Tensor& q, const Tensor& k, const Tensor& v,
                                const std::vector<std::size_t>* lengths) const {
  const std::size_t b = q.shape()[0], lq = q.shape()[1], lk = k.shape()[1];
  const std::size_t dh = d_model_ / heads_;
  Tensor qh = permute(reshape(q, {b, lq, heads_, dh}), {0, 2, 1, 3});  // [B,h,Lq,dh]
  Tensor kh = permute(reshape(k, {b, lk, heads_, dh}), {0, 2, 3, 1});  // [B,h,dh,Lk]
  Tensor vh = permute(reshape(v, {b, lk, heads_, dh}), {0, 2, 1, 3});  // [B,h,Lk,dh]
  Tensor scores = mul_scalar(matmul(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
  bool any_empty = false;
  if (lengths) {
    std::vector<double> mask(b * lk, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      if ((*lengths)[i] == 0) any_empty = true;
      for (std::size_t j = (*lengths)[i]; j < lk; ++j) mask[i * lk + j] = kMaskedScore;
    }
    scores = add(scores, Tensor::from({b, 1, 1, lk}, std::move(mask)));
  }
  Tensor attn = softmax(scores, -1);
  Tensor out = permute(matmul(attn, vh), {0, 2, 1, 3});  // [B,Lq,h,dh]
  out = wo(reshape(out, {b, lq, d_model_}));
  if (any_empty) {
    std::vector<double> keep(b);
    for (std::size_t i = 0; i < b; ++i) keep[i] = (*lengths)[i] == 0 ? 0.0 : 1.0;
    out = mul(out, Tensor::from({b, 1, 1}, std::move(keep)));
  }
  return out;
}

// ---------------------------------------------------------------- optimizer

void adam_step(Tensor& param, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (!param.has_grad()) return;
  const auto g = param.grad();
  auto w = param.mutable_data();
  if (state.m.size() != w.size()) {
    state.m.assign(w.size(), 0.0);
    state.v.assign(w.size(), 0.0);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

Adam::Adam(std::vector<Tensor> params, double lr)
    : params_(std::move(params)), states_(params_.size()), lr_(lr) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i], states_[i], lr_);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace trimodal

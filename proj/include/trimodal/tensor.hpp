#pragma once

// Dense row-major float64 tensor with a define-by-run gradient tape.
//
// Every operation on tensors that require gradients records a node holding
// its inputs and a backward closure. `backward(loss)` walks the recorded graph
// in reverse topological order. Leaf tensors (parameters) accumulate gradients
// across calls; intermediate buffers are recomputed on every call.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace trimodal {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;  // empty for leaves

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  const std::vector<double>& values() const;

  /// Gradient buffer; empty span when backward never reached this tensor.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Copy of the values without any tape history.
  Tensor detach() const;

  /// Identity of the underlying tape node; stable for the tensor's lifetime.
  const void* tape_id() const { return node_.get(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, operations do not record tape nodes on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Populates gradients of every leaf reachable from a scalar loss.
void backward(const Tensor& loss);

// ---- elementwise with numpy-style broadcasting ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Exact x * Phi(x) using erf.
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
/// Population variance (divides by n).
Tensor var(const Tensor& a, int axis, bool keepdim = false);
/// Population standard deviation; subgradient 0 where the deviation is 0.
Tensor stddev(const Tensor& a, int axis, bool keepdim = false);

// ---- normalization / attention building blocks ----
Tensor softmax(const Tensor& x, int axis);
/// Normalizes over the last axis with eps inside the square root, then
/// applies gain and bias (both shaped like the last axis).
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in, out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- shape manipulation ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& a, int axis, std::size_t start, std::size_t length);
Tensor unsqueeze(const Tensor& a, int axis);

/// Rows of `table` [U, D] picked by flat `index` list, shaped out_shape + [D].
Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& index,
                  const Shape& out_shape);

struct TopK {
  Tensor values;                      // [..., k], differentiable
  std::vector<std::size_t> indices;   // flat [..., k]
};
/// Largest k entries along the last axis; ties keep the lower index first.
TopK top_k(const Tensor& x, std::size_t k);

/// Cosine similarity between every row of a [..., D] and every row of
/// b [M, D]; result [..., M].
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// Overlapping patches of x [B, L, C] with length P and stride S, flattened
/// per patch as (step, channel): result [B, N, P*C], N = (L-P)/S + 1.
Tensor patchify(const Tensor& x, std::size_t patch_len, std::size_t stride);

/// Resolves a possibly negative axis against a rank.
std::size_t normalize_axis(int axis, std::size_t rank);

}  // namespace trimodal

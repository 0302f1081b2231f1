#include "trimodal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "trimodal/errors.hpp"

namespace trimodal {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// Builds a result node; records inputs and the backward closure only when some
// input participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in && in->requires_grad) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

std::vector<double>* grad_of(const NodePtr& n) {
  if (!n || !n->requires_grad) return nullptr;
  return &n->ensure_grad();
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;  // strides of a in output index space
  std::vector<std::size_t> stride_b;
  bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ia = i + a.size();
    const std::size_t ib = i + b.size();
    const std::size_t da = ia >= rank ? a[ia - rank] : 1;
    const std::size_t db = ib >= rank ? b[ib - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                           " with " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
    if (ia >= rank && da != 1) p.stride_a[i] = sa[ia - rank];
    if (ib >= rank && db != 1) p.stride_b[i] = sb[ib - rank];
  }
  return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

// Elementwise binary op. `fwd(x, y)` computes the value, `dx(x, y, out)` and
// `dy(x, y, out)` the local partial derivatives.
template <class Fwd, class Dx, class Dy>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Dx dx,
                 Dy dy) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(shape_numel(plan.out));
  const auto& av = a.values();
  const auto& bv = b.values();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = fwd(av[ia], bv[ib]);
  });
  NodePtr an = a.node(), bn = b.node();
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), {an, bn},
                     [an, bn, plan, dx, dy](Node& self) {
                       auto* ga = grad_of(an);
                       auto* gb = grad_of(bn);
                       const auto& av = an->value;
                       const auto& bv = bn->value;
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t ia,
                                                    std::size_t ib) {
                         const double g = self.grad[i];
                         if (ga) (*ga)[ia] += g * dx(av[ia], bv[ib], self.value[i]);
                         if (gb) (*gb)[ib] += g * dy(av[ia], bv[ib], self.value[i]);
                       });
                     });
}

template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  NodePtr an = a.node();
  return make_result(a.shape(), std::move(out), {an}, [an, deriv](Node& self) {
    auto* ga = grad_of(an);
    if (!ga) return;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      (*ga)[i] += self.grad[i] * deriv(an->value[i], self.value[i]);
    }
  });
}

// outer x axis x inner view of a tensor around one axis.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void gemm_acc_nt(const double* dc, const double* b, double* da, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = dc + i * n;
    double* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      // four partial sums so the reduction pipelines
      double acc[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        acc[0] += grow[j] * brow[j];
        acc[1] += grow[j + 1] * brow[j + 1];
        acc[2] += grow[j + 2] * brow[j + 2];
        acc[3] += grow[j + 3] * brow[j + 3];
      }
      for (; j < n; ++j) acc[0] += grow[j] * brow[j];
      darow[p] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void gemm_acc_tn(const double* a, const double* dc, double* db, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- basics

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(node);
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size(int axis) const {
  return shape()[normalize_axis(axis, dim())];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
const std::vector<double>& Tensor::values() const { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::zero_grad() { node_->grad.clear(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  return *this;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != dim()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= shape()[i]) throw DimensionError("index out of range");
    flat = flat * shape()[i] + v;
    ++i;
  }
  return node_->value[flat];
}

Tensor Tensor::detach() const { return from(shape(), values()); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  const NodePtr& root = loss.node();
  if (!root->requires_grad) {
    throw ContractError("backward() on a loss that is not on the tape");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary_op(a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& a) {
  const auto& av = a.values();
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  NodePtr an = a.node();
  return make_result({1}, {s}, {an}, [an](Node& self) {
    auto* ga = grad_of(an);
    if (!ga) return;
    for (auto& g : *ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.dim());
  const AxisSplit s = split_at(a.shape(), ax);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.axis; ++k) {
      const double* src = av.data() + (o * s.axis + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  NodePtr an = a.node();
  return make_result(reduced_shape(a.shape(), ax, keepdim), std::move(out), {an},
                     [an, s](Node& self) {
                       auto* ga = grad_of(an);
                       if (!ga) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t k = 0; k < s.axis; ++k) {
                           double* dst = ga->data() + (o * s.axis + k) * s.inner;
                           const double* g = self.grad.data() + o * s.inner;
                           for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
                         }
                     });
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, a.dim());
  return mul_scalar(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.shape()[ax]));
}

Tensor var(const Tensor& a, int axis, bool keepdim) {
  Tensor centered = sub(a, mean(a, axis, true));
  return mean(square(centered), axis, keepdim);
}

Tensor stddev(const Tensor& a, int axis, bool keepdim) { return sqrt(var(a, axis, keepdim)); }

// ---------------------------------------------------------------- softmax / layernorm

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.axis * s.inner + i;
      double mx = xv[base];
      for (std::size_t k = 1; k < s.axis; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.axis; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.axis; ++k) out[base + k * s.inner] /= z;
    }
  NodePtr xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, [xn, s](Node& self) {
    auto* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.axis * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.axis; ++k) {
          const std::size_t j = base + k * s.inner;
          dot += self.grad[j] * self.value[j];
        }
        for (std::size_t k = 0; k < s.axis; ++k) {
          const std::size_t j = base + k * s.inner;
          (*gx)[j] += self.value[j] * (self.grad[j] - dot);
        }
      }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += src[i];
    mu /= static_cast<double>(d);
    double v = 0.0;
    for (std::size_t i = 0; i < d; ++i) v += (src[i] - mu) * (src[i] - mu);
    v /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(v + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (src[i] - mu) * is;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gv[i] + bv[i];
    }
  }
  NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](Node& self) {
        auto* gx = grad_of(xn);
        auto* gg = grad_of(gn);
        auto* gb = grad_of(bn);
        const auto& gv = gn->value;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double dh = dy[i] * gv[i];
            mean_dh += dh;
            mean_dh_h += dh * h[i];
            if (gg) (*gg)[i] += dy[i] * h[i];
            if (gb) (*gb)[i] += dy[i];
          }
          if (!gx) continue;
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) {
            const double dh = dy[i] * gv[i];
            (*gx)[r * d + i] += inv_std[r] * (dh - mean_dh - h[i] * mean_dh_h);
          }
        }
      });
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape()[a.dim() - 1];
  const std::size_t k2 = b.shape()[b.dim() - 2];
  const std::size_t n = b.shape()[b.dim() - 1];
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  if (abatch.empty()) abatch.push_back(1);
  if (bbatch.empty()) bbatch.push_back(1);
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(abatch, bbatch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not broadcast");
  }
  if (plan.same) {
    // make strides explicit so the loop below can use them
    plan.same = false;
    plan.stride_a = contiguous_strides(plan.out);
    plan.stride_b = contiguous_strides(plan.out);
  }
  const std::size_t batches = shape_numel(plan.out);
  std::vector<std::size_t> a_off(batches), b_off(batches);
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    a_off[i] = ia * m * k;
    b_off[i] = ib * k * n;
  });
  Shape out_shape;
  if (a.dim() > 2 || b.dim() > 2) out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(batches * m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < batches; ++i) {
    gemm_acc(av.data() + a_off[i], bv.data() + b_off[i], out.data() + i * m * n, m, k, n);
  }
  NodePtr an = a.node(), bn = b.node();
  return make_result(std::move(out_shape), std::move(out), {an, bn},
                     [an, bn, a_off = std::move(a_off), b_off = std::move(b_off), m, k, n,
                      batches](Node& self) {
                       auto* ga = grad_of(an);
                       auto* gb = grad_of(bn);
                       for (std::size_t i = 0; i < batches; ++i) {
                         const double* dc = self.grad.data() + i * m * n;
                         if (ga) {
                           gemm_acc_nt(dc, bn->value.data() + b_off[i], ga->data() + a_off[i],
                                       m, k, n);
                         }
                         if (gb) {
                           gemm_acc_tn(an->value.data() + a_off[i], dc, gb->data() + b_off[i],
                                       m, k, n);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.dim() != 2 || x.shape().back() != weight.shape()[0]) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  Tensor y = matmul(x.dim() == 1 ? reshape(x, {1, x.numel()}) : x, weight);
  if (x.dim() == 1) y = reshape(y, {weight.shape()[1]});
  return bias.defined() ? add(y, bias) : y;
}

// ---------------------------------------------------------------- shapes

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  NodePtr an = a.node();
  return make_result(std::move(shape), a.values(), {an}, [an](Node& self) {
    auto* ga = grad_of(an);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
  });
}

Tensor unsqueeze(const Tensor& a, int axis) {
  Shape s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size() + 1);
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(ax), 1);
  return reshape(a, std::move(s));
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const std::size_t rank = a.dim();
  if (order.size() != rank) throw DimensionError("permute: order rank mismatch");
  std::vector<bool> used(rank, false);
  for (auto o : order) {
    if (o >= rank || used[o]) throw DimensionError("permute: invalid axis order");
    used[o] = true;
  }
  const auto in_strides = contiguous_strides(a.shape());
  BroadcastPlan plan;  // reuse the strided walker: out index -> input offset
  plan.out.resize(rank);
  plan.stride_a.resize(rank);
  plan.stride_b.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.out[i] = a.shape()[order[i]];
    plan.stride_a[i] = in_strides[order[i]];
  }
  std::vector<double> out(a.numel());
  const auto& av = a.values();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = av[ia]; });
  NodePtr an = a.node();
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), {an}, [an, plan](Node& self) {
    auto* ga = grad_of(an);
    if (!ga) return;
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) {
      (*ga)[ia] += self.grad[i];
    });
  });
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  const std::size_t x = normalize_axis(axis0, a.dim());
  const std::size_t y = normalize_axis(axis1, a.dim());
  std::vector<std::size_t> order(a.dim());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x], order[y]);
  return permute(a, order);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of no tensors");
  const std::size_t rank = parts[0].dim();
  const std::size_t ax = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.dim() != rank) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
        throw DimensionError("concat: " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit total = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * total.inner;
    const auto& pv = p.values();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(pv.data() + o * w, w, out.data() + o * total.axis * total.inner + offset);
    }
    inputs.push_back(p.node());
    widths.push_back(w);
    offsets.push_back(offset);
    offset += w;
  }
  return make_result(std::move(out_shape), std::move(out), inputs,
                     [inputs, widths, offsets, total](Node& self) {
                       for (std::size_t j = 0; j < inputs.size(); ++j) {
                         auto* g = grad_of(inputs[j]);
                         if (!g) continue;
                         for (std::size_t o = 0; o < total.outer; ++o) {
                           const double* src = self.grad.data() +
                                               o * total.axis * total.inner + offsets[j];
                           double* dst = g->data() + o * widths[j];
                           for (std::size_t i = 0; i < widths[j]; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor narrow(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, a.dim());
  if (length == 0 || start + length > a.shape()[ax]) {
    throw DimensionError("narrow: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of extent " +
                         std::to_string(a.shape()[ax]));
  }
  const AxisSplit s = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(av.data() + (o * s.axis + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  NodePtr an = a.node();
  return make_result(std::move(out_shape), std::move(out), {an},
                     [an, s, start, length](Node& self) {
                       auto* ga = grad_of(an);
                       if (!ga) return;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = self.grad.data() + o * length * s.inner;
                         double* dst = ga->data() + (o * s.axis + start) * s.inner;
                         for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor index_rows(const Tensor& table, const std::vector<std::size_t>& index,
                  const Shape& out_shape) {
  if (table.dim() != 2) throw DimensionError("index_rows: table must be 2-D");
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("index_rows: index count does not match " + shape_str(out_shape));
  }
  const std::size_t rows = table.shape()[0];
  const std::size_t d = table.shape()[1];
  std::vector<double> out(index.size() * d);
  const auto& tv = table.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw DimensionError("index_rows: row index out of range");
    std::copy_n(tv.data() + index[i] * d, d, out.data() + i * d);
  }
  Shape shape = out_shape;
  shape.push_back(d);
  NodePtr tn = table.node();
  return make_result(std::move(shape), std::move(out), {tn}, [tn, index, d](Node& self) {
    auto* gt = grad_of(tn);
    if (!gt) return;
    for (std::size_t i = 0; i < index.size(); ++i) {
      double* dst = gt->data() + index[i] * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

TopK top_k(const Tensor& x, std::size_t k) {
  const std::size_t d = x.shape().back();
  if (k == 0 || k > d) {
    throw DimensionError("top_k: k=" + std::to_string(k) + " with last extent " +
                         std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  std::vector<std::size_t> indices(rows * k);
  std::vector<double> vals(rows * k);
  std::vector<std::size_t> order(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t i, std::size_t j) {
                        return row[i] > row[j] || (row[i] == row[j] && i < j);
                      });
    for (std::size_t j = 0; j < k; ++j) {
      indices[r * k + j] = order[j];
      vals[r * k + j] = row[order[j]];
    }
  }
  Shape shape = x.shape();
  shape.back() = k;
  NodePtr xn = x.node();
  TopK result;
  result.indices = indices;
  result.values = make_result(std::move(shape), std::move(vals), {xn},
                              [xn, indices, k, d](Node& self) {
                                auto* gx = grad_of(xn);
                                if (!gx) return;
                                for (std::size_t i = 0; i < indices.size(); ++i) {
                                  (*gx)[(i / k) * d + indices[i]] += self.grad[i];
                                }
                              });
  return result;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (b.dim() != 2 || a.shape().back() != b.shape()[1]) {
    throw DimensionError("cosine_similarity: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  constexpr double kEps = 1e-12;
  Tensor an = div(a, sqrt(add_scalar(sum(square(a), -1, true), kEps)));
  Tensor bn = div(b, sqrt(add_scalar(sum(square(b), -1, true), kEps)));
  return matmul(an, transpose(bn, 0, 1));
}

Tensor patchify(const Tensor& x, std::size_t patch_len, std::size_t stride) {
  if (x.dim() != 3) throw DimensionError("patchify expects [B, L, C], got " + shape_str(x.shape()));
  const std::size_t batch = x.shape()[0], len = x.shape()[1], ch = x.shape()[2];
  if (patch_len == 0 || stride == 0 || patch_len > len) {
    throw ConfigError("patchify: patch length " + std::to_string(patch_len) +
                      " incompatible with lookback " + std::to_string(len));
  }
  const std::size_t n = (len - patch_len) / stride + 1;
  const std::size_t width = patch_len * ch;
  std::vector<double> out(batch * n * width);
  const auto& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < n; ++p) {
      std::copy_n(xv.data() + (b * len + p * stride) * ch, width,
                  out.data() + (b * n + p) * width);
    }
  NodePtr xn = x.node();
  return make_result({batch, n, width}, std::move(out), {xn},
                     [xn, batch, len, ch, n, width, stride](Node& self) {
                       auto* gx = grad_of(xn);
                       if (!gx) return;
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t p = 0; p < n; ++p) {
                           const double* src = self.grad.data() + (b * n + p) * width;
                           double* dst = gx->data() + (b * len + p * stride) * ch;
                           for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
                         }
                     });
}

}  // namespace trimodal

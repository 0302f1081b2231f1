#include "trimodal/losses.hpp"

#include <algorithm>
#include <cmath>

#include "trimodal/errors.hpp"
#include "trimodal/linalg.hpp"

namespace trimodal {

namespace {

void require_same(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape() || pred.dim() != 3) {
    throw DimensionError(std::string(what) + ": expected matching [B, T, C] tensors, got " +
                         shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  }
}

}  // namespace

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

Tensor loss_l1_svd(const Tensor& pred, const Tensor& target, std::size_t k) {
  require_same(pred, target, "loss_l1_svd");
  if (k == 0) throw ConfigError("svd rank must be >= 1");
  const std::size_t b = target.shape()[0], t = target.shape()[1], c = target.shape()[2];
  const std::size_t rank = std::min(k, c);
  std::vector<double> proj(b * c * c, 0.0);
  const auto y = target.data();
  for (std::size_t i = 0; i < b; ++i) {
    TruncatedSvd svd = truncated_svd(y.subspan(i * t * c, t * c), t, c, rank);
    double* p = proj.data() + i * c * c;
    for (std::size_t r = 0; r < c; ++r)
      for (std::size_t q = 0; q < c; ++q) {
        double acc = 0.0;
        for (std::size_t j = 0; j < svd.rank; ++j) acc += svd.v[r * svd.rank + j] * svd.v[q * svd.rank + j];
        p[r * c + q] = acc;
      }
  }
  Tensor projection = Tensor::from({b, c, c}, std::move(proj));
  Tensor target_proj;
  {
    NoGradGuard guard;
    target_proj = matmul(target.detach(), projection);
  }
  return mean(abs(sub(matmul(pred, projection), target_proj)));
}

PatchLosses loss_patch_stats(const Tensor& pred, const Tensor& target, std::size_t patch_len) {
  require_same(pred, target, "loss_patch_stats");
  if (patch_len == 0) throw ConfigError("patch length must be >= 1");
  const std::size_t b = pred.shape()[0], t = pred.shape()[1], c = pred.shape()[2];
  Tensor target_c = target.detach();

  std::vector<Tensor> mean_terms, var_terms, corr_terms;
  std::size_t n_mean = 0, n_shape = 0;
  for (std::size_t start = 0; start < t; start += patch_len) {
    const std::size_t len = std::min(patch_len, t - start);
    Tensor ph = narrow(pred, 1, start, len);
    Tensor py = narrow(target_c, 1, start, len);
    Tensor mh = mean(ph, 1, true);  // [B, 1, C]
    Tensor my = mean(py, 1, true);
    mean_terms.push_back(sum(square(sub(mh, my))));
    n_mean += b * c;
    if (len < 2) continue;
    Tensor sh = stddev(ph, 1, true);
    Tensor sy = stddev(py, 1, true);
    var_terms.push_back(sum(square(sub(sh, sy))));
    Tensor cov = mean(mul(sub(ph, mh), sub(py, my)), 1, true);
    Tensor r = div(cov, add_scalar(mul(sh, sy), kCorrEps));
    // Flat patches on either side carry r = 0.
    std::vector<double> keep(b * c);
    const auto shv = sh.data(), syv = sy.data();
    for (std::size_t i = 0; i < b * c; ++i) keep[i] = (shv[i] < kCorrEps || syv[i] < kCorrEps) ? 0.0 : 1.0;
    r = mul(r, Tensor::from({b, 1, c}, std::move(keep)));
    corr_terms.push_back(sum(add_scalar(neg(r), 1.0)));
    n_shape += b * c;
  }
  auto average = [](const std::vector<Tensor>& terms, std::size_t n) {
    if (terms.empty()) return Tensor::scalar(0.0);
    Tensor acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return mul_scalar(acc, 1.0 / static_cast<double>(n));
  };
  return {average(mean_terms, n_mean), average(var_terms, n_shape), average(corr_terms, n_shape)};
}

AdfState::AdfState(ParamStore& store, std::size_t svd_rank_, std::size_t patch_len_)
    : svd_rank(svd_rank_), patch_len(patch_len_) {
  log_sigma = store.add("adf.log_sigma", {4}, Init::zeros());
}

AdfBreakdown adf_loss(const Tensor& pred, const Tensor& target, const AdfState& state) {
  if (state.log_sigma.numel() != 4) throw ContractError("adf_loss needs four log-sigma entries");
  AdfBreakdown out;
  Tensor base = mse_loss(pred, target);
  PatchLosses patch = loss_patch_stats(pred, target, state.patch_len);
  std::array<Tensor, 4> aux{loss_l1_svd(pred, target, state.svd_rank), patch.mean, patch.var,
                            patch.corr};
  Tensor total = base;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor s = reshape(narrow(state.log_sigma, 0, i, 1), {1});
    Tensor weight = mul_scalar(exp(mul_scalar(s, -2.0)), 0.5);
    total = add(total, add(mul(weight, reshape(aux[i], {1})), s));
    out.aux[i] = aux[i].item();
  }
  out.mse = base.item();
  out.total = reshape(total, {1});
  return out;
}

}  // namespace trimodal

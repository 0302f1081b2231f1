#pragma once

#include <array>
#include <cstddef>

#include "trimodal/nn.hpp"
#include "trimodal/tensor.hpp"

namespace trimodal {

Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Mean absolute difference of pred and target after both are projected on
/// the top-k right-singular subspace of each target sample [T, C]. The
/// projection is a constant, so gradients flow through pred only.
Tensor loss_l1_svd(const Tensor& pred, const Tensor& target, std::size_t k);

struct PatchLosses {
  Tensor mean;  // squared gap of patch means
  Tensor var;   // squared gap of patch stds (patches of length >= 2)
  Tensor corr;  // 1 - Pearson r per patch (length >= 2); r = 0 for flat patches
};

/// Non-overlapping patches of patch_len steps along T, per sample and
/// channel; a short final patch is kept.
PatchLosses loss_patch_stats(const Tensor& pred, const Tensor& target, std::size_t patch_len);

inline constexpr double kCorrEps = 1e-8;

/// Learnable log-uncertainties of the four shape terms.
struct AdfState {
  Tensor log_sigma;  // [4]: svd, mean, var, corr
  std::size_t svd_rank = 4;
  std::size_t patch_len = 24;

  AdfState() = default;
  AdfState(ParamStore& store, std::size_t svd_rank = 4, std::size_t patch_len = 24);
};

struct AdfBreakdown {
  Tensor total;
  double mse = 0.0;
  std::array<double, 4> aux{};  // svd, mean, var, corr
};

/// mse + sum_i (exp(-2 s_i) / 2 * aux_i + s_i) with s = log_sigma.
AdfBreakdown adf_loss(const Tensor& pred, const Tensor& target, const AdfState& state);

}  // namespace trimodal

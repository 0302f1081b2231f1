#include "trimodal/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trimodal/errors.hpp"

namespace trimodal {

std::vector<double> TruncatedSvd::reconstruct() const {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t c = 0; c < rank; ++c) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double us = u[i * rank + c] * s[c];
      if (us == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += us * v[j * rank + c];
    }
  }
  return out;
}

TruncatedSvd truncated_svd(std::span<const double> matrix, std::size_t rows, std::size_t cols,
                           std::size_t k, double tol) {
  if (rows == 0 || cols == 0 || matrix.size() != rows * cols) {
    throw DimensionError("truncated_svd: buffer does not hold a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
  }
  // Column-major working copy so each column is contiguous.
  std::vector<double> a(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) a[j * rows + i] = matrix[i * cols + j];
  std::vector<double> v(cols * cols, 0.0);  // column-major, starts as identity
  for (std::size_t j = 0; j < cols; ++j) v[j * cols + j] = 1.0;

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* ap = a.data() + p * rows;
        double* aq = a.data() + q * rows;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += ap[i] * ap[i];
          beta += aq[i] * aq[i];
          gamma += ap[i] * aq[i];
        }
        if (gamma == 0.0 || std::fabs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double x = ap[i], y = aq[i];
          ap[i] = c * x - s * y;
          aq[i] = s * x + c * y;
        }
        double* vp = v.data() + p * cols;
        double* vq = v.data() + q * cols;
        for (std::size_t i = 0; i < cols; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < rows; ++i) n2 += a[j * rows + i] * a[j * rows + i];
    sigma[j] = std::sqrt(n2);
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  TruncatedSvd out;
  out.rows = rows;
  out.cols = cols;
  out.rank = std::min(k, cols);
  out.u.assign(rows * out.rank, 0.0);
  out.s.resize(out.rank);
  out.v.resize(cols * out.rank);
  for (std::size_t c = 0; c < out.rank; ++c) {
    const std::size_t j = order[c];
    out.s[c] = sigma[j];
    if (sigma[j] > 0.0) {
      for (std::size_t i = 0; i < rows; ++i) out.u[i * out.rank + c] = a[j * rows + i] / sigma[j];
    }
    for (std::size_t i = 0; i < cols; ++i) out.v[i * out.rank + c] = v[j * cols + i];
  }
  return out;
}

TruncatedSvd truncated_svd(const Tensor& matrix, std::size_t k) {
  if (matrix.dim() != 2) {
    throw DimensionError("truncated_svd expects a matrix, got " + shape_str(matrix.shape()));
  }
  return truncated_svd(matrix.data(), matrix.shape()[0], matrix.shape()[1], k);
}

}  // namespace trimodal

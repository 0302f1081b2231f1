#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trimodal/tensor.hpp"

namespace trimodal {

/// Leading singular triplets of a rows x cols matrix, singular values sorted
/// in descending order. All buffers are row-major.
struct TruncatedSvd {
  std::size_t rows = 0, cols = 0, rank = 0;
  std::vector<double> u;  // rows x rank
  std::vector<double> s;  // rank
  std::vector<double> v;  // cols x rank

  /// U_k diag(S_k) V_k^T as a rows x cols buffer.
  std::vector<double> reconstruct() const;
};

/// One-sided Jacobi SVD keeping min(k, cols) components. Forward only: there
/// is no gradient through the decomposition.
TruncatedSvd truncated_svd(std::span<const double> matrix, std::size_t rows, std::size_t cols,
                           std::size_t k, double tol = 1e-10);

/// Tensor front end: `matrix` must be 2-D. Results carry no tape history.
TruncatedSvd truncated_svd(const Tensor& matrix, std::size_t k);

}  // namespace trimodal

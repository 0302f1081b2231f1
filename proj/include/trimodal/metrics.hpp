#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace trimodal {

using WarpingPath = std::vector<std::pair<std::size_t, std::size_t>>;

struct DtwResult {
  double cost = 0.0;
  WarpingPath path;  // (index into y, index into yhat)
};

/// Squared-distance DTW. Among optimal paths the one chosen walks forward
/// from (0, 0) preferring a diagonal step, then a step in y, then in yhat.
DtwResult dtw(std::span<const double> y, std::span<const double> yhat);
double dtw_cost(std::span<const double> y, std::span<const double> yhat);

/// Sum of squared index offsets along the path divided by T^2.
double tdi(const WarpingPath& path, std::size_t horizon);

struct Metrics {
  double mse = 0.0, mae = 0.0, dtw = 0.0, tdi = 0.0;
};

std::pair<double, double> mse_mae(std::span<const double> pred, std::span<const double> target);

/// Streams [T, C] row-major samples. MSE and MAE average over all elements;
/// DTW and TDI are computed per channel and averaged over (sample, channel).
class MetricAccumulator {
 public:
  void add(const double* pred, const double* target, std::size_t horizon, std::size_t channels);
  Metrics result() const;
  std::size_t samples() const { return samples_; }

 private:
  double se_ = 0.0, ae_ = 0.0, dtw_ = 0.0, tdi_ = 0.0;
  std::size_t elements_ = 0, series_ = 0, samples_ = 0;
};

}  // namespace trimodal

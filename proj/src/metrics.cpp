#include "trimodal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trimodal/errors.hpp"

namespace trimodal {

namespace {

// Cost-to-go table: g[m][n] is the cheapest cost of reaching the end from (m, n).
std::vector<double> cost_to_go(std::span<const double> y, std::span<const double> yhat) {
  if (y.empty() || yhat.empty()) throw ContractError("dtw needs two non-empty series");
  const std::size_t m = y.size(), n = yhat.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(m * n, inf);
  for (std::size_t i = m; i-- > 0;) {
    for (std::size_t j = n; j-- > 0;) {
      const double d = (y[i] - yhat[j]) * (y[i] - yhat[j]);
      double best = (i + 1 == m && j + 1 == n) ? 0.0 : inf;
      if (i + 1 < m && j + 1 < n) best = std::min(best, g[(i + 1) * n + j + 1]);
      if (i + 1 < m) best = std::min(best, g[(i + 1) * n + j]);
      if (j + 1 < n) best = std::min(best, g[i * n + j + 1]);
      g[i * n + j] = d + best;
    }
  }
  return g;
}

}  // namespace

DtwResult dtw(std::span<const double> y, std::span<const double> yhat) {
  const auto g = cost_to_go(y, yhat);
  const std::size_t m = y.size(), n = yhat.size();
  DtwResult out;
  out.cost = g[0];
  std::size_t i = 0, j = 0;
  out.path.emplace_back(0, 0);
  while (i + 1 < m || j + 1 < n) {
    const double inf = std::numeric_limits<double>::infinity();
    const double diag = (i + 1 < m && j + 1 < n) ? g[(i + 1) * n + j + 1] : inf;
    const double down = i + 1 < m ? g[(i + 1) * n + j] : inf;
    const double right = j + 1 < n ? g[i * n + j + 1] : inf;
    if (diag <= down && diag <= right) {
      ++i, ++j;
    } else if (down <= right) {
      ++i;
    } else {
      ++j;
    }
    out.path.emplace_back(i, j);
  }
  return out;
}

double dtw_cost(std::span<const double> y, std::span<const double> yhat) {
  return cost_to_go(y, yhat)[0];
}

double tdi(const WarpingPath& path, std::size_t horizon) {
  if (horizon == 0) throw ContractError("tdi needs a positive horizon");
  double s = 0.0;
  for (const auto& [m, n] : path) {
    const double d = static_cast<double>(m) - static_cast<double>(n);
    s += d * d;
  }
  return s / (static_cast<double>(horizon) * static_cast<double>(horizon));
}

std::pair<double, double> mse_mae(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw DimensionError("mse_mae: sizes " + std::to_string(pred.size()) + " and " +
                         std::to_string(target.size()));
  }
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    se += d * d;
    ae += std::fabs(d);
  }
  const double n = static_cast<double>(pred.size());
  return {se / n, ae / n};
}

void MetricAccumulator::add(const double* pred, const double* target, std::size_t horizon,
                            std::size_t channels) {
  std::vector<double> p(horizon), y(horizon);
  for (std::size_t i = 0; i < horizon * channels; ++i) {
    const double d = pred[i] - target[i];
    se_ += d * d;
    ae_ += std::fabs(d);
  }
  elements_ += horizon * channels;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < horizon; ++t) {
      p[t] = pred[t * channels + c];
      y[t] = target[t * channels + c];
    }
    const DtwResult r = dtw(y, p);
    dtw_ += r.cost;
    tdi_ += tdi(r.path, horizon);
    ++series_;
  }
  ++samples_;
}

Metrics MetricAccumulator::result() const {
  Metrics m;
  if (elements_ == 0) return m;
  m.mse = se_ / static_cast<double>(elements_);
  m.mae = ae_ / static_cast<double>(elements_);
  m.dtw = dtw_ / static_cast<double>(series_);
  m.tdi = tdi_ / static_cast<double>(series_);
  return m;
}

}  // namespace trimodal

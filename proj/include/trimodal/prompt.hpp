#pragma once

#include <cstddef>
#include <string>

#include "trimodal/data.hpp"

namespace trimodal {

struct PromptStats {
  double min = 0.0, max = 0.0, median = 0.0;
  bool trend_up = true;     // sign of the least-squares slope of the channel mean
  bool momentum_up = true;  // last-quarter mean minus first-quarter mean
  std::size_t period = 0;   // highest autocorrelation peak over lags 2..L/2; 0 if flat
};

struct PromptDoc {
  std::string text;
  double alpha = 0.0;
  PromptStats stats;
};

/// Mean over channels of the population std of each channel of a [L, C]
/// row-major window. The window is expected in train-normalized units.
double volatility_descriptor(const double* x, std::size_t lookback, std::size_t channels);

/// "high" above 1.2, "low" below 0.8, "moderate" otherwise.
const char* volatility_label(double alpha);

PromptStats window_stats(const double* x, std::size_t lookback, std::size_t channels);

PromptDoc render_prompt(const double* x, std::size_t lookback, std::size_t channels,
                        const DatasetSpec& spec, std::size_t horizon);

}  // namespace trimodal

#include "trimodal/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "trimodal/errors.hpp"

namespace trimodal {

double volatility_descriptor(const double* x, std::size_t lookback, std::size_t channels) {
  if (lookback < 2) throw InputError("volatility descriptor needs a lookback of at least 2");
  const double n = static_cast<double>(lookback);
  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < lookback; ++t) mean += x[t * channels + c];
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < lookback; ++t) {
      const double d = x[t * channels + c] - mean;
      var += d * d;
    }
    total += std::sqrt(var / n);
  }
  return total / static_cast<double>(channels);
}

const char* volatility_label(double alpha) {
  if (alpha > 1.2) return "high";
  if (alpha < 0.8) return "low";
  return "moderate";
}

PromptStats window_stats(const double* x, std::size_t lookback, std::size_t channels) {
  if (lookback < 2 || channels == 0) throw InputError("prompt statistics need a non-trivial window");
  PromptStats st;
  std::vector<double> all(x, x + lookback * channels);
  st.min = *std::min_element(all.begin(), all.end());
  st.max = *std::max_element(all.begin(), all.end());
  const std::size_t mid = all.size() / 2;
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid), all.end());
  st.median = all[mid];
  if (all.size() % 2 == 0) {
    const double lower = *std::max_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid));
    st.median = 0.5 * (st.median + lower);
  }

  std::vector<double> m(lookback, 0.0);
  for (std::size_t t = 0; t < lookback; ++t) {
    for (std::size_t c = 0; c < channels; ++c) m[t] += x[t * channels + c];
    m[t] /= static_cast<double>(channels);
  }
  const double n = static_cast<double>(lookback);
  const double t_mean = (n - 1.0) / 2.0;
  double mean = 0.0;
  for (double v : m) mean += v;
  mean /= n;
  double sxy = 0.0;
  for (std::size_t t = 0; t < lookback; ++t) sxy += (static_cast<double>(t) - t_mean) * (m[t] - mean);
  st.trend_up = sxy >= 0.0;

  const std::size_t q = std::max<std::size_t>(1, lookback / 4);
  double head = 0.0, tail = 0.0;
  for (std::size_t t = 0; t < q; ++t) {
    head += m[t];
    tail += m[lookback - q + t];
  }
  st.momentum_up = tail - head >= 0.0;

  double denom = 0.0;
  for (double v : m) denom += (v - mean) * (v - mean);
  st.period = 0;
  if (denom > 1e-12) {
    const std::size_t max_lag = lookback / 2;
    std::vector<double> r(max_lag + 2, 0.0);
    for (std::size_t lag = 1; lag <= std::min(max_lag + 1, lookback - 1); ++lag) {
      double num = 0.0;
      for (std::size_t t = 0; t + lag < lookback; ++t) num += (m[t] - mean) * (m[t + lag] - mean);
      r[lag] = num / denom;
    }
    // Highest local peak; short lags of a smooth series always correlate
    // strongly, so the raw argmax would almost always be lag 2.
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t lag = 2; lag <= max_lag; ++lag) {
      if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] > best) {
        best = r[lag];
        st.period = lag;
      }
    }
    if (st.period == 0) {
      for (std::size_t lag = 2; lag <= max_lag; ++lag) {
        if (r[lag] > best) {
          best = r[lag];
          st.period = lag;
        }
      }
    }
  }
  return st;
}

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

}  // namespace

PromptDoc render_prompt(const double* x, std::size_t lookback, std::size_t channels,
                        const DatasetSpec& spec, std::size_t horizon) {
  if (spec.description.empty()) throw ConfigError("dataset '" + spec.name + "' has no description");
  PromptDoc doc;
  doc.stats = window_stats(x, lookback, channels);
  doc.alpha = volatility_descriptor(x, lookback, channels);
  const PromptStats& s = doc.stats;
  std::string text;
  text += "[Task Specification] Dataset: " + spec.description;
  text += " Task: Forecast the next " + std::to_string(horizon) + " steps using the past " +
          std::to_string(lookback) + " steps.";
  text += " [Dynamic Statistics] Input statistics: min value = " + fixed3(s.min) +
          ", max value = " + fixed3(s.max) + ", median value = " + fixed3(s.median) +
          ", overall trend is " + (s.trend_up ? "upward" : "downward") +
          ", recent momentum is " + (s.momentum_up ? "upward" : "downward") +
          ", periodicity is approximately " + std::to_string(s.period) + " steps,";
  text += " Volatility descriptor alpha = " + fixed3(doc.alpha) + " (" +
          volatility_label(doc.alpha) + ").";
  doc.text = std::move(text);
  return doc;
}

}  // namespace trimodal

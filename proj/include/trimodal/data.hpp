#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "trimodal/tensor.hpp"

namespace trimodal {

enum class SplitMode { kEttHour, kEttMinute, kRatio };

std::string to_string(SplitMode mode);
SplitMode parse_split_mode(const std::string& text);
/// ETTh* -> hourly ETT borders, ETTm* -> 15-minute ETT borders, else 70/10/20.
SplitMode split_mode_for(const std::string& dataset_name);

/// Which origins count as windows of a split.
///   kLookback: the lookback must lie inside the split; the horizon may run
///              past the split end (bounded by the end of the file).
///   kFull:     lookback and horizon both inside the split.
enum class TargetPolicy { kLookback, kFull };

std::string to_string(TargetPolicy policy);
TargetPolicy parse_target_policy(const std::string& text);

struct DatasetSpec {
  std::string name;
  std::string csv_path;
  std::size_t channels = 0;  // 0 accepts whatever the file has
  std::string frequency;
  SplitMode split_mode = SplitMode::kRatio;
  TargetPolicy target_policy = TargetPolicy::kLookback;
  std::string description;
  std::size_t rows = 0;  // published row count, informational
};

/// Built-in records for the eight benchmarks plus the synthetic set. Paths
/// are bare file names resolved against a data directory by the caller.
const std::vector<DatasetSpec>& builtin_registry();
const DatasetSpec& registry_lookup(const std::string& name);
/// JSON array of {name, path, split_mode, channels, frequency, description,
/// target_policy?, rows?}.
std::vector<DatasetSpec> load_registry(const std::string& path);

struct RawSeries {
  std::vector<std::string> timestamps;
  std::vector<std::string> columns;
  std::size_t rows = 0;
  std::size_t channels = 0;
  std::vector<double> values;  // rows x channels, row-major

  double at(std::size_t r, std::size_t c) const { return values[r * channels + c]; }
};

RawSeries load_csv(const DatasetSpec& spec);
RawSeries parse_csv(std::istream& in, const std::string& source, std::size_t expected_channels = 0);
void write_csv(const RawSeries& series, const std::string& path);

struct SplitBorders {
  std::array<std::size_t, 3> begin{};  // first row of each split's first lookback
  std::array<std::size_t, 3> end{};    // one past the split's last row
};

SplitBorders split_borders(SplitMode mode, std::size_t rows, std::size_t lookback);

/// Window count per split without touching any data.
std::array<std::size_t, 3> window_counts(SplitMode mode, TargetPolicy policy, std::size_t rows,
                                         std::size_t lookback, std::size_t horizon);

struct SeriesWindow {
  std::size_t lookback = 0, horizon = 0, channels = 0;
  std::vector<double> x;  // lookback x channels
  std::vector<double> y;  // horizon x channels
  std::vector<double> norm_mean, norm_std;
  std::size_t origin = 0;
};

/// Sliding windows over one shared normalized matrix.
struct WindowSet {
  std::shared_ptr<const std::vector<double>> series;  // rows x channels, normalized
  std::size_t rows = 0, channels = 0, lookback = 0, horizon = 0;
  std::vector<std::size_t> origins;
  std::vector<double> mean, std;

  std::size_t size() const { return origins.size(); }
  const double* x_ptr(std::size_t i) const { return series->data() + origins[i] * channels; }
  const double* y_ptr(std::size_t i) const {
    return series->data() + (origins[i] + lookback) * channels;
  }
  SeriesWindow window(std::size_t i) const;
  /// x as [B, L, C] and y as [B, T, C] for the given window indices.
  std::pair<Tensor, Tensor> batch(const std::vector<std::size_t>& idx) const;
  WindowSet subset(const std::vector<std::size_t>& idx) const;
};

struct SplitOptions {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  TargetPolicy policy = TargetPolicy::kLookback;
};

struct SplitResult {
  WindowSet train, val, test;
  SplitBorders borders;
  std::vector<double> mean, std;
  std::vector<bool> std_guarded;  // channel had zero train std, replaced by 1
};

SplitResult split_and_normalize(const RawSeries& raw, SplitMode mode, const SplitOptions& opt);

/// Undo the train-statistic normalization of a window's lookback block.
std::vector<double> denormalize(const SeriesWindow& w, const std::vector<double>& block);

/// Temporal prefix of ceil(fraction * n) windows.
WindowSet few_shot_subset(const WindowSet& windows, double fraction);

/// Index batches in visiting order. The last batch may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   bool shuffle, std::uint64_t seed);

struct SyntheticOptions {
  std::size_t rows = 2400;
  std::size_t channels = 3;
  std::uint64_t seed = 7;
};

/// Multi-period sinusoids with a two-state regime chain; the volatile regime
/// amplifies the signal and injects short bursts.
RawSeries synthetic_series(const SyntheticOptions& opt);

}  // namespace trimodal

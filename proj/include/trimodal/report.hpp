#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "trimodal/config.hpp"
#include "trimodal/experiment.hpp"
#include "trimodal/metrics.hpp"

namespace trimodal {

struct MetricsRow {
  std::string dataset, variant, split;
  std::size_t horizon = 0;
  Metrics metrics;
};

void write_text(const std::string& path, const std::string& text);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
void write_train_log(const std::string& path, const std::vector<EpochRecord>& log);
void write_predictions_csv(const std::string& path, const std::vector<PredictionRow>& rows);

/// Two stacked panels for one window and channel: target vs forecast, and
/// the three routing-weight traces.
std::string render_plot_svg(const std::vector<PredictionRow>& rows, std::size_t origin,
                            std::size_t channel);

/// JSON run manifest: seed, config and its hash, parameter and frozen-state
/// hashes, window counts, training log and metrics.
std::string render_manifest(const Experiment& ex, const std::vector<EpochRecord>& log,
                            const std::vector<MetricsRow>& metrics, double seconds);

/// (variant - full) / full * 100.
double percent_degradation(double full, double variant);

/// Variants x horizons grid of test MSE and DTW.
struct AblationReport {
  static const std::array<const char*, 5>& variant_names();
  std::vector<std::size_t> horizons;
  // [variant][horizon] -> {mse, dtw}
  std::array<std::vector<std::array<double, 2>>, 5> cells;

  double average(std::size_t variant, std::size_t metric) const;
  /// Rows: each horizon, Avg, %Deg; two metric rows each; one column per variant.
  std::string to_csv() const;
};

/// Config of the given variant index (0 full, then no_trl, no_srl, no_vat, no_adf).
RunConfig variant_config(const RunConfig& base, std::size_t variant, std::size_t horizon);

using ProgressFn = std::function<void(const std::string&)>;
AblationReport run_ablation(const RunConfig& base, const std::vector<std::size_t>& horizons,
                            const ProgressFn& progress = {});

}  // namespace trimodal

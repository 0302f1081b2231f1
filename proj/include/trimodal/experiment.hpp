#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trimodal/config.hpp"
#include "trimodal/data.hpp"
#include "trimodal/embedder.hpp"
#include "trimodal/losses.hpp"
#include "trimodal/metrics.hpp"
#include "trimodal/model.hpp"
#include "trimodal/symbolizer.hpp"

namespace trimodal {

/// Side inputs of one window, computed once and reused every epoch.
struct WindowFeatures {
  double alpha = 0.0;
  std::vector<std::string> prompt;
  std::array<std::vector<std::string>, 3> symbols;
};

/// Prompt tokens are cut to `token_cap`; symbols are kept whole.
std::vector<WindowFeatures> build_features(const WindowSet& windows, const DatasetSpec& spec,
                                           const MultiScaleSymbolizer* symbolizer, bool with_text,
                                           std::size_t token_cap);

/// Model inputs and targets for the given window indices.
std::pair<ModelBatch, Tensor> make_model_batch(const WindowSet& windows,
                                               const std::vector<WindowFeatures>& features,
                                               const std::vector<std::size_t>& idx);

struct PreparedData {
  DatasetSpec spec;
  SplitResult split;
};

/// Registry lookup, CSV load (or synthetic generation) and normalization.
PreparedData prepare_data(const RunConfig& cfg);

enum class Split { kTrain, kVal, kTest };

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mse = 0.0;
  bool improved = false;
};

struct LossSummary {
  double loss = 0.0, mse = 0.0;
};

/// Fixed per-window routing weights used in prediction dumps.
struct PredictionRow {
  std::size_t origin, step, channel;
  double y, y_hat, w_temp, w_txt, w_sym;
};

class Experiment {
 public:
  explicit Experiment(RunConfig cfg);

  /// Rebuilds a trained run from a checkpoint, optionally on another dataset
  /// (zero-shot). The target codebook is refit on the target training split.
  static std::unique_ptr<Experiment> from_checkpoint(const std::string& path,
                                                     const std::string& dataset = "");

  /// Trains with halving learning rate and early stopping, then restores the
  /// best-validation state. Throws DivergenceError on a non-finite loss or
  /// gradient; the parameters then hold the last finite state.
  std::vector<EpochRecord> train();

  LossSummary loss_on(Split split);
  Metrics evaluate(Split split);
  /// Repeats the last lookback value over the horizon.
  Metrics persistence(Split split) const;
  std::vector<PredictionRow> predict(Split split, std::size_t max_windows = 0);

  void save_checkpoint(const std::string& path) const;

  const RunConfig& config() const { return cfg_; }
  const PreparedData& data() const { return data_; }
  const WindowSet& windows(Split split) const;
  StatModel& model() { return *model_; }
  const StatModel& model() const { return *model_; }
  const EmbeddingProvider& provider() const { return *provider_; }
  const MultiScaleSymbolizer& symbolizer() const { return symbolizer_; }
  const AdfState* adf() const { return adf_ ? &*adf_ : nullptr; }
  std::size_t best_epoch() const { return best_epoch_; }
  /// Forward-pass count; lets callers spot runs that stopped early.
  std::size_t steps() const { return steps_; }

 private:
  struct Tag {};
  Experiment(RunConfig cfg, std::shared_ptr<const EmbeddingProvider> provider, Tag);
  void build(std::shared_ptr<const EmbeddingProvider> provider);
  const std::vector<WindowFeatures>& features(Split split) const;
  Tensor objective(const Tensor& pred, const Tensor& target) const;

  RunConfig cfg_;
  PreparedData data_;
  WindowSet train_windows_;
  MultiScaleSymbolizer symbolizer_;
  std::shared_ptr<const EmbeddingProvider> provider_;
  std::unique_ptr<StatModel> model_;
  std::optional<AdfState> adf_;
  std::array<std::vector<WindowFeatures>, 3> features_;
  std::size_t best_epoch_ = 0;
  std::size_t steps_ = 0;
};

}  // namespace trimodal

#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "trimodal/config.hpp"
#include "trimodal/errors.hpp"
#include "trimodal/experiment.hpp"
#include "trimodal/report.hpp"

namespace fs = std::filesystem;
using namespace trimodal;

namespace {

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

std::string variant_label(const RunConfig& cfg) {
  return cfg.ablation.any() ? cfg.ablation.to_string() : "full";
}

void print_metrics(const std::string& label, const Metrics& m) {
  std::printf("%-12s mse=%.6f mae=%.6f dtw=%.6f tdi=%.6f\n", label.c_str(), m.mse, m.mae, m.dtw,
              m.tdi);
}

// Metrics, predictions and plot for an already trained or loaded run.
std::vector<MetricsRow> report_run(Experiment& ex, const fs::path& out, bool predictions, bool plot,
                                   const std::string& variant) {
  const std::string ds = ex.data().spec.name;
  const std::size_t h = ex.config().horizon;
  std::vector<MetricsRow> rows;
  rows.push_back({ds, variant, "test", h, ex.evaluate(Split::kTest)});
  rows.push_back({ds, "persistence", "test", h, ex.persistence(Split::kTest)});
  print_metrics(variant, rows[0].metrics);
  print_metrics("persistence", rows[1].metrics);
  write_metrics_csv((out / "metrics.csv").string(), rows);
  if (predictions || plot) {
    auto preds = ex.predict(Split::kTest, predictions ? 0 : 1);
    if (predictions) write_predictions_csv((out / "predictions.csv").string(), preds);
    if (plot) {
      write_text((out / "plot.svg").string(),
                 render_plot_svg(preds, ex.windows(Split::kTest).origins.front(), 0));
    }
  }
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-modal (temporal, text, symbolic) forecaster"};
  app.require_subcommand(1);

  std::string config_path, ablation, out_dir = "runs/latest", checkpoint, dataset, suite = "table6";
  std::vector<std::string> sets;
  double few_shot = 0.0;
  long long seed = -1;
  bool predictions = false, plot = false;
  std::vector<std::size_t> horizons{96, 192, 336, 720};

  auto* train = app.add_subcommand("train", "train one model and evaluate it on the test split");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--ablation", ablation, "comma list of no_trl,no_srl,no_vat,no_adf");
  train->add_option("--few-shot", few_shot, "fraction of training windows to keep");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--set", sets, "config override key=value (repeatable)");
  train->add_option("--out", out_dir, "output directory");
  train->add_flag("--predictions", predictions, "write per-window test predictions");
  train->add_flag("--plot", plot, "write an SVG of the first test window");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  eval->add_option("--dataset", dataset, "dataset name (default: the training dataset)");
  eval->add_option("--out", out_dir, "output directory");
  eval->add_flag("--predictions", predictions, "write per-window test predictions");
  eval->add_flag("--plot", plot, "write an SVG of the first test window");

  auto* zero = app.add_subcommand("zero-shot", "evaluate a source checkpoint on another dataset");
  zero->add_option("--source", checkpoint, "source checkpoint JSON")->required();
  zero->add_option("--target", dataset, "target dataset name")->required();
  zero->add_option("--out", out_dir, "output directory");

  auto* bench = app.add_subcommand("bench", "run a benchmark suite");
  bench->add_option("--suite", suite, "suite name (table6)");
  bench->add_option("--config", config_path, "base key=value config file");
  bench->add_option("--set", sets, "config override key=value (repeatable)");
  bench->add_option("--horizons", horizons, "forecast horizons")->delimiter(',');
  bench->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    if (*train) {
      RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
      apply_overrides(cfg, sets);
      if (!ablation.empty()) cfg.ablation = Ablation::parse(ablation);
      if (few_shot > 0.0) cfg.few_shot = few_shot;
      if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.validate();
      Experiment ex(cfg);
      std::printf("dataset %s: %zu train / %zu val / %zu test windows\n", ex.data().spec.name.c_str(),
                  ex.windows(Split::kTrain).size(), ex.windows(Split::kVal).size(),
                  ex.windows(Split::kTest).size());
      std::vector<EpochRecord> log;
      try {
        log = ex.train();
      } catch (const DivergenceError& e) {
        ex.save_checkpoint((out / "diverged.json").string());
        std::fprintf(stderr, "error: %s (last finite state in %s)\n", e.what(),
                     (out / "diverged.json").string().c_str());
        return 4;
      }
      for (const auto& r : log) {
        std::printf("epoch %zu lr=%.6g train=%.6f val=%.6f val_mse=%.6f%s\n", r.epoch, r.lr,
                    r.train_loss, r.val_loss, r.val_mse, r.improved ? " *" : "");
      }
      ex.save_checkpoint((out / "checkpoint.json").string());
      write_train_log((out / "train_log.csv").string(), log);
      auto rows = report_run(ex, out, predictions, plot, variant_label(cfg));
      write_text((out / "manifest.json").string(), render_manifest(ex, log, rows, elapsed()));
    } else if (*eval || *zero) {
      auto ex = Experiment::from_checkpoint(checkpoint, dataset);
      const auto before = ex->model().params().hash(false);
      auto rows = report_run(*ex, out, predictions, plot,
                             *zero ? "zero-shot" : variant_label(ex->config()));
      if (ex->model().params().hash(false) != before) throw ContractError("evaluation changed weights");
      write_text((out / "manifest.json").string(), render_manifest(*ex, {}, rows, elapsed()));
    } else if (*bench) {
      if (suite != "table6") throw ConfigError("unknown suite '" + suite + "'");
      RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
      apply_overrides(cfg, sets);
      cfg.validate();
      AblationReport report = run_ablation(cfg, horizons, [](const std::string& line) {
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
      });
      const std::string csv = report.to_csv();
      write_text((out / "table6.csv").string(), csv);
      std::printf("\n%s", csv.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

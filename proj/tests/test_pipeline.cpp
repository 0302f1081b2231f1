#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "trimodal/config.hpp"
#include "trimodal/errors.hpp"
#include "trimodal/experiment.hpp"
#include "trimodal/report.hpp"

using namespace trimodal;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.dataset = "Synthetic";
  cfg.synthetic_rows = 700;
  cfg.lookback = 48;
  cfg.horizon = 24;
  cfg.patch_len = 8;
  cfg.stride = 4;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.bank_size = 16;
  cfg.emb_dim = 8;
  cfg.batch_size = 16;
  cfg.max_epochs = 3;
  cfg.max_batches = 4;
  cfg.adf_patch = 8;
  cfg.seed = seed;
  return cfg;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("trimodal_test_" + name);
  fs::create_directories(p);
  return p;
}

void check_same(const Metrics& a, const Metrics& b) {
  CHECK(a.mse == b.mse);
  CHECK(a.mae == b.mae);
  CHECK(a.dtw == b.dtw);
  CHECK(a.tdi == b.tdi);
}

}  // namespace

TEST_CASE("config text round trip and errors") {
  RunConfig cfg = tiny(9);
  cfg.ablation.no_srl = true;
  cfg.tols.mid = 0.2;
  const RunConfig back = RunConfig::parse(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.hash() == cfg.hash());
  CHECK(back.ablation.no_srl);
  CHECK(back.tols.mid == 0.2);

  RunConfig parsed = RunConfig::parse("# comment\nseed = 4  # trailing\n\nmodel.d_model=32\n");
  CHECK(parsed.seed == 4);
  CHECK(parsed.d_model == 32);
  CHECK(parsed.hash() != RunConfig{}.hash());

  RunConfig c;
  CHECK_THROWS_AS(c.set("no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("seed", "abc"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed 4\n"), ConfigError);
  CHECK_THROWS_AS(Ablation::parse("no_trl,bogus"), ConfigError);
  CHECK(Ablation::parse("none").to_string() == Ablation{}.to_string());
  for (const auto& key : RunConfig::keys()) CHECK_NOTHROW(c.set(key, c.get(key)));
}

TEST_CASE("zero epochs leaves the initial model and an empty log") {
  RunConfig cfg = tiny();
  cfg.max_epochs = 0;
  Experiment ex(cfg);
  const auto before = ex.model().params().hash(false);
  CHECK(ex.train().empty());
  CHECK(ex.model().params().hash(false) == before);
}

TEST_CASE("training is deterministic, halves the rate and keeps the best state") {
  Experiment a(tiny(3)), b(tiny(3));
  const auto log_a = a.train();
  const auto log_b = b.train();
  REQUIRE(log_a.size() == log_b.size());
  REQUIRE(!log_a.empty());
  double best = INFINITY;
  for (std::size_t e = 0; e < log_a.size(); ++e) {
    CHECK(log_a[e].train_loss == log_b[e].train_loss);
    CHECK(log_a[e].val_loss == log_b[e].val_loss);
    CHECK(log_a[e].lr == doctest::Approx(tiny().lr / std::pow(2.0, double(e))).epsilon(1e-12));
    CHECK(log_a[e].improved == (log_a[e].val_loss < best));
    best = std::min(best, log_a[e].val_loss);
  }
  check_same(a.evaluate(Split::kTest), b.evaluate(Split::kTest));
  // the restored state reproduces the best logged validation loss
  CHECK(a.loss_on(Split::kVal).loss == doctest::Approx(best).epsilon(1e-9));
  CHECK(log_a[a.best_epoch()].val_loss == best);

  Experiment c(tiny(4));
  c.train();
  CHECK(c.model().params().hash(true) != a.model().params().hash(true));
}

TEST_CASE("early stopping honours patience") {
  RunConfig cfg = tiny();
  cfg.max_epochs = 12;
  cfg.patience = 1;
  Experiment ex(cfg);
  const auto log = ex.train();
  // stops after the first non-improving epoch, or runs out of epochs
  std::size_t misses = 0;
  for (std::size_t e = 0; e < log.size(); ++e) {
    misses = log[e].improved ? 0 : misses + 1;
    if (e + 1 < log.size()) CHECK(misses < 1);
  }
  CHECK((log.size() == 12 || !log.back().improved));
}

TEST_CASE("frozen state survives training") {
  Experiment ex(tiny());
  const auto checksum = ex.provider().checksum();
  const auto bias = ex.model().router.bias.values();
  ex.train();
  CHECK(ex.provider().checksum() == checksum);
  CHECK(ex.model().router.bias.values() == bias);
  CHECK(bias == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("predictions, plot and manifest") {
  Experiment ex(tiny());
  const auto log = ex.train();
  const auto rows = ex.predict(Split::kTest, 3);
  const auto& w = ex.windows(Split::kTest);
  CHECK(rows.size() == 3 * w.horizon * w.channels);
  for (const auto& r : rows) {
    CHECK(std::fabs(r.w_temp + r.w_txt + r.w_sym - 1.0) < 1e-9);
    CHECK(r.step < w.horizon);
    CHECK(std::isfinite(r.y));
    CHECK(std::isfinite(r.y_hat));
  }
  CHECK(rows[0].y == w.y_ptr(0)[0]);

  const std::string svg = render_plot_svg(rows, rows[0].origin, 0);
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);

  const fs::path dir = scratch("outputs");
  write_predictions_csv((dir / "p.csv").string(), rows);
  std::ifstream in(dir / "p.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == rows.size() + 1);

  std::vector<MetricsRow> metrics{{"Synthetic", "full", "test", 24, ex.evaluate(Split::kTest)}};
  const std::string manifest = render_manifest(ex, log, metrics, 1.5);
  CHECK(manifest.find("\"config_hash\"") != std::string::npos);
  CHECK(manifest.find("\"routing_bias\"") != std::string::npos);
  CHECK_THROWS_AS(write_text("/nonexistent-dir/x/y.txt", "x"), IoError);
}

TEST_CASE("checkpoint round trip, zero-shot and channel checks") {
  const fs::path dir = scratch("ckpt");
  Experiment ex(tiny(5));
  ex.train();
  const Metrics m = ex.evaluate(Split::kTest);
  const std::string path = (dir / "checkpoint.json").string();
  ex.save_checkpoint(path);

  auto loaded = Experiment::from_checkpoint(path);
  const auto hash = loaded->model().params().hash(false);
  CHECK(hash == ex.model().params().hash(false));
  check_same(loaded->evaluate(Split::kTest), m);
  CHECK(loaded->model().params().hash(false) == hash);
  CHECK(loaded->best_epoch() == ex.best_epoch());

  auto same = Experiment::from_checkpoint(path, "Synthetic");
  check_same(same->evaluate(Split::kTest), m);

  // a registry with a two-channel file next to the synthetic source
  RawSeries raw = synthetic_series({700, 2, 11});
  write_csv(raw, (dir / "two.csv").string());
  std::ofstream reg(dir / "registry.json");
  reg << R"([{"name": "Synthetic", "path": "unused.csv", "description": "Synthetic hourly signals."},
             {"name": "TwoCh", "path": "two.csv", "split_mode": "ratio_70_10_20", "channels": 2,
              "description": "Two channels."}])";
  reg.close();
  RunConfig src = tiny(6);
  src.registry = (dir / "registry.json").string();
  src.data_dir = dir.string();
  Experiment three(src);
  three.save_checkpoint((dir / "three.json").string());
  CHECK_THROWS_AS(Experiment::from_checkpoint((dir / "three.json").string(), "TwoCh"), ConfigError);
  CHECK_THROWS_AS(Experiment::from_checkpoint((dir / "missing.json").string()), IoError);

  std::ofstream bad(dir / "bad.json");
  bad << "{\"format\": \"other\"}";
  bad.close();
  CHECK_THROWS_AS(Experiment::from_checkpoint((dir / "bad.json").string()), LoadError);
}

TEST_CASE("ablation arithmetic and table layout") {
  CHECK(percent_degradation(0.401, 0.412) == doctest::Approx(2.743142144638404).epsilon(1e-12));
  CHECK_THROWS_AS(percent_degradation(0.0, 1.0), ContractError);

  AblationReport r;
  r.horizons = {96, 192};
  for (std::size_t v = 0; v < 5; ++v) r.cells[v] = {{0.4 + 0.01 * double(v), 10.0}, {0.402, 12.0 + double(v)}};
  CHECK(r.average(1, 0) == doctest::Approx((0.41 + 0.402) / 2));
  const std::string csv = r.to_csv();
  std::istringstream s(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(s, l);) lines.push_back(l);
  REQUIRE(lines.size() == 9);
  CHECK(lines[0] == "horizon,metric,Full,w/o TRL,w/o SRL,w/o VAT,w/o ADF");
  CHECK(lines[5].rfind("Avg,MSE,", 0) == 0);
  CHECK(lines[7].rfind("%Deg,MSE,-,", 0) == 0);

  const RunConfig v2 = variant_config(tiny(), 2, 192);
  CHECK(v2.ablation.no_srl);
  CHECK_FALSE(v2.ablation.no_trl);
  CHECK(v2.horizon == 192);
  CHECK_THROWS_AS(variant_config(tiny(), 5, 96), ContractError);
}

#include "trimodal/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "trimodal/errors.hpp"

namespace trimodal {

namespace {

std::string num(double v, const char* fmt = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ostringstream s;
  s << "dataset,variant,split,horizon,mse,mae,dtw,tdi\n";
  for (const auto& r : rows) {
    s << r.dataset << ',' << r.variant << ',' << r.split << ',' << r.horizon << ','
      << num(r.metrics.mse, "%.10g") << ',' << num(r.metrics.mae, "%.10g") << ','
      << num(r.metrics.dtw, "%.10g") << ',' << num(r.metrics.tdi, "%.10g") << '\n';
  }
  write_text(path, s.str());
}

void write_train_log(const std::string& path, const std::vector<EpochRecord>& log) {
  std::ostringstream s;
  s << "epoch,lr,train_loss,val_loss,val_mse,improved\n";
  for (const auto& r : log) {
    s << r.epoch << ',' << num(r.lr, "%.10g") << ',' << num(r.train_loss, "%.10g") << ','
      << num(r.val_loss, "%.10g") << ',' << num(r.val_mse, "%.10g") << ',' << (r.improved ? 1 : 0)
      << '\n';
  }
  write_text(path, s.str());
}

void write_predictions_csv(const std::string& path, const std::vector<PredictionRow>& rows) {
  std::ostringstream s;
  s << "origin,step,channel,y,y_hat,w_temp,w_txt,w_sym\n";
  for (const auto& r : rows) {
    s << r.origin << ',' << r.step << ',' << r.channel << ',' << num(r.y, "%.10g") << ','
      << num(r.y_hat, "%.10g") << ',' << num(r.w_temp, "%.10g") << ',' << num(r.w_txt, "%.10g")
      << ',' << num(r.w_sym, "%.10g") << '\n';
  }
  write_text(path, s.str());
}

std::string render_plot_svg(const std::vector<PredictionRow>& rows, std::size_t origin,
                            std::size_t channel) {
  std::vector<const PredictionRow*> sel;
  for (const auto& r : rows)
    if (r.origin == origin && r.channel == channel) sel.push_back(&r);
  std::sort(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->step < b->step; });
  if (sel.empty()) throw ContractError("no prediction rows for the requested window and channel");

  const double width = 720, panel = 220, pad = 40;
  double lo = sel[0]->y, hi = sel[0]->y;
  for (auto* r : sel) lo = std::min({lo, r->y, r->y_hat}), hi = std::max({hi, r->y, r->y_hat});
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(sel.size() - 1, 1));
  auto px = [&](std::size_t i) { return pad + (width - 2 * pad) * static_cast<double>(i) / n; };
  auto line = [&](auto value, double top, double vlo, double vhi, const char* colour) {
    std::string pts;
    for (std::size_t i = 0; i < sel.size(); ++i) {
      const double y = top + panel - (value(*sel[i]) - vlo) / (vhi - vlo) * panel;
      pts += num(px(i), "%.2f") + "," + num(y, "%.2f") + " ";
    }
    return "<polyline fill=\"none\" stroke=\"" + std::string(colour) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  };
  std::ostringstream s;
  const double height = 2 * panel + 3 * pad;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << pad << "\" y=\"" << pad - 12 << "\" font-size=\"13\">origin " << origin
    << ", channel " << channel << ": target (black) vs forecast (red)</text>\n"
    << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << width - 2 * pad
    << "\" height=\"" << panel << "\" fill=\"none\" stroke=\"#999\"/>\n";
  s << line([](const PredictionRow& r) { return r.y; }, pad, lo, hi, "black");
  s << line([](const PredictionRow& r) { return r.y_hat; }, pad, lo, hi, "#c0392b");
  const double top2 = 2 * pad + panel;
  s << "<text x=\"" << pad << "\" y=\"" << top2 - 12
    << "\" font-size=\"13\">routing weights: temporal (blue), text (green), symbolic (orange)</text>\n"
    << "<rect x=\"" << pad << "\" y=\"" << top2 << "\" width=\"" << width - 2 * pad
    << "\" height=\"" << panel << "\" fill=\"none\" stroke=\"#999\"/>\n";
  s << line([](const PredictionRow& r) { return r.w_temp; }, top2, 0.0, 1.0, "#2471a3");
  s << line([](const PredictionRow& r) { return r.w_txt; }, top2, 0.0, 1.0, "#229954");
  s << line([](const PredictionRow& r) { return r.w_sym; }, top2, 0.0, 1.0, "#ca6f1e");
  s << "</svg>\n";
  return s.str();
}

std::string render_manifest(const Experiment& ex, const std::vector<EpochRecord>& log,
                            const std::vector<MetricsRow>& metrics, double seconds) {
  using nlohmann::json;
  const RunConfig& cfg = ex.config();
  json j;
  j["dataset"] = ex.data().spec.name;
  j["seed"] = cfg.seed;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  j["config_hash"] = hash;
  j["config"] = cfg.to_text();
  j["ablation"] = cfg.ablation.to_string();
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(ex.model().params().hash(true)));
  j["trainable_hash"] = hash;
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(ex.provider().checksum()));
  j["provider_checksum"] = hash;
  j["routing_bias"] = ex.model().router.bias.values();
  j["trainable_parameters"] = ex.model().params().trainable_count();
  j["windows"] = {{"train", ex.windows(Split::kTrain).size()},
                  {"val", ex.windows(Split::kVal).size()},
                  {"test", ex.windows(Split::kTest).size()}};
  j["best_epoch"] = ex.best_epoch();
  json epochs = json::array();
  for (const auto& r : log) {
    epochs.push_back({{"epoch", r.epoch},
                      {"lr", r.lr},
                      {"train_loss", r.train_loss},
                      {"val_loss", r.val_loss},
                      {"val_mse", r.val_mse},
                      {"improved", r.improved}});
  }
  j["epochs"] = std::move(epochs);
  json m = json::array();
  for (const auto& r : metrics) {
    m.push_back({{"dataset", r.dataset},
                 {"variant", r.variant},
                 {"split", r.split},
                 {"horizon", r.horizon},
                 {"mse", r.metrics.mse},
                 {"mae", r.metrics.mae},
                 {"dtw", r.metrics.dtw},
                 {"tdi", r.metrics.tdi}});
  }
  j["metrics"] = std::move(m);
  j["seconds"] = seconds;
  return j.dump(2) + "\n";
}

double percent_degradation(double full, double variant) {
  if (full == 0.0) throw ContractError("percent degradation against a zero baseline");
  return (variant - full) / full * 100.0;
}

const std::array<const char*, 5>& AblationReport::variant_names() {
  static const std::array<const char*, 5> names{"Full", "w/o TRL", "w/o SRL", "w/o VAT",
                                                "w/o ADF"};
  return names;
}

double AblationReport::average(std::size_t variant, std::size_t metric) const {
  double s = 0.0;
  for (const auto& c : cells[variant]) s += c[metric];
  return s / static_cast<double>(cells[variant].size());
}

std::string AblationReport::to_csv() const {
  std::ostringstream s;
  s << "horizon,metric";
  for (const char* v : variant_names()) s << ',' << v;
  s << '\n';
  const char* metric_names[2] = {"MSE", "DTW"};
  for (std::size_t h = 0; h < horizons.size(); ++h)
    for (std::size_t m = 0; m < 2; ++m) {
      s << horizons[h] << ',' << metric_names[m];
      for (std::size_t v = 0; v < 5; ++v) s << ',' << num(cells[v][h][m], "%.3f");
      s << '\n';
    }
  for (std::size_t m = 0; m < 2; ++m) {
    s << "Avg," << metric_names[m];
    for (std::size_t v = 0; v < 5; ++v) s << ',' << num(average(v, m), "%.3f");
    s << '\n';
  }
  for (std::size_t m = 0; m < 2; ++m) {
    s << "%Deg," << metric_names[m] << ",-";
    for (std::size_t v = 1; v < 5; ++v)
      s << ',' << num(percent_degradation(average(0, m), average(v, m)), "%.2f") << '%';
    s << '\n';
  }
  return s.str();
}

RunConfig variant_config(const RunConfig& base, std::size_t variant, std::size_t horizon) {
  RunConfig cfg = base;
  cfg.horizon = horizon;
  cfg.ablation = Ablation{};
  switch (variant) {
    case 0: break;
    case 1: cfg.ablation.no_trl = true; break;
    case 2: cfg.ablation.no_srl = true; break;
    case 3: cfg.ablation.no_vat = true; break;
    case 4: cfg.ablation.no_adf = true; break;
    default: throw ContractError("ablation variant out of range");
  }
  return cfg;
}

AblationReport run_ablation(const RunConfig& base, const std::vector<std::size_t>& horizons,
                            const ProgressFn& progress) {
  if (horizons.empty()) throw ConfigError("ablation needs at least one horizon");
  AblationReport report;
  report.horizons = horizons;
  for (std::size_t v = 0; v < 5; ++v) {
    for (std::size_t h : horizons) {
      Experiment ex(variant_config(base, v, h));
      ex.train();
      const Metrics m = ex.evaluate(Split::kTest);
      report.cells[v].push_back({m.mse, m.dtw});
      if (progress) {
        progress(std::string(AblationReport::variant_names()[v]) + " T=" + std::to_string(h) +
                 " mse=" + num(m.mse, "%.4f") + " dtw=" + num(m.dtw, "%.4f"));
      }
    }
  }
  return report;
}

}  // namespace trimodal

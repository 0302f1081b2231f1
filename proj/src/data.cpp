#include "trimodal/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "trimodal/errors.hpp"

namespace trimodal {

namespace {

constexpr std::size_t kEttHourMonth = 30 * 24;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '"'))
    --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

std::string to_string(SplitMode mode) {
  switch (mode) {
    case SplitMode::kEttHour:
      return "ett_hour";
    case SplitMode::kEttMinute:
      return "ett_minute";
    case SplitMode::kRatio:
      return "ratio_70_10_20";
  }
  return "?";
}

SplitMode parse_split_mode(const std::string& text) {
  if (text == "ett_hour") return SplitMode::kEttHour;
  if (text == "ett_minute") return SplitMode::kEttMinute;
  if (text == "ratio_70_10_20" || text == "ratio") return SplitMode::kRatio;
  throw ConfigError("unknown split mode '" + text + "'");
}

SplitMode split_mode_for(const std::string& name) {
  if (starts_with(name, "ETTh")) return SplitMode::kEttHour;
  if (starts_with(name, "ETTm")) return SplitMode::kEttMinute;
  return SplitMode::kRatio;
}

std::string to_string(TargetPolicy policy) {
  return policy == TargetPolicy::kFull ? "full" : "lookback";
}

TargetPolicy parse_target_policy(const std::string& text) {
  if (text == "full") return TargetPolicy::kFull;
  if (text == "lookback") return TargetPolicy::kLookback;
  throw ConfigError("unknown target policy '" + text + "'");
}

const std::vector<DatasetSpec>& builtin_registry() {
  static const std::vector<DatasetSpec> registry = [] {
    const std::string ett =
        "The Electricity Transformer Temperature dataset records oil temperature and six power "
        "load features of electricity transformers.";
    auto make = [](std::string name, std::size_t c, std::string freq, std::string desc,
                   std::size_t rows, TargetPolicy policy = TargetPolicy::kLookback) {
      DatasetSpec s;
      s.csv_path = name + ".csv";
      s.split_mode = split_mode_for(name);
      s.name = std::move(name);
      s.channels = c;
      s.frequency = std::move(freq);
      s.description = std::move(desc);
      s.rows = rows;
      s.target_policy = policy;
      return s;
    };
    std::vector<DatasetSpec> r;
    r.push_back(make("ETTh1", 7, "1h", ett + " Recorded hourly.", 17420));
    r.push_back(make("ETTh2", 7, "1h", ett + " Recorded hourly.", 17420));
    r.push_back(make("ETTm1", 7, "15min", ett + " Recorded every 15 minutes.", 69680));
    r.push_back(make("ETTm2", 7, "15min", ett + " Recorded every 15 minutes.", 69680));
    r.push_back(make("Weather", 21, "10min",
                     "Weather records 21 meteorological indicators such as air temperature and "
                     "humidity every 10 minutes.",
                     52696));
    r.push_back(make("Electricity", 321, "1h",
                     "Electricity records the hourly electricity consumption of 321 clients.",
                     26304));
    r.push_back(make("Traffic", 862, "1h",
                     "Traffic records hourly road occupancy rates measured by 862 sensors on "
                     "freeways.",
                     17544));
    r.push_back(make("Exchange", 8, "1d",
                     "Exchange records daily exchange rates of eight countries.", 7588,
                     TargetPolicy::kFull));
    r.push_back(make("Synthetic", 3, "1h",
                     "Synthetic hourly signals mixing daily and weekly cycles with calm and "
                     "volatile regimes.",
                     0));
    return r;
  }();
  return registry;
}

const DatasetSpec& registry_lookup(const std::string& name) {
  for (const auto& s : builtin_registry()) {
    if (s.name == name) return s;
  }
  throw ConfigError("dataset '" + name + "' is not in the registry");
}

std::vector<DatasetSpec> load_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open registry file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("registry " + path + ": " + e.what());
  }
  if (!doc.is_array()) throw LoadError("registry " + path + " must hold a JSON array");
  std::vector<DatasetSpec> out;
  for (const auto& rec : doc) {
    try {
      DatasetSpec s;
      s.name = rec.at("name").get<std::string>();
      s.csv_path = rec.at("path").get<std::string>();
      s.split_mode = rec.contains("split_mode")
                         ? parse_split_mode(rec["split_mode"].get<std::string>())
                         : split_mode_for(s.name);
      s.channels = rec.value("channels", std::size_t{0});
      s.frequency = rec.value("frequency", std::string{});
      s.description = rec.at("description").get<std::string>();
      if (rec.contains("target_policy"))
        s.target_policy = parse_target_policy(rec["target_policy"].get<std::string>());
      s.rows = rec.value("rows", std::size_t{0});
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("registry " + path + ": " + e.what());
    }
  }
  return out;
}

RawSeries parse_csv(std::istream& in, const std::string& source, std::size_t expected_channels) {
  RawSeries out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw LoadError(source + ": file is empty");
  auto header = split_fields(line);
  if (header.size() < 2) throw LoadError(source + ": header needs a timestamp and a value column");
  out.columns.assign(header.begin() + 1, header.end());
  out.channels = out.columns.size();
  if (expected_channels != 0 && expected_channels != out.channels) {
    throw LoadError(source + ": expected " + std::to_string(expected_channels) +
                    " channels, header has " + std::to_string(out.channels));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != out.channels + 1) {
      throw LoadError(source + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(out.channels + 1));
    }
    out.timestamps.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const std::string& f = fields[c];
      double v = 0.0;
      const char* first = f.data();
      const char* last = f.data() + f.size();
      if (!f.empty() && *first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (f.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw LoadError(source + ": row " + std::to_string(line_no) + ", column '" +
                        out.columns[c - 1] + "': cannot parse '" + f + "' as a finite number");
      }
      out.values.push_back(v);
    }
  }
  out.rows = out.timestamps.size();
  if (out.rows == 0) throw LoadError(source + ": no data rows");
  return out;
}

RawSeries load_csv(const DatasetSpec& spec) {
  std::ifstream in(spec.csv_path);
  if (!in) throw LoadError("cannot open " + spec.csv_path + " for dataset " + spec.name);
  return parse_csv(in, spec.csv_path, spec.channels);
}

void write_csv(const RawSeries& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "date";
  for (const auto& c : series.columns) out << ',' << c;
  out << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < series.rows; ++r) {
    out << series.timestamps[r];
    for (std::size_t c = 0; c < series.channels; ++c) out << ',' << series.at(r, c);
    out << '\n';
  }
}

SplitBorders split_borders(SplitMode mode, std::size_t rows, std::size_t lookback) {
  std::size_t train = 0, val = 0, test = 0;
  switch (mode) {
    case SplitMode::kEttHour:
    case SplitMode::kEttMinute: {
      const std::size_t month = kEttHourMonth * (mode == SplitMode::kEttMinute ? 4 : 1);
      train = 12 * month;
      val = 4 * month;
      test = 4 * month;
      if (rows < train + val + test) {
        throw SplitError("ETT split needs " + std::to_string(train + val + test) +
                         " rows, series has " + std::to_string(rows));
      }
      break;
    }
    case SplitMode::kRatio:
      train = static_cast<std::size_t>(static_cast<double>(rows) * 0.7);
      test = static_cast<std::size_t>(static_cast<double>(rows) * 0.2);
      val = rows - train - test;
      break;
  }
  if (train < lookback) {
    throw SplitError("train split of " + std::to_string(train) + " rows is shorter than lookback " +
                     std::to_string(lookback));
  }
  SplitBorders b;
  b.begin = {0, train - lookback, train + val - lookback};
  b.end = {train, train + val, train + val + test};
  return b;
}

namespace {

// Last admissible origin (exclusive bound) for split s, or 0 when none.
std::pair<std::size_t, std::size_t> origin_range(const SplitBorders& b, std::size_t s,
                                                 TargetPolicy policy, std::size_t rows,
                                                 std::size_t lookback, std::size_t horizon) {
  const std::size_t limit = policy == TargetPolicy::kFull ? b.end[s] : rows;
  const std::size_t span = lookback + horizon;
  std::size_t hi = 0;  // exclusive
  if (b.end[s] >= lookback && limit >= span) {
    hi = std::min(b.end[s] - lookback, limit - span) + 1;
  }
  return {b.begin[s], std::max(hi, b.begin[s])};
}

}  // namespace

std::array<std::size_t, 3> window_counts(SplitMode mode, TargetPolicy policy, std::size_t rows,
                                         std::size_t lookback, std::size_t horizon) {
  const SplitBorders b = split_borders(mode, rows, lookback);
  std::array<std::size_t, 3> out{};
  for (std::size_t s = 0; s < 3; ++s) {
    auto [lo, hi] = origin_range(b, s, policy, rows, lookback, horizon);
    out[s] = hi - lo;
  }
  return out;
}

SeriesWindow WindowSet::window(std::size_t i) const {
  SeriesWindow w;
  w.lookback = lookback;
  w.horizon = horizon;
  w.channels = channels;
  w.origin = origins.at(i);
  w.x.assign(x_ptr(i), x_ptr(i) + lookback * channels);
  w.y.assign(y_ptr(i), y_ptr(i) + horizon * channels);
  w.norm_mean = mean;
  w.norm_std = std;
  return w;
}

std::pair<Tensor, Tensor> WindowSet::batch(const std::vector<std::size_t>& idx) const {
  const std::size_t b = idx.size();
  std::vector<double> x(b * lookback * channels), y(b * horizon * channels);
  for (std::size_t k = 0; k < b; ++k) {
    std::copy_n(x_ptr(idx[k]), lookback * channels, x.begin() + k * lookback * channels);
    std::copy_n(y_ptr(idx[k]), horizon * channels, y.begin() + k * horizon * channels);
  }
  return {Tensor::from({b, lookback, channels}, std::move(x)),
          Tensor::from({b, horizon, channels}, std::move(y))};
}

WindowSet WindowSet::subset(const std::vector<std::size_t>& idx) const {
  WindowSet out = *this;
  out.origins.clear();
  for (std::size_t i : idx) out.origins.push_back(origins.at(i));
  return out;
}

SplitResult split_and_normalize(const RawSeries& raw, SplitMode mode, const SplitOptions& opt) {
  if (opt.lookback == 0 || opt.horizon == 0) throw ConfigError("lookback and horizon must be >= 1");
  SplitResult out;
  out.borders = split_borders(mode, raw.rows, opt.lookback);
  const std::size_t c = raw.channels;
  const std::size_t n_train = out.borders.end[0];

  out.mean.assign(c, 0.0);
  out.std.assign(c, 0.0);
  out.std_guarded.assign(c, false);
  for (std::size_t r = 0; r < n_train; ++r)
    for (std::size_t j = 0; j < c; ++j) out.mean[j] += raw.at(r, j);
  for (auto& m : out.mean) m /= static_cast<double>(n_train);
  for (std::size_t r = 0; r < n_train; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = raw.at(r, j) - out.mean[j];
      out.std[j] += d * d;
    }
  for (std::size_t j = 0; j < c; ++j) {
    out.std[j] = std::sqrt(out.std[j] / static_cast<double>(n_train));
    if (!(out.std[j] > 0.0)) {
      out.std[j] = 1.0;
      out.std_guarded[j] = true;
    }
  }

  auto normalized = std::make_shared<std::vector<double>>(raw.values.size());
  for (std::size_t r = 0; r < raw.rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      (*normalized)[r * c + j] = (raw.at(r, j) - out.mean[j]) / out.std[j];

  std::array<WindowSet*, 3> sets{&out.train, &out.val, &out.test};
  static const char* names[] = {"train", "val", "test"};
  for (std::size_t s = 0; s < 3; ++s) {
    WindowSet& w = *sets[s];
    w.series = normalized;
    w.rows = raw.rows;
    w.channels = c;
    w.lookback = opt.lookback;
    w.horizon = opt.horizon;
    w.mean = out.mean;
    w.std = out.std;
    auto [lo, hi] = origin_range(out.borders, s, opt.policy, raw.rows, opt.lookback, opt.horizon);
    if (hi <= lo) {
      throw SplitError(std::string("series of ") + std::to_string(raw.rows) +
                       " rows yields no " + names[s] + " windows for L=" +
                       std::to_string(opt.lookback) + ", T=" + std::to_string(opt.horizon));
    }
    w.origins.resize(hi - lo);
    std::iota(w.origins.begin(), w.origins.end(), lo);
  }
  return out;
}

std::vector<double> denormalize(const SeriesWindow& w, const std::vector<double>& block) {
  std::vector<double> out(block.size());
  for (std::size_t i = 0; i < block.size(); ++i) {
    const std::size_t j = i % w.channels;
    out[i] = block[i] * w.norm_std[j] + w.norm_mean[j];
  }
  return out;
}

WindowSet few_shot_subset(const WindowSet& windows, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("few-shot fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const auto n = static_cast<double>(windows.size());
  // Guard against 0.1 * 100 = 10.000000000000002 rounding up to 11.
  auto keep = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, windows.size());
  WindowSet out = windows;
  out.origins.resize(keep);
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   bool shuffle, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

RawSeries synthetic_series(const SyntheticOptions& opt) {
  if (opt.rows == 0 || opt.channels == 0) throw ConfigError("synthetic series needs rows and channels");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RawSeries s;
  s.rows = opt.rows;
  s.channels = opt.channels;
  for (std::size_t c = 0; c < opt.channels; ++c) s.columns.push_back("ch" + std::to_string(c));

  std::vector<double> phase(opt.channels), level(opt.channels), weekly(opt.channels);
  for (std::size_t c = 0; c < opt.channels; ++c) {
    phase[c] = unit(rng) * 2.0 * M_PI;
    level[c] = 10.0 * static_cast<double>(c) + 5.0 * unit(rng);
    weekly[c] = 0.3 + 0.4 * unit(rng);
  }

  // Two-state regime chain with sticky transitions; bursts only while volatile.
  bool volatile_regime = false;
  double burst = 0.0;
  using namespace std::chrono;
  const sys_days start = year{2020} / 1 / 1;
  s.values.resize(opt.rows * opt.channels);
  for (std::size_t t = 0; t < opt.rows; ++t) {
    if (unit(rng) < (volatile_regime ? 0.02 : 0.006)) volatile_regime = !volatile_regime;
    burst *= 0.8;
    if (volatile_regime && unit(rng) < 0.05) burst += (unit(rng) < 0.5 ? -1.0 : 1.0) * 2.5;
    const double amp = volatile_regime ? 1.8 : 1.0;
    const double td = static_cast<double>(t);
    for (std::size_t c = 0; c < opt.channels; ++c) {
      const double daily = std::sin(2.0 * M_PI * td / 24.0 + phase[c]);
      const double week = weekly[c] * std::sin(2.0 * M_PI * td / 168.0 + 0.5 * phase[c]);
      const double harmonic = 0.3 * std::sin(2.0 * M_PI * td / 12.0 + 2.0 * phase[c]);
      const double v = level[c] + amp * (daily + harmonic) + week + burst * (1.0 + 0.2 * c) +
                       0.1 * amp * noise(rng);
      s.values[t * opt.channels + c] = v;
    }
    const auto stamp = start + days{t / 24};
    const year_month_day ymd{floor<days>(stamp)};
    std::ostringstream ts;
    ts << static_cast<int>(ymd.year()) << '-' << std::setw(2) << std::setfill('0')
       << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2)
       << static_cast<unsigned>(ymd.day()) << ' ' << std::setw(2) << (t % 24) << ":00:00";
    s.timestamps.push_back(ts.str());
  }
  return s;
}

}  // namespace trimodal

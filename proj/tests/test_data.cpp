#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "trimodal/data.hpp"
#include "trimodal/errors.hpp"

using namespace trimodal;

namespace {

RawSeries ramp_series(std::size_t rows, std::size_t channels) {
  RawSeries s;
  s.rows = rows;
  s.channels = channels;
  for (std::size_t c = 0; c < channels; ++c) s.columns.push_back("c" + std::to_string(c));
  for (std::size_t r = 0; r < rows; ++r) {
    s.timestamps.push_back(std::to_string(r));
    for (std::size_t c = 0; c < channels; ++c)
      s.values.push_back(static_cast<double>(r) * (c + 1) + std::sin(0.1 * r + c));
  }
  return s;
}

}  // namespace

TEST_CASE("csv parsing") {
  std::istringstream ok("date,a,b\n2020-01-01,1.5,2\n2020-01-02,-3,4e1\n2020-01-03,0,0\n");
  RawSeries s = parse_csv(ok, "mem");
  CHECK(s.rows == 3);
  CHECK(s.channels == 2);
  CHECK(s.at(1, 1) == 40.0);
  CHECK(s.timestamps[2] == "2020-01-03");

  std::istringstream bad("date,a\nx,1\ny,abc\n");
  try {
    (void)parse_csv(bad, "mem");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    CHECK(std::string(e.what()).find("abc") != std::string::npos);
  }
  std::istringstream nan_cell("date,a\nx,nan\n");
  CHECK_THROWS_AS(parse_csv(nan_cell, "mem"), LoadError);
  std::istringstream wrong_width("date,a,b\nx,1\n");
  CHECK_THROWS_AS(parse_csv(wrong_width, "mem"), LoadError);
  std::istringstream mismatch("date,a,b\nx,1,2\n");
  CHECK_THROWS_AS(parse_csv(mismatch, "mem", 7), LoadError);

  DatasetSpec missing;
  missing.name = "nope";
  missing.csv_path = "/definitely/not/here.csv";
  CHECK_THROWS_AS(load_csv(missing), LoadError);
}

TEST_CASE("csv round trip through a file") {
  RawSeries s = synthetic_series({.rows = 50, .channels = 3, .seed = 1});
  const auto path = std::filesystem::temp_directory_path() / "trimodal_roundtrip.csv";
  write_csv(s, path.string());
  DatasetSpec spec;
  spec.name = "rt";
  spec.csv_path = path.string();
  spec.channels = 3;
  RawSeries back = load_csv(spec);
  CHECK(back.rows == 50);
  CHECK(back.values == s.values);
  std::filesystem::remove(path);
}

TEST_CASE("registry") {
  CHECK(registry_lookup("ETTh1").channels == 7);
  CHECK(registry_lookup("ETTh1").split_mode == SplitMode::kEttHour);
  CHECK(registry_lookup("ETTm2").split_mode == SplitMode::kEttMinute);
  CHECK(registry_lookup("Traffic").channels == 862);
  CHECK(registry_lookup("Weather").split_mode == SplitMode::kRatio);
  CHECK_THROWS_AS(registry_lookup("ETTx"), ConfigError);

  const auto path = std::filesystem::temp_directory_path() / "trimodal_registry.json";
  {
    std::ofstream out(path);
    out << R"([{"name":"mine","path":"m.csv","split_mode":"ratio_70_10_20","channels":2,)"
        << R"("description":"toy","target_policy":"full"}])";
  }
  auto reg = load_registry(path.string());
  REQUIRE(reg.size() == 1);
  CHECK(reg[0].channels == 2);
  CHECK(reg[0].target_policy == TargetPolicy::kFull);
  std::filesystem::remove(path);
}

TEST_CASE("published ETT window counts at L=T=96") {
  // Row totals of the public ETT files.
  CHECK(window_counts(SplitMode::kEttHour, TargetPolicy::kLookback, 17420, 96, 96) ==
        std::array<std::size_t, 3>{8545, 2881, 2881});
  CHECK(window_counts(SplitMode::kEttMinute, TargetPolicy::kLookback, 69680, 96, 96) ==
        std::array<std::size_t, 3>{34465, 11521, 11521});
  CHECK(window_counts(SplitMode::kRatio, TargetPolicy::kFull, 7588, 96, 96) ==
        std::array<std::size_t, 3>{5120, 665, 1422});
}

TEST_CASE("ratio split arithmetic against an independent formula") {
  for (std::size_t rows : {1000u, 1500u, 2000u, 2401u}) {
    const std::size_t L = 96, T = 96;
    const std::size_t n_train = rows * 7 / 10, n_test = rows * 2 / 10;
    const std::size_t n_val = rows - n_train - n_test;
    auto lb = window_counts(SplitMode::kRatio, TargetPolicy::kLookback, rows, L, T);
    CHECK(lb[0] == n_train - L + 1);
    CHECK(lb[1] == n_val + 1);
    // test origins run from rows - n_test - L up to rows - L - T
    CHECK(lb[2] == n_test - T + 1);
    auto full = window_counts(SplitMode::kRatio, TargetPolicy::kFull, rows, L, T);
    CHECK(full[0] == n_train - L - T + 1);
    CHECK(full[1] == n_val - T + 1);
    CHECK(full[2] == n_test - T + 1);
  }
  CHECK(window_counts(SplitMode::kRatio, TargetPolicy::kLookback, 2000, 96, 96) ==
        std::array<std::size_t, 3>{1305, 201, 305});
}

TEST_CASE("split and normalize") {
  RawSeries raw = ramp_series(1000, 2);
  SplitResult r = split_and_normalize(raw, SplitMode::kRatio, {.lookback = 24, .horizon = 12});
  const auto counts = window_counts(SplitMode::kRatio, TargetPolicy::kLookback, 1000, 24, 12);
  CHECK(r.train.size() == counts[0]);
  CHECK(r.val.size() == counts[1]);
  CHECK(r.test.size() == counts[2]);

  // train statistics by a two-pass oracle
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0;
    for (std::size_t t = 0; t < 700; ++t) m += raw.at(t, c);
    m /= 700;
    double v = 0;
    for (std::size_t t = 0; t < 700; ++t) v += (raw.at(t, c) - m) * (raw.at(t, c) - m);
    CHECK(r.mean[c] == doctest::Approx(m).epsilon(1e-12));
    CHECK(r.std[c] == doctest::Approx(std::sqrt(v / 700)).epsilon(1e-12));
  }

  // windows are contiguous and de-normalize to raw values
  for (const WindowSet* ws : {&r.train, &r.val, &r.test}) {
    for (std::size_t i = 0; i < ws->size(); i += 37) {
      SeriesWindow w = ws->window(i);
      auto x = denormalize(w, w.x);
      auto y = denormalize(w, w.y);
      for (std::size_t t = 0; t < w.lookback; ++t)
        for (std::size_t c = 0; c < 2; ++c)
          CHECK(std::fabs(x[t * 2 + c] - raw.at(w.origin + t, c)) <= 1e-9);
      for (std::size_t t = 0; t < w.horizon; ++t)
        for (std::size_t c = 0; c < 2; ++c)
          CHECK(std::fabs(y[t * 2 + c] - raw.at(w.origin + w.lookback + t, c)) <= 1e-9);
    }
  }
}

TEST_CASE("full-target policy never leaks across split borders") {
  RawSeries raw = ramp_series(1500, 1);
  for (std::size_t L : {16u, 96u}) {
    for (std::size_t T : {8u, 96u}) {
      SplitResult r = split_and_normalize(raw, SplitMode::kRatio,
                                          {.lookback = L, .horizon = T, .policy = TargetPolicy::kFull});
      CHECK(r.train.origins.back() + L + T <= r.borders.end[0]);
      CHECK(r.val.origins.back() + L + T <= r.borders.end[1]);
      CHECK(r.test.origins.back() + L + T <= raw.rows);
      // lookbacks of val/test start no earlier than L rows before their split
      CHECK(r.val.origins.front() + L == r.borders.end[0]);
      CHECK(r.test.origins.front() + L == r.borders.end[1]);
    }
  }
}

TEST_CASE("constant channel std is guarded") {
  RawSeries raw = ramp_series(400, 2);
  for (std::size_t r = 0; r < raw.rows; ++r) raw.values[r * 2 + 1] = 4.0;
  SplitResult r = split_and_normalize(raw, SplitMode::kRatio, {.lookback = 24, .horizon = 24});
  CHECK(r.std[1] == 1.0);
  CHECK(r.std_guarded[1]);
  CHECK_FALSE(r.std_guarded[0]);
  CHECK(r.train.window(0).x[1] == 0.0);
}

TEST_CASE("too-short series") {
  RawSeries raw = ramp_series(100, 1);
  CHECK_THROWS_AS(split_and_normalize(raw, SplitMode::kRatio, {}), SplitError);
  CHECK_THROWS_AS(split_and_normalize(raw, SplitMode::kEttHour, {}), SplitError);
}

TEST_CASE("few-shot prefix") {
  RawSeries raw = ramp_series(1000, 1);
  SplitResult r = split_and_normalize(raw, SplitMode::kRatio, {.lookback = 24, .horizon = 12});
  WindowSet base = r.train.subset([] {
    std::vector<std::size_t> idx(100);
    for (std::size_t i = 0; i < 100; ++i) idx[i] = i;
    return idx;
  }());
  WindowSet ten = few_shot_subset(base, 0.10);
  REQUIRE(ten.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(ten.origins[i] == base.origins[i]);
  CHECK(few_shot_subset(base, 1.0).origins == base.origins);
  CHECK(few_shot_subset(base.subset({0, 1, 2, 3, 4, 5, 6}), 0.10).size() == 1);
  CHECK(few_shot_subset(base, 0.333).size() == 34);
  CHECK_THROWS_AS(few_shot_subset(base, 0.0), ConfigError);
  CHECK_THROWS_AS(few_shot_subset(base, 1.5), ConfigError);
}

TEST_CASE("batches") {
  auto b = make_batches(70, 32, false, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 32);
  CHECK(b[1].size() == 32);
  CHECK(b[2].size() == 6);
  for (std::size_t i = 0; i < 32; ++i) CHECK(b[0][i] == i);
  CHECK(make_batches(70, 32, true, 5) == make_batches(70, 32, true, 5));
  CHECK(make_batches(70, 32, true, 5) != make_batches(70, 32, true, 6));
  std::set<std::size_t> seen;
  for (const auto& batch : make_batches(70, 32, true, 5)) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 70);
  CHECK_THROWS_AS(make_batches(5, 0, false, 0), ConfigError);
}

TEST_CASE("batch tensors") {
  RawSeries raw = ramp_series(500, 3);
  SplitResult r = split_and_normalize(raw, SplitMode::kRatio, {.lookback = 10, .horizon = 5});
  auto [x, y] = r.train.batch({0, 4});
  CHECK(x.shape() == Shape{2, 10, 3});
  CHECK(y.shape() == Shape{2, 5, 3});
  CHECK(x.at({1, 0, 2}) == r.train.window(4).x[2]);
  CHECK(y.at({1, 4, 1}) == r.train.window(4).y[4 * 3 + 1]);
}

TEST_CASE("synthetic generator is deterministic and usable") {
  RawSeries a = synthetic_series({.rows = 2000, .channels = 3, .seed = 11});
  RawSeries b = synthetic_series({.rows = 2000, .channels = 3, .seed = 11});
  CHECK(a.values == b.values);
  CHECK(a.timestamps.front() == "2020-01-01 00:00:00");
  CHECK(a.timestamps[25] == "2020-01-02 01:00:00");
  SplitResult r = split_and_normalize(a, SplitMode::kRatio, {});
  CHECK(r.train.size() == 1305);
  CHECK(r.val.size() == 201);
  CHECK(r.test.size() == 305);
}

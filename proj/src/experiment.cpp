#include "trimodal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "trimodal/errors.hpp"
#include "trimodal/prompt.hpp"

namespace trimodal {

namespace {

using nlohmann::json;

constexpr const char* kCheckpointFormat = "trimodal-checkpoint-1";

// Template words every prompt can emit, so they never fall into hash buckets.
constexpr const char* kPromptWords =
    "overall trend is upward downward recent momentum is upward downward volatility descriptor "
    "alpha high low moderate periodicity is approximately steps min max median value";

struct Snapshot {
  std::vector<std::vector<double>> values;
  MemoryBank bank;
};

Snapshot snapshot(const StatModel& model) {
  Snapshot s;
  for (const auto& p : model.params().params()) s.values.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  s.bank = model.bank();
  return s;
}

void restore(StatModel& model, const Snapshot& s) {
  const auto& params = model.params().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = Tensor(params[i].tensor).mutable_data();
    std::copy(s.values[i].begin(), s.values[i].end(), dst.begin());
  }
  model.bank() = s.bank;
}

bool grads_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params)
    for (double g : p.grad())
      if (!std::isfinite(g)) return false;
  return true;
}

}  // namespace

std::vector<WindowFeatures> build_features(const WindowSet& windows, const DatasetSpec& spec,
                                           const MultiScaleSymbolizer* symbolizer, bool with_text,
                                           std::size_t token_cap) {
  std::vector<WindowFeatures> out(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const double* x = windows.x_ptr(i);
    WindowFeatures& f = out[i];
    f.alpha = volatility_descriptor(x, windows.lookback, windows.channels);
    if (with_text) {
      f.prompt = tokenize_text(render_prompt(x, windows.lookback, windows.channels, spec,
                                             windows.horizon).text);
      if (f.prompt.size() > token_cap) f.prompt.resize(token_cap);
    }
    if (symbolizer) {
      for (std::size_t s = 0; s < 3; ++s)
        f.symbols[s] = symbolizer->tokens(x, windows.lookback, windows.channels, s);
    }
  }
  return out;
}

std::pair<ModelBatch, Tensor> make_model_batch(const WindowSet& windows,
                                               const std::vector<WindowFeatures>& features,
                                               const std::vector<std::size_t>& idx) {
  auto [x, y] = windows.batch(idx);
  ModelBatch b;
  b.x = x;
  for (std::size_t i : idx) {
    const WindowFeatures& f = features.at(i);
    b.alpha.push_back(f.alpha);
    b.prompts.push_back(f.prompt);
    for (std::size_t s = 0; s < 3; ++s) b.symbols[s].push_back(f.symbols[s]);
  }
  return {std::move(b), y};
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData out;
  if (!cfg.registry.empty()) {
    bool found = false;
    for (const auto& s : load_registry(cfg.registry)) {
      if (s.name == cfg.dataset) out.spec = s, found = true;
    }
    if (!found) throw ConfigError("dataset '" + cfg.dataset + "' not in registry " + cfg.registry);
  } else {
    out.spec = registry_lookup(cfg.dataset);
  }
  RawSeries raw;
  if (out.spec.name == "Synthetic") {
    raw = synthetic_series({cfg.synthetic_rows, cfg.synthetic_channels, cfg.synthetic_seed});
    out.spec.channels = cfg.synthetic_channels;
  } else {
    std::filesystem::path path(out.spec.csv_path);
    if (path.is_relative()) path = std::filesystem::path(resolve_data_dir(cfg.data_dir)) / path;
    out.spec.csv_path = path.string();
    raw = load_csv(out.spec);
  }
  SplitOptions opt;
  opt.lookback = cfg.lookback;
  opt.horizon = cfg.horizon;
  opt.policy = cfg.strict_targets ? TargetPolicy::kFull : out.spec.target_policy;
  out.split = split_and_normalize(raw, out.spec.split_mode, opt);
  return out;
}

Experiment::Experiment(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  data_ = prepare_data(cfg_);
  std::shared_ptr<const EmbeddingProvider> provider;
  if (!cfg_.embed_file.empty()) {
    provider = std::make_shared<const EmbeddingProvider>(
        EmbeddingProvider::load(cfg_.embed_file, cfg_.embed_seed));
  }
  build(std::move(provider));
}

Experiment::Experiment(RunConfig cfg, std::shared_ptr<const EmbeddingProvider> provider, Tag)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  data_ = prepare_data(cfg_);
  build(std::move(provider));
}

void Experiment::build(std::shared_ptr<const EmbeddingProvider> provider) {
  train_windows_ = cfg_.few_shot < 1.0 ? few_shot_subset(data_.split.train, cfg_.few_shot)
                                       : data_.split.train;
  const bool text = !cfg_.ablation.no_trl, sym = !cfg_.ablation.no_srl;
  if (sym) symbolizer_ = MultiScaleSymbolizer::fit(train_windows_, cfg_.tols, cfg_.symbolizer_stride);
  if (!provider) {
    std::size_t symbols = 0;
    if (sym)
      for (std::size_t s = 0; s < 3; ++s) symbols = std::max(symbols, symbolizer_.codebook(s).size());
    const WindowSet& w = train_windows_;
    std::vector<std::string> texts{data_.spec.description, kPromptWords,
                                   render_prompt(w.x_ptr(0), w.lookback, w.channels, data_.spec,
                                                 w.horizon).text};
    provider = std::make_shared<const EmbeddingProvider>(
        EmbeddingProvider::random(base_vocabulary(texts, symbols), cfg_.emb_dim, cfg_.embed_seed));
  }
  provider_ = std::move(provider);

  ModelConfig mc;
  mc.temporal.lookback = cfg_.lookback;
  mc.temporal.horizon = cfg_.horizon;
  mc.temporal.channels = data_.split.train.channels;
  mc.temporal.patch_len = cfg_.patch_len;
  mc.temporal.stride = cfg_.stride;
  mc.temporal.d_model = cfg_.d_model;
  mc.temporal.heads = cfg_.heads;
  mc.temporal.top_k = cfg_.top_k;
  mc.temporal.bank_size = cfg_.bank_size;
  mc.eta = cfg_.eta;
  mc.use_text = text;
  mc.use_symbolic = sym;
  mc.use_vat = !cfg_.ablation.no_vat;
  model_ = std::make_unique<StatModel>(mc, provider_, cfg_.seed);
  if (!cfg_.ablation.no_adf) adf_.emplace(model_->params(), cfg_.svd_rank, cfg_.adf_patch);

  const MultiScaleSymbolizer* s = sym ? &symbolizer_ : nullptr;
  features_[0] = build_features(train_windows_, data_.spec, s, text, cfg_.token_cap);
  features_[1] = build_features(data_.split.val, data_.spec, s, text, cfg_.token_cap);
  features_[2] = build_features(data_.split.test, data_.spec, s, text, cfg_.token_cap);
}

const WindowSet& Experiment::windows(Split split) const {
  switch (split) {
    case Split::kTrain: return train_windows_;
    case Split::kVal: return data_.split.val;
    case Split::kTest: return data_.split.test;
  }
  throw ContractError("unknown split");
}

const std::vector<WindowFeatures>& Experiment::features(Split split) const {
  return features_[static_cast<std::size_t>(split)];
}

Tensor Experiment::objective(const Tensor& pred, const Tensor& target) const {
  if (adf_) return adf_loss(pred, target, *adf_).total;
  return mse_loss(pred, target);
}

std::vector<EpochRecord> Experiment::train() {
  std::vector<EpochRecord> log;
  std::vector<Tensor> params = model_->params().trainable_tensors();
  Adam opt(params, cfg_.lr);
  Snapshot best = snapshot(*model_);
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;
  best_epoch_ = 0;
  for (std::size_t epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg_.lr * std::ldexp(1.0, -static_cast<int>(epoch));
    opt.set_lr(rec.lr);
    model_->reset_bank();
    auto batches = make_batches(train_windows_.size(), cfg_.batch_size, true,
                                cfg_.seed * 1000003ull + epoch);
    if (cfg_.max_batches > 0 && batches.size() > cfg_.max_batches) batches.resize(cfg_.max_batches);
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : batches) {
      auto [batch, target] = make_model_batch(train_windows_, features_[0], idx);
      opt.zero_grad();
      ModelOutput out = model_->forward(batch, true);
      ++steps_;
      Tensor loss = objective(out.y, target);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      backward(loss);
      if (!grads_finite(params)) {
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch));
      }
      opt.step();
      total += value * static_cast<double>(idx.size());
      seen += idx.size();
    }
    rec.train_loss = seen ? total / static_cast<double>(seen) : 0.0;
    LossSummary val = loss_on(Split::kVal);
    rec.val_loss = val.loss;
    rec.val_mse = val.mse;
    if (!std::isfinite(rec.val_loss)) {
      restore(*model_, best);
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.improved = rec.val_loss < best_loss;
    log.push_back(rec);
    if (rec.improved) {
      best_loss = rec.val_loss;
      best = snapshot(*model_);
      best_epoch_ = epoch;
      wait = 0;
    } else if (++wait >= cfg_.patience) {
      break;
    }
  }
  restore(*model_, best);
  return log;
}

LossSummary Experiment::loss_on(Split split) {
  NoGradGuard no_grad;
  const WindowSet& w = windows(split);
  LossSummary s;
  for (const auto& idx : make_batches(w.size(), cfg_.batch_size, false, 0)) {
    auto [batch, target] = make_model_batch(w, features(split), idx);
    ModelOutput out = model_->forward(batch, false);
    const double n = static_cast<double>(idx.size());
    s.loss += objective(out.y, target).item() * n;
    s.mse += mse_loss(out.y, target).item() * n;
  }
  s.loss /= static_cast<double>(w.size());
  s.mse /= static_cast<double>(w.size());
  return s;
}

Metrics Experiment::evaluate(Split split) {
  NoGradGuard no_grad;
  const WindowSet& w = windows(split);
  MetricAccumulator acc;
  const std::size_t t = w.horizon, c = w.channels;
  for (const auto& idx : make_batches(w.size(), cfg_.batch_size, false, 0)) {
    auto [batch, target] = make_model_batch(w, features(split), idx);
    ModelOutput out = model_->forward(batch, false);
    const auto p = out.y.data();
    const auto y = target.data();
    for (std::size_t i = 0; i < idx.size(); ++i) acc.add(p.data() + i * t * c, y.data() + i * t * c, t, c);
  }
  return acc.result();
}

Metrics Experiment::persistence(Split split) const {
  const WindowSet& w = windows(split);
  MetricAccumulator acc;
  const std::size_t t = w.horizon, c = w.channels;
  std::vector<double> pred(t * c);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double* last = w.x_ptr(i) + (w.lookback - 1) * c;
    for (std::size_t s = 0; s < t; ++s) std::copy(last, last + c, pred.begin() + static_cast<std::ptrdiff_t>(s * c));
    acc.add(pred.data(), w.y_ptr(i), t, c);
  }
  return acc.result();
}

std::vector<PredictionRow> Experiment::predict(Split split, std::size_t max_windows) {
  NoGradGuard no_grad;
  const WindowSet& w = windows(split);
  const std::size_t n = max_windows ? std::min(max_windows, w.size()) : w.size();
  const std::size_t t = w.horizon, c = w.channels;
  const auto experts = model_->expert_names();
  const std::size_t e = experts.size();
  std::vector<PredictionRow> rows;
  rows.reserve(n * t * c);
  for (const auto& idx : make_batches(n, cfg_.batch_size, false, 0)) {
    auto [batch, target] = make_model_batch(w, features(split), idx);
    ModelOutput out = model_->forward(batch, false);
    const auto p = out.y.data(), y = target.data(), wt = out.weights.data();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t k = (i * t + s) * c + ch;
          PredictionRow r{w.origins[idx[i]], s, ch, y[k], p[k], 0.0, 0.0, 0.0};
          for (std::size_t x = 0; x < e; ++x) {
            const double v = wt[k * e + x];
            if (experts[x] == "temp") r.w_temp = v;
            else if (experts[x] == "txt") r.w_txt = v;
            else r.w_sym = v;
          }
          rows.push_back(r);
        }
  }
  return rows;
}

void Experiment::save_checkpoint(const std::string& path) const {
  json j;
  j["format"] = kCheckpointFormat;
  j["config"] = cfg_.to_text();
  j["dataset"] = data_.spec.name;
  j["channels"] = data_.split.train.channels;
  j["best_epoch"] = best_epoch_;
  j["provider"] = {{"vocab", provider_->vocab()},
                   {"dim", provider_->dim()},
                   {"buckets", provider_->oov_buckets()},
                   {"checksum", provider_->checksum()}};
  json params = json::array();
  for (const auto& p : model_->params().params()) {
    params.push_back({{"name", p.name},
                      {"shape", p.tensor.shape()},
                      {"trainable", p.trainable},
                      {"values", p.tensor.values()}});
  }
  j["params"] = std::move(params);
  json bank = json::array();
  for (std::size_t i = 0; i < model_->bank().fill(); ++i) bank.push_back(model_->bank().row(i));
  j["bank"] = std::move(bank);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << j.dump();
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

std::unique_ptr<Experiment> Experiment::from_checkpoint(const std::string& path,
                                                        const std::string& dataset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) {
    throw LoadError("checkpoint '" + path + "' has an unknown format");
  }
  RunConfig cfg = RunConfig::parse(j.at("config").get<std::string>());
  const std::size_t channels = j.at("channels").get<std::size_t>();
  if (!dataset.empty()) cfg.dataset = dataset;

  std::shared_ptr<const EmbeddingProvider> provider;
  const auto& pj = j.at("provider");
  if (!cfg.embed_file.empty()) {
    provider = std::make_shared<const EmbeddingProvider>(
        EmbeddingProvider::load(cfg.embed_file, cfg.embed_seed, pj.at("buckets").get<std::size_t>()));
  } else {
    provider = std::make_shared<const EmbeddingProvider>(EmbeddingProvider::random(
        pj.at("vocab").get<std::vector<std::string>>(), pj.at("dim").get<std::size_t>(),
        cfg.embed_seed, pj.at("buckets").get<std::size_t>()));
  }
  if (provider->checksum() != pj.at("checksum").get<std::uint64_t>()) {
    throw LoadError("embedding provider rebuilt from '" + path + "' does not match its checksum");
  }

  std::unique_ptr<Experiment> ex(new Experiment(cfg, provider, Tag{}));
  if (ex->data_.split.train.channels != channels) {
    throw ConfigError("checkpoint expects " + std::to_string(channels) + " channels, dataset '" +
                      cfg.dataset + "' has " + std::to_string(ex->data_.split.train.channels));
  }
  ParamStore& store = ex->model_->params();
  for (const auto& p : j.at("params")) {
    Param* dst = store.find(p.at("name").get<std::string>());
    if (!dst) throw LoadError("checkpoint parameter '" + p.at("name").get<std::string>() + "' unknown");
    if (p.at("shape").get<Shape>() != dst->tensor.shape()) {
      throw LoadError("checkpoint parameter '" + dst->name + "' has the wrong shape");
    }
    const auto values = p.at("values").get<std::vector<double>>();
    auto d = dst->tensor.mutable_data();
    std::copy(values.begin(), values.end(), d.begin());
  }
  if (j.at("params").size() != store.params().size()) {
    throw LoadError("checkpoint '" + path + "' does not cover every model parameter");
  }
  ex->model_->reset_bank();
  for (const auto& row : j.at("bank")) ex->model_->bank().push(row.get<std::vector<double>>());
  ex->best_epoch_ = j.value("best_epoch", std::size_t{0});
  return ex;
}

}  // namespace trimodal

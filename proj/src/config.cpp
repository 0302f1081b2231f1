#include "trimodal/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "trimodal/errors.hpp"

namespace trimodal {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                              \
  Field {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                       \
      c.member = static_cast<decltype(c.member)>(parse_uint(k, v));                            \
    },                                                                                         \
        [](const RunConfig& c) { return std::to_string(c.member); }                            \
  }
#define DOUBLE_FIELD(name, member)                                                            \
  Field {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                       \
      c.member = parse_double(k, v);                                                           \
    },                                                                                         \
        [](const RunConfig& c) { return fmt_double(c.member); }                                \
  }
#define STRING_FIELD(name, member)                                                              \
  Field {                                                                                        \
    name, [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },          \
        [](const RunConfig& c) { return c.member; }                                              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      STRING_FIELD("dataset", dataset),
      STRING_FIELD("data_dir", data_dir),
      STRING_FIELD("registry", registry),
      SIZE_FIELD("lookback", lookback),
      SIZE_FIELD("horizon", horizon),
      SIZE_FIELD("batch_size", batch_size),
      SIZE_FIELD("max_epochs", max_epochs),
      SIZE_FIELD("patience", patience),
      DOUBLE_FIELD("lr", lr),
      SIZE_FIELD("seed", seed),
      Field{"ablation",
            [](RunConfig& c, const std::string&, const std::string& v) { c.ablation = Ablation::parse(v); },
            [](const RunConfig& c) { return c.ablation.to_string(); }},
      DOUBLE_FIELD("vat.eta", eta),
      DOUBLE_FIELD("tol.fine", tols.fine),
      DOUBLE_FIELD("tol.mid", tols.mid),
      DOUBLE_FIELD("tol.coarse", tols.coarse),
      SIZE_FIELD("model.patch_len", patch_len),
      SIZE_FIELD("model.stride", stride),
      SIZE_FIELD("model.d_model", d_model),
      SIZE_FIELD("model.heads", heads),
      SIZE_FIELD("model.top_k", top_k),
      SIZE_FIELD("model.bank_size", bank_size),
      SIZE_FIELD("embed.dim", emb_dim),
      SIZE_FIELD("embed.seed", embed_seed),
      STRING_FIELD("embed.file", embed_file),
      SIZE_FIELD("embed.token_cap", token_cap),
      SIZE_FIELD("adf.svd_rank", svd_rank),
      SIZE_FIELD("adf.patch_len", adf_patch),
      DOUBLE_FIELD("few_shot", few_shot),
      Field{"split.strict_targets",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.strict_targets = parse_bool(k, v);
            },
            [](const RunConfig& c) { return std::string(c.strict_targets ? "true" : "false"); }},
      SIZE_FIELD("synthetic.rows", synthetic_rows),
      SIZE_FIELD("synthetic.channels", synthetic_channels),
      SIZE_FIELD("synthetic.seed", synthetic_seed),
      SIZE_FIELD("symbolizer.stride", symbolizer_stride),
      SIZE_FIELD("max_batches", max_batches),
  };
  return f;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

Ablation Ablation::parse(const std::string& text) {
  Ablation a;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty() || item == "none") continue;
    if (item == "no_trl") a.no_trl = true;
    else if (item == "no_srl") a.no_srl = true;
    else if (item == "no_vat") a.no_vat = true;
    else if (item == "no_adf") a.no_adf = true;
    else throw ConfigError("unknown ablation '" + item + "'");
  }
  return a;
}

std::string Ablation::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(no_trl, "no_trl");
  add(no_srl, "no_srl");
  add(no_vat, "no_vat");
  add(no_adf, "no_adf");
  return out.empty() ? "none" : out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
  }();
  return k;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void RunConfig::validate() const {
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(eta > 0.0)) throw ConfigError("vat.eta must be positive");
  if (!(few_shot > 0.0) || few_shot > 1.0) throw ConfigError("few_shot must lie in (0, 1]");
  if (emb_dim == 0 || token_cap == 0) throw ConfigError("embed.dim and embed.token_cap must be positive");
  if (svd_rank == 0 || adf_patch == 0) throw ConfigError("adf.svd_rank and adf.patch_len must be positive");
  if (symbolizer_stride == 0) throw ConfigError("symbolizer.stride must be positive");
  tols.validate();
}

std::string resolve_data_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("STAT_DATA_DIR"); env && *env) return env;
  return "data";
}

}  // namespace trimodal

#include "trimodal/embedder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "trimodal/errors.hpp"
#include "trimodal/symbolizer.hpp"

namespace trimodal {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(lower(std::move(cur)));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur += ch;
    }
  }
  flush();
  return out;
}

std::vector<std::string> tokenize_symbols(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto u = static_cast<unsigned char>(text[i]);
    if (text[i] == '|') {
      out.emplace_back("|");
      ++i;
    } else if (std::isalpha(u)) {
      std::size_t j = i + 1;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back(text.substr(i, j - i));
      i = j;
    } else if (std::isspace(u)) {
      ++i;
    } else {
      throw InputError(std::string("unexpected character '") + text[i] + "' in symbol string");
    }
  }
  return out;
}

void EmbeddingProvider::build_index() {
  index_.clear();
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!index_.emplace(vocab_[i], i).second) {
      throw ConfigError("embedding vocabulary repeats token '" + vocab_[i] + "'");
    }
  }
}

void EmbeddingProvider::append_buckets(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> values(table_.data().begin(), table_.data().end());
  for (std::size_t i = 0; i < buckets_ * dim_; ++i) values.push_back(dist(rng));
  table_ = Tensor::from({vocab_.size() + buckets_, dim_}, std::move(values));
}

EmbeddingProvider EmbeddingProvider::random(const std::vector<std::string>& vocab, std::size_t dim,
                                            std::uint64_t seed, std::size_t oov_buckets) {
  if (dim == 0 || vocab.empty()) throw ConfigError("embedding provider needs a vocabulary and a dimension");
  EmbeddingProvider p;
  p.vocab_ = vocab;
  p.dim_ = dim;
  p.buckets_ = oov_buckets;
  p.build_index();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> values(vocab.size() * dim);
  for (auto& v : values) v = dist(rng);
  p.table_ = Tensor::from({vocab.size(), dim}, std::move(values));
  p.append_buckets(seed);
  return p;
}

EmbeddingProvider EmbeddingProvider::load(const std::string& path, std::uint64_t seed,
                                          std::size_t oov_buckets) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embedding file " + path);
  std::size_t v = 0, d = 0;
  in >> v >> d;
  if (!in || v == 0 || d == 0) throw LoadError(path + ": header must be \"V D\" with V, D > 0");
  EmbeddingProvider p;
  p.dim_ = d;
  p.buckets_ = oov_buckets;
  std::vector<double> values;
  values.reserve(v * d);
  for (std::size_t i = 0; i < v; ++i) {
    std::string tok;
    in >> tok;
    for (std::size_t j = 0; j < d; ++j) {
      double x = 0;
      in >> x;
      values.push_back(x);
    }
    if (!in) throw LoadError(path + ": truncated record " + std::to_string(i + 1));
    p.vocab_.push_back(std::move(tok));
  }
  p.build_index();
  p.table_ = Tensor::from({v, d}, std::move(values));
  p.append_buckets(seed);
  return p;
}

void EmbeddingProvider::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << vocab_.size() << ' ' << dim_ << '\n' << std::setprecision(17);
  const auto t = table_.data();
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    out << vocab_[i];
    for (std::size_t j = 0; j < dim_; ++j) out << ' ' << t[i * dim_ + j];
    out << '\n';
  }
}

bool EmbeddingProvider::in_vocab(const std::string& token) const {
  return index_.count(token) || index_.count(lower(token));
}

std::size_t EmbeddingProvider::row_of(const std::string& token) const {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  if (auto it = index_.find(lower(token)); it != index_.end()) return it->second;
  if (buckets_ == 0) throw ContractError("token '" + token + "' is out of vocabulary");
  return vocab_.size() + fnv1a(token.data(), token.size()) % buckets_;
}

Tensor EmbeddingProvider::embed(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw ContractError("embed needs at least one token");
  std::vector<std::size_t> rows;
  rows.reserve(tokens.size());
  for (const auto& t : tokens) rows.push_back(row_of(t));
  return index_rows(table_, rows, {tokens.size()});
}

std::uint64_t EmbeddingProvider::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : vocab_) h = fnv1a(t.data(), t.size() + 1, h);
  const auto d = table_.data();
  return fnv1a(d.data(), d.size_bytes(), h);
}

std::vector<std::string> base_vocabulary(const std::vector<std::string>& extra_texts,
                                         std::size_t symbol_count) {
  std::vector<std::string> vocab;
  std::unordered_map<std::string, bool> seen;
  auto add = [&](const std::string& t) {
    if (seen.emplace(t, true).second) vocab.push_back(t);
  };
  for (const auto& text : extra_texts)
    for (const auto& t : tokenize_text(text)) add(t);
  for (int i = 0; i < 1000; ++i) add(std::to_string(i));
  for (const char* p : {".", ",", "=", "(", ")", "[", "]", "-", "|", ":"}) add(p);
  for (std::size_t i = 0; i < std::max<std::size_t>(symbol_count, 52); ++i) add(symbol_name(i));
  return vocab;
}

KeyPool align_tokens(const EmbeddingProvider& provider, const Linear& align,
                     const std::vector<std::vector<std::string>>& tokens) {
  if (align.in_features() != provider.dim()) {
    throw ConfigError("alignment projection expects " + std::to_string(align.in_features()) +
                      "-dim embeddings, provider has " + std::to_string(provider.dim()));
  }
  KeyPool pool;
  std::unordered_map<std::size_t, std::size_t> unique;
  std::vector<std::size_t> rows;
  for (const auto& item : tokens) pool.max_len = std::max(pool.max_len, item.size());
  pool.ids.assign(tokens.size() * pool.max_len, 0);
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    pool.lengths.push_back(tokens[b].size());
    for (std::size_t i = 0; i < tokens[b].size(); ++i) {
      const std::size_t row = provider.row_of(tokens[b][i]);
      auto [it, fresh] = unique.emplace(row, rows.size());
      if (fresh) rows.push_back(row);
      pool.ids[b * pool.max_len + i] = it->second;
    }
  }
  if (rows.empty()) {
    pool.table = Tensor::zeros({1, align.out_features()});
    return pool;
  }
  pool.table = align(index_rows(provider.table(), rows, {rows.size()}));
  return pool;
}

}  // namespace trimodal

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "trimodal/nn.hpp"
#include "trimodal/tensor.hpp"

namespace trimodal {

/// Lowercased words, digit runs and single punctuation marks.
std::vector<std::string> tokenize_text(const std::string& text);
/// Symbol strings: one token per symbol (a letter plus optional digits) and
/// "|" separators. Case is preserved.
std::vector<std::string> tokenize_symbols(const std::string& text);

/// Frozen token table. Rows past the vocabulary are hashed out-of-vocabulary
/// buckets. The table never requires gradients.
class EmbeddingProvider {
 public:
  EmbeddingProvider() = default;

  /// Seeded standard-normal rows for `vocab` plus `oov_buckets` rows.
  static EmbeddingProvider random(const std::vector<std::string>& vocab, std::size_t dim,
                                  std::uint64_t seed, std::size_t oov_buckets = 1024);
  /// Text file: "V D" header then V lines of "token v1 ... vD".
  static EmbeddingProvider load(const std::string& path, std::uint64_t seed,
                                std::size_t oov_buckets = 1024);
  void save(const std::string& path) const;

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t oov_buckets() const { return buckets_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  const Tensor& table() const { return table_; }

  /// Exact match, then lowercase match, then hash bucket.
  std::size_t row_of(const std::string& token) const;
  bool in_vocab(const std::string& token) const;
  /// [tokens, dim]; an empty token list is a contract error.
  Tensor embed(const std::vector<std::string>& tokens) const;
  std::uint64_t checksum() const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
  std::size_t buckets_ = 0;
  Tensor table_;
  void build_index();
  void append_buckets(std::uint64_t seed);
};

/// Tokens every prompt and symbol string can produce without hashing:
/// template words, integers 0..999, punctuation, letters and separators.
std::vector<std::string> base_vocabulary(const std::vector<std::string>& extra_texts,
                                         std::size_t symbol_count);

/// Per-item token lists embedded through one shared alignment projection.
/// Rows are gathered once per distinct token, projected, and referenced by
/// index so repeated tokens cost nothing extra.
KeyPool align_tokens(const EmbeddingProvider& provider, const Linear& align,
                     const std::vector<std::vector<std::string>>& tokens);

}  // namespace trimodal

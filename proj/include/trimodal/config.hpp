#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trimodal/symbolizer.hpp"

namespace trimodal {

struct Ablation {
  bool no_trl = false;  // drop the text branch
  bool no_srl = false;  // drop the symbolic branch
  bool no_vat = false;  // lambda fixed to 1
  bool no_adf = false;  // plain MSE loss

  /// Comma list of no_trl, no_srl, no_vat, no_adf; empty or "none" for the full model.
  static Ablation parse(const std::string& text);
  std::string to_string() const;
  bool any() const { return no_trl || no_srl || no_vat || no_adf; }
};

/// Every knob of one experiment. Text form is flat `key = value` lines;
/// `#` starts a comment.
struct RunConfig {
  std::string dataset = "Synthetic";
  std::string data_dir;  // empty: $STAT_DATA_DIR, then ./data
  std::string registry;  // optional JSON registry replacing the built-in one
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  Ablation ablation;
  double eta = 2.0;
  ScaleTolerances tols;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t top_k = 5;
  std::size_t bank_size = 256;
  std::size_t emb_dim = 64;
  std::uint64_t embed_seed = 1234;
  std::string embed_file;  // optional exported embedding table
  std::size_t token_cap = 128;
  std::size_t svd_rank = 4;
  std::size_t adf_patch = 24;
  double few_shot = 1.0;
  bool strict_targets = false;  // force horizon-inside-split windows
  std::size_t synthetic_rows = 2400;
  std::size_t synthetic_channels = 3;
  std::uint64_t synthetic_seed = 7;
  std::size_t symbolizer_stride = 8;
  std::size_t max_batches = 0;  // per-epoch cap on training batches; 0 = all

  /// Throws ConfigError on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_text() const;
  std::uint64_t hash() const;
  void validate() const;
};

/// Data directory: explicit value, else $STAT_DATA_DIR, else "data".
std::string resolve_data_dir(const std::string& configured);

}  // namespace trimodal

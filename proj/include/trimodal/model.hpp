#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trimodal/embedder.hpp"
#include "trimodal/fusion.hpp"
#include "trimodal/nn.hpp"
#include "trimodal/symbolic.hpp"
#include "trimodal/temporal.hpp"
#include "trimodal/textual.hpp"

namespace trimodal {

struct ModelConfig {
  TemporalConfig temporal;
  double eta = 2.0;
  bool use_text = true;
  bool use_symbolic = true;
  bool use_vat = true;
};

/// One mini-batch of windows with their per-window side inputs.
struct ModelBatch {
  Tensor x;                                        // [B, L, C]
  std::vector<double> alpha;                       // [B]
  std::vector<std::vector<std::string>> prompts;   // prompt tokens per item
  std::array<std::vector<std::vector<std::string>>, 3> symbols;  // per scale, per item
};

struct ModelOutput {
  Tensor y;        // fused [B, T, C]
  Tensor y_temp;
  Tensor y_txt;    // undefined when the text branch is off
  Tensor y_sym;    // undefined when the symbolic branch is off
  Tensor weights;  // [B, T, C, E]
  std::vector<std::string> experts;  // names along the last weight axis
};

class StatModel {
 public:
  StatModel(const ModelConfig& cfg, std::shared_ptr<const EmbeddingProvider> provider,
            std::uint64_t seed);

  /// Reads the memory bank; with `update_bank` the batch is enqueued after retrieval.
  ModelOutput forward(const ModelBatch& batch, bool update_bank);

  void reset_bank() { bank_.clear(); }
  MemoryBank& bank() { return bank_; }
  const MemoryBank& bank() const { return bank_; }

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const EmbeddingProvider& provider() const { return *provider_; }
  std::vector<std::string> expert_names() const;

  TemporalLearner temporal;
  Linear align;  // shared by the text and symbol paths
  TextualLearner text;
  SymbolicLearner symbolic;
  VatRouter router;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const EmbeddingProvider> provider_;
  ParamStore store_;
  MemoryBank bank_;
};

}  // namespace trimodal

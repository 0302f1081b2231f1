#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace trimodal {

struct WindowSet;

/// One linear segment of the polygonal approximation.
struct Piece {
  std::size_t len = 1;  // step count
  double inc = 0.0;     // total change over the piece
};

/// Squared deviation of x[i..j] from the chord joining (i, x[i]) and (j, x[j]).
double chord_error(std::span<const double> x, std::size_t i, std::size_t j);

/// Greedy polygonal compression. Each piece [i..j] is extended one step at a
/// time while chord_error <= (j - i) * tol^2 and stops at the first step that
/// violates it. Pieces partition [0, n-1]. Throws InputError for n < 2.
std::vector<Piece> compress(std::span<const double> x, double tol);

/// Zero-mean unit-variance copy (population std). A constant
/// input maps to zeros.
std::vector<double> zscore(std::span<const double> x);

/// Alphabet label of the i-th symbol: A..Z, a..z, then letter + round number.
std::string symbol_name(std::size_t i);

class Codebook {
 public:
  double tol = 0.0;
  double scl = 1.0;
  double len_std = 1.0;  // scaling denominators fit on the corpus
  double inc_std = 1.0;
  std::vector<double> center_len, center_inc;  // original units
  std::vector<std::size_t> population;

  std::size_t size() const { return center_len.size(); }
  std::array<double, 2> scaled(double len, double inc) const {
    return {scl * len / len_std, inc / inc_std};
  }
  /// Nearest center in scaled space; ties go to the lower index.
  std::size_t assign(const Piece& p) const;
  /// Sorts the scaled centers so assign() can prune; a stale or missing
  /// index falls back to a full scan. Fitting and loading build it.
  void build_index();
  std::string symbol(std::size_t id) const { return symbol_name(id); }

  /// Text form: header line then one "symbol len inc population" record each.
  std::string to_text() const;
  static Codebook from_text(const std::string& text);

 private:
  std::vector<std::size_t> order_;   // center ids by scaled length, then id
  std::vector<double> sorted_x_, sorted_y_;
};

/// Greedy aggregation result with the grouping exposed for inspection.
struct Aggregation {
  Codebook codebook;
  std::vector<std::size_t> label;    // per input piece, codebook index
  std::vector<std::size_t> starter;  // per codebook index, input piece that opened the group
};

/// Sorted greedy aggregation with radius tol * sqrt(2). Groups are ordered by
/// descending population (ties by opening order), so 'A' is the largest.
Aggregation aggregate(std::span<const Piece> pieces, double tol, double scl = 1.0);
Codebook digitize(std::span<const Piece> pieces, double tol, double scl = 1.0);

struct SymbolicSequence {
  std::vector<std::size_t> ids;
  std::shared_ptr<const Codebook> codebook;
  double tol = 0.0;
  std::size_t source_len = 0;

  std::string text() const;
};

/// Compress x at the codebook's tolerance and map every piece to a symbol.
SymbolicSequence symbolize(std::span<const double> x, std::shared_ptr<const Codebook> codebook);

/// Polyline through the center pieces, stretched to source_len points.
/// Knot positions are cumulative center lengths rounded from the running sum.
std::vector<double> reconstruct(const SymbolicSequence& seq, double start_value);

struct ScaleTolerances {
  double fine = 0.01, mid = 0.10, coarse = 0.50;
  std::array<double, 3> as_array() const { return {fine, mid, coarse}; }
  void validate() const;
};

/// Three sequences of one already-normalized series, each scale digitized on
/// its own pieces.
std::array<SymbolicSequence, 3> multi_scale(std::span<const double> x,
                                            const ScaleTolerances& tols = {});

/// Codebooks for the three scales fit once on training windows and frozen.
class MultiScaleSymbolizer {
 public:
  MultiScaleSymbolizer() = default;
  MultiScaleSymbolizer(ScaleTolerances tols, std::array<std::shared_ptr<const Codebook>, 3> books);

  /// Pools pieces of every channel of windows taken `stride` origins apart.
  static MultiScaleSymbolizer fit(const WindowSet& train, const ScaleTolerances& tols,
                                  std::size_t stride);

  bool fitted() const { return books_[0] != nullptr; }
  const ScaleTolerances& tolerances() const { return tols_; }
  const Codebook& codebook(std::size_t scale) const { return *books_.at(scale); }

  /// Symbols of a [L, C] row-major window at one scale, channels separated
  /// by "|" tokens.
  std::vector<std::string> tokens(const double* window, std::size_t lookback,
                                  std::size_t channels, std::size_t scale) const;

  std::string to_text() const;
  static MultiScaleSymbolizer from_text(const std::string& text);

 private:
  ScaleTolerances tols_;
  std::array<std::shared_ptr<const Codebook>, 3> books_{};
};

}  // namespace trimodal

#include "trimodal/symbolizer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "trimodal/data.hpp"
#include "trimodal/errors.hpp"

namespace trimodal {

double chord_error(std::span<const double> x, std::size_t i, std::size_t j) {
  const double slope = (x[j] - x[i]) / static_cast<double>(j - i);
  double err = 0.0;
  for (std::size_t k = i + 1; k < j; ++k) {
    const double d = x[k] - (x[i] + slope * static_cast<double>(k - i));
    err += d * d;
  }
  return err;
}

std::vector<Piece> compress(std::span<const double> x, double tol) {
  if (x.size() < 2) {
    throw InputError("compress needs at least 2 points, got " + std::to_string(x.size()));
  }
  if (!(tol > 0.0)) throw ConfigError("compression tolerance must be positive");
  const double tol2 = tol * tol;
  std::vector<Piece> pieces;
  std::size_t i = 0;
  const std::size_t last = x.size() - 1;
  while (i < last) {
    std::size_t j = i + 1;
    while (j < last && chord_error(x, i, j + 1) <= static_cast<double>(j + 1 - i) * tol2) ++j;
    pieces.push_back({j - i, x[j] - x[i]});
    i = j;
  }
  return pieces;
}

std::vector<double> zscore(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (x.empty()) return out;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (auto& v : out) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
  return out;
}

std::string symbol_name(std::size_t i) {
  const std::size_t letter = i % 52;
  std::string s(1, letter < 26 ? static_cast<char>('A' + letter)
                               : static_cast<char>('a' + (letter - 26)));
  if (i >= 52) s += std::to_string(i / 52);
  return s;
}

std::size_t Codebook::assign(const Piece& p) const {
  if (size() == 0) throw ContractError("assign on an empty codebook");
  const auto q = scaled(static_cast<double>(p.len), p.inc);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](std::size_t k, double cx, double cy) {
    const double d = (q[0] - cx) * (q[0] - cx) + (q[1] - cy) * (q[1] - cy);
    if (d < best_d || (d == best_d && k < best)) {
      best_d = d;
      best = k;
    }
  };
  if (order_.size() != size()) {
    for (std::size_t k = 0; k < size(); ++k) {
      const auto c = scaled(center_len[k], center_inc[k]);
      consider(k, c[0], c[1]);
    }
    return best;
  }
  // Walk outwards from q in scaled length; the length gap alone bounds the distance.
  const std::size_t mid = static_cast<std::size_t>(
      std::lower_bound(sorted_x_.begin(), sorted_x_.end(), q[0]) - sorted_x_.begin());
  for (std::size_t i = mid; i < size(); ++i) {
    const double dx = q[0] - sorted_x_[i];
    if (dx * dx > best_d) break;
    consider(order_[i], sorted_x_[i], sorted_y_[i]);
  }
  for (std::size_t i = mid; i-- > 0;) {
    const double dx = q[0] - sorted_x_[i];
    if (dx * dx > best_d) break;
    consider(order_[i], sorted_x_[i], sorted_y_[i]);
  }
  return best;
}

void Codebook::build_index() {
  order_.resize(size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::vector<std::array<double, 2>> sc(size());
  for (std::size_t k = 0; k < size(); ++k) sc[k] = scaled(center_len[k], center_inc[k]);
  std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
    return sc[a][0] < sc[b][0] || (sc[a][0] == sc[b][0] && a < b);
  });
  sorted_x_.resize(size());
  sorted_y_.resize(size());
  for (std::size_t i = 0; i < size(); ++i) {
    sorted_x_[i] = sc[order_[i]][0];
    sorted_y_[i] = sc[order_[i]][1];
  }
}

std::string Codebook::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "codebook " << tol << ' ' << scl << ' ' << len_std << ' ' << inc_std << ' ' << size()
      << '\n';
  for (std::size_t k = 0; k < size(); ++k) {
    out << symbol(k) << ' ' << center_len[k] << ' ' << center_inc[k] << ' ' << population[k]
        << '\n';
  }
  return out.str();
}

Codebook Codebook::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  std::size_t k = 0;
  Codebook cb;
  in >> tag >> cb.tol >> cb.scl >> cb.len_std >> cb.inc_std >> k;
  if (!in || tag != "codebook") throw LoadError("malformed codebook header");
  for (std::size_t i = 0; i < k; ++i) {
    std::string sym;
    double len = 0, inc = 0;
    std::size_t pop = 0;
    in >> sym >> len >> inc >> pop;
    if (!in || sym != symbol_name(i)) {
      throw LoadError("malformed codebook record " + std::to_string(i));
    }
    cb.center_len.push_back(len);
    cb.center_inc.push_back(inc);
    cb.population.push_back(pop);
  }
  cb.build_index();
  return cb;
}

namespace {

double population_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  return std::sqrt(var / n);
}

}  // namespace

Aggregation aggregate(std::span<const Piece> pieces, double tol, double scl) {
  if (pieces.empty()) throw InputError("digitize needs at least one piece");
  Aggregation agg;
  Codebook& cb = agg.codebook;
  cb.tol = tol;
  cb.scl = scl;
  std::vector<double> lens, incs;
  for (const auto& p : pieces) {
    lens.push_back(static_cast<double>(p.len));
    incs.push_back(p.inc);
  }
  const double ls = population_std(lens), is = population_std(incs);
  cb.len_std = ls > 1e-12 ? ls : 1.0;
  cb.inc_std = is > 1e-12 ? is : 1.0;

  const std::size_t n = pieces.size();
  std::vector<std::array<double, 2>> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = cb.scaled(lens[i], incs[i]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pts[a][0] < pts[b][0]; });

  const double radius = tol * std::sqrt(2.0);
  const double r2 = radius * radius;
  std::vector<std::size_t> group(n, n);
  std::vector<std::size_t> starters;
  for (std::size_t oi = 0; oi < n; ++oi) {
    const std::size_t s = order[oi];
    if (group[s] != n) continue;
    const std::size_t g = starters.size();
    starters.push_back(s);
    group[s] = g;
    for (std::size_t oj = oi + 1; oj < n; ++oj) {
      const std::size_t t = order[oj];
      const double dx = pts[t][0] - pts[s][0];
      if (dx > radius) break;  // sorted on the first coordinate
      if (group[t] != n) continue;
      const double dy = pts[t][1] - pts[s][1];
      if (dx * dx + dy * dy <= r2) group[t] = g;
    }
  }

  const std::size_t k = starters.size();
  std::vector<std::size_t> pop(k, 0);
  std::vector<double> sum_len(k, 0.0), sum_inc(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    ++pop[group[i]];
    sum_len[group[i]] += lens[i];
    sum_inc[group[i]] += incs[i];
  }
  std::vector<std::size_t> rank(k);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return pop[a] > pop[b]; });
  std::vector<std::size_t> new_id(k);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t g = rank[r];
    new_id[g] = r;
    cb.center_len.push_back(sum_len[g] / static_cast<double>(pop[g]));
    cb.center_inc.push_back(sum_inc[g] / static_cast<double>(pop[g]));
    cb.population.push_back(pop[g]);
    agg.starter.push_back(starters[g]);
  }
  agg.label.resize(n);
  for (std::size_t i = 0; i < n; ++i) agg.label[i] = new_id[group[i]];
  cb.build_index();
  return agg;
}

Codebook digitize(std::span<const Piece> pieces, double tol, double scl) {
  return aggregate(pieces, tol, scl).codebook;
}

std::string SymbolicSequence::text() const {
  std::string out;
  for (std::size_t id : ids) out += symbol_name(id);
  return out;
}

SymbolicSequence symbolize(std::span<const double> x, std::shared_ptr<const Codebook> codebook) {
  if (!codebook || codebook->size() == 0) throw ContractError("symbolize needs a fitted codebook");
  SymbolicSequence seq;
  seq.tol = codebook->tol;
  seq.source_len = x.size();
  for (const auto& p : compress(x, codebook->tol)) seq.ids.push_back(codebook->assign(p));
  seq.codebook = std::move(codebook);
  return seq;
}

std::vector<double> reconstruct(const SymbolicSequence& seq, double start_value) {
  if (!seq.codebook || seq.ids.empty() || seq.source_len < 2) {
    throw ContractError("reconstruct needs a non-empty sequence");
  }
  const Codebook& cb = *seq.codebook;
  double total = 0.0;
  for (std::size_t id : seq.ids) total += cb.center_len.at(id);
  const double stretch = static_cast<double>(seq.source_len - 1) / total;

  std::vector<double> out(seq.source_len, start_value);
  double cum_len = 0.0, value = start_value;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < seq.ids.size(); ++s) {
    const std::size_t id = seq.ids[s];
    cum_len += cb.center_len[id];
    const double next_value = value + cb.center_inc[id];
    // Rounding the running sum keeps the accumulated rounding error below 0.5.
    const std::size_t next_pos = s + 1 == seq.ids.size()
                                     ? seq.source_len - 1
                                     : static_cast<std::size_t>(std::llround(cum_len * stretch));
    if (next_pos > pos) {
      const double width = static_cast<double>(next_pos - pos);
      for (std::size_t t = pos + 1; t <= next_pos; ++t) {
        out[t] = value + (next_value - value) * static_cast<double>(t - pos) / width;
      }
      pos = next_pos;
    }
    value = next_value;
  }
  return out;
}

void ScaleTolerances::validate() const {
  if (!(fine > 0.0 && fine < mid && mid < coarse)) {
    std::ostringstream msg;
    msg << "symbolic tolerances must be positive and strictly increasing, got (" << fine << ", "
        << mid << ", " << coarse << ")";
    throw ConfigError(msg.str());
  }
}

std::array<SymbolicSequence, 3> multi_scale(std::span<const double> x,
                                            const ScaleTolerances& tols) {
  tols.validate();
  std::array<SymbolicSequence, 3> out;
  const auto t = tols.as_array();
  for (std::size_t s = 0; s < 3; ++s) {
    const auto pieces = compress(x, t[s]);
    auto book = std::make_shared<const Codebook>(digitize(pieces, t[s]));
    out[s].tol = t[s];
    out[s].source_len = x.size();
    for (const auto& p : pieces) out[s].ids.push_back(book->assign(p));
    out[s].codebook = std::move(book);
  }
  return out;
}

MultiScaleSymbolizer::MultiScaleSymbolizer(ScaleTolerances tols,
                                           std::array<std::shared_ptr<const Codebook>, 3> books)
    : tols_(tols), books_(std::move(books)) {
  tols_.validate();
}

MultiScaleSymbolizer MultiScaleSymbolizer::fit(const WindowSet& train, const ScaleTolerances& tols,
                                               std::size_t stride) {
  tols.validate();
  if (train.size() == 0) throw InputError("cannot fit codebooks on an empty window set");
  stride = std::max<std::size_t>(stride, 1);
  const auto t = tols.as_array();
  std::array<std::vector<Piece>, 3> corpus;
  std::vector<double> column(train.lookback);
  for (std::size_t i = 0; i < train.size(); i += stride) {
    const double* x = train.x_ptr(i);
    for (std::size_t c = 0; c < train.channels; ++c) {
      for (std::size_t l = 0; l < train.lookback; ++l) column[l] = x[l * train.channels + c];
      const auto z = zscore(column);
      for (std::size_t s = 0; s < 3; ++s) {
        const auto p = compress(z, t[s]);
        corpus[s].insert(corpus[s].end(), p.begin(), p.end());
      }
    }
  }
  std::array<std::shared_ptr<const Codebook>, 3> books;
  for (std::size_t s = 0; s < 3; ++s) {
    books[s] = std::make_shared<const Codebook>(digitize(corpus[s], t[s]));
  }
  return MultiScaleSymbolizer(tols, std::move(books));
}

std::vector<std::string> MultiScaleSymbolizer::tokens(const double* window, std::size_t lookback,
                                                      std::size_t channels,
                                                      std::size_t scale) const {
  if (!fitted()) throw ContractError("symbolizer used before fit");
  const Codebook& cb = *books_.at(scale);
  std::vector<std::string> out;
  std::vector<double> column(lookback);
  for (std::size_t c = 0; c < channels; ++c) {
    if (c > 0) out.emplace_back("|");
    for (std::size_t l = 0; l < lookback; ++l) column[l] = window[l * channels + c];
    for (const auto& p : compress(zscore(column), cb.tol)) out.push_back(cb.symbol(cb.assign(p)));
  }
  return out;
}

std::string MultiScaleSymbolizer::to_text() const {
  if (!fitted()) throw ContractError("cannot serialize an unfitted symbolizer");
  std::ostringstream out;
  out << std::setprecision(17) << "symbolizer " << tols_.fine << ' ' << tols_.mid << ' '
      << tols_.coarse << '\n';
  for (const auto& b : books_) out << b->to_text();
  return out.str();
}

MultiScaleSymbolizer MultiScaleSymbolizer::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::istringstream head(line);
  std::string tag;
  ScaleTolerances tols;
  head >> tag >> tols.fine >> tols.mid >> tols.coarse;
  if (!head || tag != "symbolizer") throw LoadError("malformed symbolizer header");
  std::array<std::shared_ptr<const Codebook>, 3> books;
  std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t at = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t next = rest.find("codebook", at + 1);
    const std::string chunk =
        rest.substr(at, next == std::string::npos ? std::string::npos : next - at);
    books[s] = std::make_shared<const Codebook>(Codebook::from_text(chunk));
    at = next;
    if (s < 2 && next == std::string::npos) throw LoadError("symbolizer text holds fewer than 3 codebooks");
  }
  return MultiScaleSymbolizer(tols, std::move(books));
}

}  // namespace trimodal

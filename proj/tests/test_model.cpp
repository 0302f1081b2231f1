#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "trimodal/errors.hpp"
#include "trimodal/fusion.hpp"
#include "trimodal/model.hpp"
#include "trimodal/symbolic.hpp"
#include "trimodal/temporal.hpp"
#include "trimodal/textual.hpp"

using namespace trimodal;
using trimodal::testing::random_constant;
using trimodal::testing::random_leaf;

namespace {

TemporalConfig small_temporal(std::size_t channels = 2) {
  TemporalConfig c;
  c.lookback = 24;
  c.horizon = 6;
  c.channels = channels;
  c.patch_len = 8;
  c.stride = 4;
  c.d_model = 8;
  c.heads = 2;
  c.top_k = 3;
  c.bank_size = 16;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

void zero_all(ParamStore& store, const std::string& prefix, const std::string& suffix) {
  for (const auto& p : store.params()) {
    if (p.name.rfind(prefix, 0) == 0 && p.name.size() >= suffix.size() &&
        p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      auto d = Tensor(p.tensor).mutable_data();
      std::fill(d.begin(), d.end(), 0.0);
    }
  }
}

}  // namespace

TEST_CASE("patch configuration") {
  TemporalConfig c;
  CHECK(c.patches() == 11);
  c.patch_len = 96;
  c.stride = 7;
  CHECK(c.patches() == 1);
  c.patch_len = 97;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.patch_len = 16;
  c.stride = 17;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.stride = 8;
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  // every value lands in at least one patch
  std::vector<double> v(2 * 24);
  std::iota(v.begin(), v.end(), 1.0);
  Tensor x = Tensor::from({1, 24, 2}, v);
  Tensor p = patchify(x, 8, 4);
  CHECK(p.shape() == Shape{1, 5, 16});
  for (double want : v) CHECK(std::find(p.data().begin(), p.data().end(), want) != p.data().end());
}

TEST_CASE("patch embedding") {
  ParamStore store(1);
  TemporalLearner t(store, small_temporal());
  const std::size_t n = t.config().patches();
  Tensor zero = t.embed_patches(Tensor::zeros({1, n, 16}));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 8; ++d)
      CHECK(zero.at({0, i, d}) == doctest::Approx(t.positions.at({i, d}) + t.patch_proj.bias.at({d})));

  std::mt19937_64 rng(2);
  Tensor a = random_constant({1, 2, 16}, rng);
  Tensor swapped = concat({narrow(a, 1, 1, 1), narrow(a, 1, 0, 1)}, 1);
  Tensor ea = t.embed_patches(a), es = t.embed_patches(swapped);
  CHECK(ea.shape() == Shape{1, 2, 8});
  CHECK(max_abs_diff(narrow(ea, 1, 0, 1), narrow(es, 1, 1, 1)) > 1e-6);
  CHECK_THROWS_AS(t.embed_patches(Tensor::zeros({1, n + 1, 16})), ConfigError);
}

TEST_CASE("memory bank is a FIFO") {
  MemoryBank bank(4, 2);
  CHECK(bank.empty());
  std::vector<double> xv{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  bank.enqueue(Tensor::from({2, 3, 2}, xv));
  CHECK(bank.fill() == 2);
  CHECK(bank.row(0) == std::vector<double>{3, 4});
  CHECK(bank.row(1) == std::vector<double>{9, 10});

  MemoryBank small(4, 1);
  for (int i = 0; i < 6; ++i) small.push(std::vector<double>{double(i)});
  CHECK(small.fill() == 4);
  CHECK(small.row(0)[0] == 2.0);
  CHECK(small.row(3)[0] == 5.0);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(1, 5);
  MemoryBank sim(7, 3);
  std::deque<std::vector<double>> ref;
  for (int step = 0; step < 40; ++step) {
    Tensor x = random_constant({std::size_t(count(rng)), 2, 3}, rng);
    for (std::size_t b = 0; b < x.shape()[0]; ++b) {
      std::vector<double> m(3);
      for (std::size_t d = 0; d < 3; ++d) m[d] = (x.at({b, 0, d}) + x.at({b, 1, d})) / 2;
      ref.push_back(m);
      if (ref.size() > 7) ref.pop_front();
    }
    sim.enqueue(x);
    REQUIRE(sim.fill() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      for (std::size_t d = 0; d < 3; ++d) CHECK(sim.row(i)[d] == doctest::Approx(ref[i][d]).epsilon(1e-14));
  }
  sim.clear();
  CHECK(sim.empty());
}

TEST_CASE("local correlation") {
  ParamStore store(4);
  TemporalLearner t(store, small_temporal());
  std::mt19937_64 rng(5);
  Tensor x = random_constant({2, 3, 8}, rng);
  MemoryBank bank(16, 8);
  CHECK(t.local_correlation(x, bank).tape_id() == x.tape_id());

  // a bank holding the query itself returns it with k = 1
  MemoryBank one(16, 8);
  Tensor q = narrow(x, 0, 0, 1);
  one.push(std::vector<double>(q.data().begin(), q.data().begin() + 8));
  one.push(std::vector<double>(8, -1.0));
  Retrieval r = retrieve(narrow(q, 1, 0, 1), one, 1);
  for (std::size_t d = 0; d < 8; ++d) CHECK(r.retrieved.at({0, 0, d}) == doctest::Approx(q.at({0, 0, d})));

  // top-3 against a brute-force cosine scan
  MemoryBank ten(16, 8);
  for (int i = 0; i < 10; ++i) {
    Tensor row = random_constant({8}, rng);
    ten.push(row.data());
  }
  Retrieval top = retrieve(x, ten, 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t n = 0; n < 3; ++n) {
      std::vector<std::pair<double, std::size_t>> sims;
      for (std::size_t i = 0; i < 10; ++i) {
        auto row = ten.row(i);
        double dot = 0, na = 0, nb = 0;
        for (std::size_t d = 0; d < 8; ++d) {
          dot += x.at({b, n, d}) * row[d];
          na += x.at({b, n, d}) * x.at({b, n, d});
          nb += row[d] * row[d];
        }
        sims.emplace_back(-dot / std::sqrt(na * nb), i);
      }
      std::sort(sims.begin(), sims.end());
      for (std::size_t j = 0; j < 3; ++j) CHECK(top.indices[(b * 3 + n) * 3 + j] == sims[j].second);
    }

  // duplicates: the older copy wins the tie
  MemoryBank dup(16, 8);
  Tensor v = random_constant({8}, rng);
  dup.push(v.data());
  dup.push(std::vector<double>(8, 0.5));
  dup.push(v.data());
  Retrieval d1 = retrieve(reshape(v, {1, 1, 8}), dup, 1);
  CHECK(d1.indices[0] == 0);

  Tensor m = t.local_correlation(x, ten);
  CHECK(m.shape() == x.shape());
  for (double e : m.data()) CHECK(std::isfinite(e));
}

TEST_CASE("global correlation") {
  ParamStore store(6);
  TemporalLearner t(store, small_temporal());
  std::mt19937_64 rng(7);
  Tensor single = random_constant({2, 1, 8}, rng);
  Tensor g1 = t.global_correlation(single);
  CHECK(g1.shape() == Shape{2, 8});
  Tensor expect = t.self_attn.wo(t.self_attn.wv(reshape(single, {2, 8})));
  CHECK(max_abs_diff(g1, expect) < 1e-12);

  Tensor x = random_constant({1, 4, 8}, rng);
  Tensor perm = concat({narrow(x, 1, 2, 2), narrow(x, 1, 0, 2)}, 1);
  CHECK(max_abs_diff(t.global_correlation(x), t.global_correlation(perm)) < 1e-12);
}

TEST_CASE("temporal forward") {
  ParamStore store(8);
  TemporalLearner t(store, small_temporal(2));
  std::mt19937_64 rng(9);
  Tensor x = random_constant({3, 24, 2}, rng);
  MemoryBank bank(16, 8);
  TemporalOutput out = t.forward(x, bank);
  CHECK(out.y.shape() == Shape{3, 6, 2});
  CHECK(out.query.shape() == Shape{3, 2, 8});
  CHECK(out.features.shape() == Shape{3, 5, 8});

  // channel rows of the query differ by the channel embedding only
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t d = 0; d < 8; ++d)
      CHECK(out.query.at({b, 0, d}) - out.query.at({b, 1, d}) ==
            doctest::Approx(t.channel_embed.at({0, d}) - t.channel_embed.at({1, d})));

  backward(sum(out.y));
  CHECK(t.patch_proj.weight.has_grad());
  double g = 0;
  for (double v : t.patch_proj.weight.grad()) g += std::fabs(v);
  CHECK(g > 0);

  bank.enqueue(out.embedded);
  TemporalOutput with_bank = t.forward(x, bank);
  for (double v : with_bank.y.data()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(t.forward(Tensor::zeros({1, 23, 2}), bank), DimensionError);
}

TEST_CASE("textual learner") {
  ParamStore store(10);
  TextualLearner text(store, 8, 2, 5);
  std::mt19937_64 rng(11);
  Tensor q = random_constant({2, 3, 8}, rng);

  // one key: every channel row sees the projected value row
  Tensor key = random_constant({2, 1, 8}, rng);
  Tensor o = text.attend(q, KeyPool::from_dense(key));
  Tensor want = text.cross.wo(text.cross.wv(key));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t d = 0; d < 8; ++d) CHECK(o.at({b, c, d}) == doctest::Approx(want.at({b, 0, d})));

  Tensor y = text.forward(q, KeyPool::from_dense(random_constant({2, 4, 8}, rng)));
  CHECK(y.shape() == Shape{2, 5, 3});

  // permuting the pool leaves the output unchanged
  Tensor keys = random_constant({1, 5, 8}, rng);
  Tensor shuffled = concat({narrow(keys, 1, 3, 2), narrow(keys, 1, 0, 3)}, 1);
  Tensor q1 = narrow(q, 0, 0, 1);
  CHECK(max_abs_diff(text.forward(q1, KeyPool::from_dense(keys)),
                     text.forward(q1, KeyPool::from_dense(shuffled))) < 1e-9);

  // zero pool and zero biases give exactly zero
  zero_all(store, "text.", ".bias");
  Tensor zero = text.forward(q, KeyPool::from_dense(Tensor::zeros({2, 3, 8})));
  for (double v : zero.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(text.attend(Tensor::zeros({2, 3, 6}), KeyPool::from_dense(key)), ConfigError);
  CHECK_THROWS_AS(text.attend(q, KeyPool::from_dense(Tensor::zeros({2, 1, 6}))), ConfigError);
}

TEST_CASE("text gradient reaches alignment, not the provider") {
  auto vocab = base_vocabulary({"rising load"}, 10);
  auto provider = EmbeddingProvider::random(vocab, 6, 2, 16);
  ParamStore store(12);
  Linear align(store, "align", 6, 8);
  TextualLearner text(store, 8, 2, 4);
  const auto before = provider.checksum();
  Tensor q = random_leaf({2, 3, 8}, store.rng());
  KeyPool pool = align_tokens(provider, align, {{"rising", "load", "."}, {"load"}});
  backward(sum(square(text.forward(q, pool))));
  CHECK(align.weight.has_grad());
  CHECK_FALSE(provider.table().has_grad());
  CHECK(provider.checksum() == before);
}

TEST_CASE("symbolic learner") {
  ParamStore store(13);
  SymbolicLearner sym(store, 8, 2, 5);
  std::mt19937_64 rng(14);
  Tensor q = random_constant({2, 3, 8}, rng);
  std::array<KeyPool, 3> pools{KeyPool::from_dense(random_constant({2, 4, 8}, rng)),
                               KeyPool::from_dense(random_constant({2, 6, 8}, rng)),
                               KeyPool::from_dense(random_constant({2, 2, 8}, rng))};
  SymbolicOutput out = sym.forward(q, pools);
  for (std::size_t s = 0; s < 3; ++s) CHECK(out.mix.at({s}) == doctest::Approx(1.0 / 3.0));
  CHECK(out.y.shape() == Shape{2, 5, 3});
  for (std::size_t i = 0; i < out.y.numel(); ++i) {
    const double a = out.scales[0].data()[i], b = out.scales[1].data()[i], c = out.scales[2].data()[i];
    CHECK(out.y.data()[i] >= std::min({a, b, c}) - 1e-12);
    CHECK(out.y.data()[i] <= std::max({a, b, c}) + 1e-12);
    CHECK(out.y.data()[i] == doctest::Approx((a + b + c) / 3.0));
  }

  // mixing weights receive gradient when scales differ
  backward(sum(square(out.y)));
  double g = 0;
  for (double v : sym.omega.grad()) g += std::fabs(v);
  CHECK(g > 0);

  auto w = sym.omega.mutable_data();
  w[0] = 10, w[1] = -10, w[2] = -10;
  SymbolicOutput sat = sym.forward(q, pools);
  for (std::size_t i = 0; i < sat.y.numel(); ++i) {
    const double fine = sat.scales[0].data()[i];
    CHECK(std::fabs(sat.y.data()[i] - fine) <= 1e-3 * std::max(1.0, std::fabs(fine)));
  }
  for (double m : sat.mix.data()) CHECK(m > 0.0);
  CHECK(sum(sat.mix).item() == doctest::Approx(1.0));

  // empty symbol sequence: the head sees a zero input
  KeyPool empty;
  empty.table = Tensor::zeros({1, 8});
  empty.lengths = {0, 0};
  Tensor y0 = sym.scale_forward(1, q, empty);
  Tensor expect = sym.heads[1](Tensor::zeros({2, 3, 8}));
  CHECK(max_abs_diff(y0, expect) == 0.0);

  // tied parameters and identical pools: mixture equals any single scale
  for (const auto& p : store.params()) {
    if (p.name.rfind("sym.fine.", 0) != 0) continue;
    const std::string rest = p.name.substr(9);
    for (const char* other : {"sym.mid.", "sym.coarse."}) {
      Param* dst = store.find(other + rest);
      REQUIRE(dst != nullptr);
      auto dv = dst->tensor.mutable_data();
      std::copy(p.tensor.data().begin(), p.tensor.data().end(), dv.begin());
    }
  }
  w[0] = 0.3, w[1] = -1.2, w[2] = 2.0;
  std::array<KeyPool, 3> same{pools[0], pools[0], pools[0]};
  SymbolicOutput tied = sym.forward(q, same);
  CHECK(max_abs_diff(tied.y, tied.scales[0]) < 1e-12);
}

TEST_CASE("vat temperature") {
  CHECK(vat_lambda(0.0, 2.0) == 1.0);
  CHECK(std::fabs(vat_lambda(1.0, 2.0) - 1.462117) < 1e-5);
  double prev = 0.0;
  for (double a = -5; a <= 5; a += 0.25) {
    const double l = vat_lambda(a, 2.0);
    CHECK(l > prev);
    CHECK(l > 0.0);
    CHECK(l < 2.0);
    prev = l;
  }
  CHECK_THROWS_AS(vat_lambda(0.5, 0.0), ConfigError);
}

TEST_CASE("routing weights") {
  std::mt19937_64 rng(15);
  Tensor zero = Tensor::zeros({2, 3, 2, 3});
  std::vector<double> lam{0.2, 1.7};
  Tensor uni = route_weights(zero, lam);
  for (double v : uni.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<double> z(2 * 4 * 3 * 3);
  for (auto& v : z) v = u(rng);
  Tensor logits = Tensor::from({2, 4, 3, 3}, z);
  std::vector<std::vector<std::size_t>> argmaxes;
  for (double l : {0.1, 1.0, 2.0}) {
    Tensor w = route_weights(logits, std::vector<double>{l, l});
    std::vector<std::size_t> am;
    for (std::size_t r = 0; r < 24; ++r) {
      double s = 0;
      std::size_t best = 0;
      for (std::size_t e = 0; e < 3; ++e) {
        s += w.data()[r * 3 + e];
        if (w.data()[r * 3 + e] > w.data()[r * 3 + best]) best = e;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-6);
      am.push_back(best);
    }
    argmaxes.push_back(am);
  }
  CHECK(argmaxes[0] == argmaxes[1]);
  CHECK(argmaxes[1] == argmaxes[2]);
  Tensor flat = route_weights(logits, std::vector<double>{1e-6, 1e-6});
  for (double v : flat.data()) CHECK(std::fabs(v - 1.0 / 3.0) < 1e-5);
}

TEST_CASE("fusion") {
  std::mt19937_64 rng(16);
  Tensor a = random_constant({2, 3, 2}, rng), b = random_constant({2, 3, 2}, rng),
         c = random_constant({2, 3, 2}, rng);
  std::vector<double> onehot(2 * 3 * 2 * 3, 0.0);
  for (std::size_t r = 0; r < 12; ++r) onehot[r * 3] = 1.0;
  CHECK(max_abs_diff(fuse(Tensor::from({2, 3, 2, 3}, onehot), {a, b, c}), a) == 0.0);

  Tensor w = route_weights(random_constant({2, 3, 2, 3}, rng), std::vector<double>{1.0, 0.4});
  CHECK(max_abs_diff(fuse(w, {a, a, a}), a) < 1e-12);
  Tensor f = fuse(w, {a, b, c});
  for (std::size_t i = 0; i < 12; ++i) {
    const double want = w.data()[i * 3] * a.data()[i] + w.data()[i * 3 + 1] * b.data()[i] +
                        w.data()[i * 3 + 2] * c.data()[i];
    CHECK(std::fabs(f.data()[i] - want) <= 1e-12);
    CHECK(f.data()[i] >= std::min({a.data()[i], b.data()[i], c.data()[i]}) - 1e-12);
    CHECK(f.data()[i] <= std::max({a.data()[i], b.data()[i], c.data()[i]}) + 1e-12);
  }
  CHECK_THROWS_AS(fuse(w, {a, b}), ContractError);
  CHECK_THROWS_AS(fuse(w, {a, b, Tensor::zeros({2, 3, 1})}), ContractError);
}

TEST_CASE("router") {
  ParamStore store(17);
  VatRouter router(store, 8, 4, 3, 2.0);
  CHECK(router.bias.values() == std::vector<double>{1.0, 0.0, 0.0});
  CHECK_FALSE(store.find("vat.bias")->trainable);
  std::mt19937_64 rng(18);
  Tensor q = random_constant({2, 3, 8}, rng);
  Tensor logits = router.logits(q);
  CHECK(logits.shape() == Shape{2, 4, 3, 3});
  std::vector<double> alpha{0.0, 1.0};
  Tensor w = router.weights(q, alpha);
  Tensor want = route_weights(logits, std::vector<double>{1.0, vat_lambda(1.0, 2.0)});
  CHECK(max_abs_diff(w, want) == 0.0);

  // disabled temperature: plain softmax(Z + b)
  ParamStore s2(17);
  VatRouter plain(s2, 8, 4, 3, 2.0, false);
  Tensor wp = plain.weights(q, alpha);
  CHECK(max_abs_diff(wp, softmax(plain.logits(q), -1)) == 0.0);

  backward(sum(square(w)));
  CHECK_FALSE(router.bias.has_grad());
  CHECK(router.bias.values() == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("full model wiring") {
  auto vocab = base_vocabulary({"dataset task"}, 20);
  auto provider = std::make_shared<const EmbeddingProvider>(EmbeddingProvider::random(vocab, 6, 3, 16));
  ModelConfig cfg;
  cfg.temporal = small_temporal(2);
  StatModel model(cfg, provider, 19);
  CHECK(model.expert_names() == std::vector<std::string>{"temp", "txt", "sym"});

  std::mt19937_64 rng(20);
  ModelBatch batch;
  batch.x = random_constant({2, 24, 2}, rng);
  batch.alpha = {0.5, 1.5};
  batch.prompts = {{"dataset", "task", "."}, {"task"}};
  batch.symbols[0] = {{"A", "B", "|", "A"}, {"B"}};
  batch.symbols[1] = {{"A", "|", "B"}, {}};
  batch.symbols[2] = {{"A"}, {"A"}};

  const auto checksum = provider->checksum();
  ModelOutput out = model.forward(batch, true);
  CHECK(out.y.shape() == Shape{2, 6, 2});
  CHECK(out.weights.shape() == Shape{2, 6, 2, 3});
  CHECK(model.bank().fill() == 2);
  Tensor again = model.forward(batch, false).y;
  CHECK(model.bank().fill() == 2);
  for (double v : again.data()) CHECK(std::isfinite(v));

  // one alignment parameter set, reached from both branches
  std::size_t align_params = 0;
  for (const auto& p : model.params().params())
    if (p.name.rfind("align.", 0) == 0) ++align_params;
  CHECK(align_params == 2);

  model.params().zero_grad();
  backward(sum(model.forward(batch, false).y_txt));
  CHECK(model.align.weight.has_grad());
  std::vector<double> from_text(model.align.weight.grad().begin(), model.align.weight.grad().end());
  model.params().zero_grad();
  backward(sum(model.forward(batch, false).y_sym));
  double g = 0;
  for (double v : model.align.weight.grad()) g += std::fabs(v);
  CHECK(g > 0);
  CHECK(std::any_of(from_text.begin(), from_text.end(), [](double v) { return v != 0.0; }));
  CHECK(provider->checksum() == checksum);
  CHECK_FALSE(provider->table().has_grad());

  ModelConfig no_text = cfg;
  no_text.use_text = false;
  StatModel m2(no_text, provider, 19);
  CHECK(m2.expert_names() == std::vector<std::string>{"temp", "sym"});
  CHECK(m2.router.bias.values() == std::vector<double>{1.0, 0.0});
  CHECK(m2.forward(batch, false).weights.shape() == Shape{2, 6, 2, 2});
}

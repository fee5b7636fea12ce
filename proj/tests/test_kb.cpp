#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sctts/corpus.hpp"
#include "sctts/error.hpp"
#include "sctts/kb.hpp"
#include "sctts/numkit/kernels.hpp"
#include "sctts/numkit/optim.hpp"
#include "sctts/train.hpp"
#include "sctts/verify.hpp"
#include "test_util.hpp"

using namespace sctts;

namespace {

KbConfig small_config(std::size_t d, std::size_t n, std::size_t m) {
  KbConfig c;
  c.d_w = d;
  c.stages = n;
  c.codes = m;
  c.hidden = 6;
  c.stage_hidden = 5;
  return c;
}

void set_codebook(KbModel& kb, std::size_t stage, const Mat64& c) {
  kb.tx.codebooks[stage] = c;
  kb.rx.codebooks[stage] = c;
}

Mat64 random_codebook(SeededRng& rng, std::size_t m, std::size_t d) {
  Mat64 c(m, d);
  for (double& v : c.flat()) v = rng.normal();
  return c;
}

double norm(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

std::size_t brute_nearest(std::span<const double> z, const Mat64& c) {
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t m = 0; m < c.rows(); ++m) {
    double d = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) d += (c(m, j) - z[j]) * (c(m, j) - z[j]);
    if (d < bd) {
      bd = d;
      best = m;
    }
  }
  return best;
}

Corpus& tiny_corpus() {
  static Corpus c = generate_corpus(7, CorpusDims{}, 3, 4);
  return c;
}

Stage1Config tiny_stage1() {
  Stage1Config cfg;
  cfg.kb = small_config(64, 2, 8);
  cfg.kb.hidden = 16;
  cfg.kb.stage_hidden = 8;
  cfg.steps = 30;
  cfg.batch = 4;
  cfg.dead_code_steps = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("kb") {

TEST_CASE("nearest code") {
  Mat64 c(2, 2);
  c(1, 0) = 1.0;
  c(1, 1) = 1.0;
  const NearestCode n = nearest_code(Vec64{0.1, 0.2}, c);
  CHECK(n.index == 0);
  CHECK(n.sq_distance == doctest::Approx(0.05));

  Mat64 tie(3, 1);
  tie(0, 0) = 5.0;
  tie(1, 0) = -1.0;
  tie(2, 0) = 1.0;
  CHECK(nearest_code(Vec64{0.0}, tie).index == 1);

  CHECK_THROWS_AS(nearest_code(Vec64{0.0}, Mat64(0, 1)), ContractError);
  CHECK_THROWS_AS(nearest_code(Vec64{0.0, 1.0}, tie), ContractError);

  const CheckResult r = check_nearest_code(5, 2000);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("identity networks pass codes straight through") {
  KbModel kb = KbModel::identity(small_config(3, 1, 4));
  const Vec64 w{0.5, -1.0, 2.0};
  CHECK(kb_source(kb.tx, w) == w);

  Mat64 c(4, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    c(0, j) = 10.0;
    c(2, j) = w[j];
  }
  set_codebook(kb, 0, c);
  const KbEncoding enc = rvq_encode(kb.tx, w);
  REQUIRE(enc.indices.size() == 1);
  CHECK(enc.indices[0] == 2);
  for (double v : enc.inputs.back()) CHECK(v == 0.0);
  CHECK(rvq_decode(kb.rx, enc.indices) == w);
  const std::vector<std::uint32_t> idx{0};
  CHECK(rvq_decode(kb.rx, idx) == Vec64{10, 10, 10});
  CHECK(rvq_decode(kb.rx, idx) == rvq_decode(kb.rx, idx));
}

TEST_CASE("two-stage encoding matches a greedy brute-force search") {
  SeededRng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    KbModel kb = KbModel::identity(small_config(4, 2, 8));
    for (std::size_t s = 0; s < 2; ++s) {
      Mat64 c = random_codebook(rng, 8, 4);
      for (std::size_t j = 0; j < 4; ++j) c(5, j) = 0.0;  // zero code in every stage
      set_codebook(kb, s, c);
    }
    Vec64 w(4);
    for (double& v : w) v = 2.0 * rng.normal();

    const KbEncoding enc = rvq_encode(kb.tx, w);
    const std::size_t m1 = brute_nearest(w, kb.tx.codebooks[0]);
    Vec64 r(4);
    for (std::size_t j = 0; j < 4; ++j) r[j] = w[j] - kb.tx.codebooks[0](m1, j);
    const std::size_t m2 = brute_nearest(r, kb.tx.codebooks[1]);
    CHECK(enc.indices[0] == m1);
    CHECK(enc.indices[1] == m2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(norm(enc.inputs[i + 1]) <= norm(enc.pre_quant[i]) + 1e-12);
      CHECK(enc.codes[i] == Vec64(kb.tx.codebooks[i].row(enc.indices[i])));
    }
  }
}

TEST_CASE("permuting codebook rows permutes indices only") {
  SeededRng rng(8);
  KbModel kb = KbModel::random(small_config(4, 2, 8), rng.child("kb"));
  for (std::size_t s = 0; s < 2; ++s) set_codebook(kb, s, random_codebook(rng, 8, 4));
  KbModel perm = kb;
  std::vector<std::size_t> p(8);
  std::iota(p.begin(), p.end(), 0);
  std::reverse(p.begin(), p.end());
  std::swap(p[1], p[4]);
  for (std::size_t s = 0; s < 2; ++s) {
    Mat64 c(8, 4);
    for (std::size_t m = 0; m < 8; ++m)
      for (std::size_t j = 0; j < 4; ++j) c(p[m], j) = kb.tx.codebooks[s](m, j);
    set_codebook(perm, s, c);
  }
  for (int k = 0; k < 50; ++k) {
    Vec64 w(4);
    for (double& v : w) v = rng.normal();
    const KbEncoding a = rvq_encode(kb.tx, w);
    const KbEncoding b = rvq_encode(perm.tx, w);
    for (std::size_t s = 0; s < 2; ++s) {
      CHECK(b.indices[s] == p[a.indices[s]]);
      CHECK(a.codes[s] == b.codes[s]);
      CHECK(a.inputs[s + 1] == b.inputs[s + 1]);
    }
  }
}

TEST_CASE("decode rejects indices the knowledge base cannot serve") {
  const KbModel kb = KbModel::random(small_config(4, 2, 8), SeededRng(1));
  const std::vector<std::uint32_t> out_of_range{0, 8};
  const std::vector<std::uint32_t> too_few{0};
  CHECK_THROWS_AS(rvq_decode(kb.rx, out_of_range), DecodeError);
  CHECK_THROWS_AS(rvq_decode(kb.rx, too_few), DecodeError);
}

TEST_CASE("loss value") {
  KbEncoding enc;
  enc.pre_quant = {Vec64{1.0, 1.0}};
  enc.codes = {Vec64{0.0, 0.0}};
  const Vec64 w{0.0, 0.0};
  const Vec64 w_rec{1.0, 0.0};
  // recon 1, embed 2, commit 2.
  const KbLoss l = kb_loss(w, w_rec, enc, KbWeights{});
  CHECK(l.recon == 1.0);
  CHECK(l.embed == 2.0);
  CHECK(l.commit == 2.0);
  CHECK(l.total == doctest::Approx(1.0 + 2.0 + 0.25 * 2.0));
  CHECK(kb_loss(w, w_rec, enc, KbWeights{2.0, 0.5, 3.0}).total == doctest::Approx(9.0));

  KbEncoding exact;
  exact.pre_quant = {Vec64{0.3, -0.2}};
  exact.codes = {Vec64{0.3, -0.2}};
  CHECK(kb_loss(w, w, exact, KbWeights{}).total == 0.0);
  CHECK_THROWS_AS(kb_loss(w, w, exact, KbWeights{-1.0, 1.0, 1.0}), ContractError);
}

TEST_CASE("gradient routing") {
  SeededRng rng(12);
  KbModel kb = KbModel::random(small_config(5, 2, 6), rng.child("kb"));
  for (std::size_t s = 0; s < 2; ++s) set_codebook(kb, s, random_codebook(rng, 6, 5));
  Vec64 w(5);
  for (double& v : w) v = rng.normal();
  auto all_zero = [](const auto& blocks) {
    for (const auto& b : blocks)
      for (double v : b) if (v != 0.0) return false;
    return true;
  };
  auto zero_vec = [](const Vec64& v) { return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }); };

  SUBCASE("embedding term moves only codebooks") {
    KbGrads g = KbGrads::zeros_like(kb);
    kb_loss_and_grad(kb, w, KbWeights{0.0, 1.0, 0.0}, g);
    CHECK(zero_vec(g.source));
    for (const auto& e : g.encoders) CHECK(zero_vec(e));
    for (const auto& d : g.decoders) CHECK(zero_vec(d));
    CHECK(zero_vec(g.reconstruct));
    std::vector<std::span<const double>> cb;
    for (const auto& c : g.codebooks) cb.push_back(c.flat());
    CHECK_FALSE(all_zero(cb));
  }
  SUBCASE("commitment term never touches codebooks") {
    KbGrads g = KbGrads::zeros_like(kb);
    kb_loss_and_grad(kb, w, KbWeights{0.0, 0.0, 1.0}, g);
    for (const auto& c : g.codebooks) for (double v : c.flat()) CHECK(v == 0.0);
    CHECK_FALSE(zero_vec(g.encoders[0]));
    CHECK_FALSE(zero_vec(g.source));
    for (const auto& d : g.decoders) CHECK(zero_vec(d));
  }
  SUBCASE("reconstruction reaches the source network through the quantizer") {
    for (int k = 0; k < 20; ++k) {
      Vec64 x(5);
      for (double& v : x) v = rng.normal();
      KbGrads g = KbGrads::zeros_like(kb);
      kb_loss_and_grad(kb, x, KbWeights{1.0, 0.0, 0.0}, g);
      CHECK(l2_norm(g.source.span()) > 0.0);
      CHECK(l2_norm(g.encoders[0].span()) > 0.0);
    }
  }
  SUBCASE("finite differences") {
    const CheckResult stage = check_grad_residual_stage(3, 10);
    INFO(stage.detail);
    CHECK(stage.passed);
    const CheckResult full = check_grad_kb(3, 10);
    INFO(full.detail);
    CHECK(full.passed);
  }
}

TEST_CASE("serialization") {
  SeededRng rng(2);
  KbModel kb = KbModel::random(small_config(4, 3, 5), rng.child("kb"));
  for (std::size_t s = 0; s < 3; ++s) set_codebook(kb, s, random_codebook(rng, 5, 4));
  testutil::TempDir dir("kb");
  save_kb(kb, dir / "kb.sckb");
  CHECK(load_kb(dir / "kb.sckb") == kb);
  auto bytes = testutil::read_bytes(dir / "kb.sckb");
  bytes[1] = '?';
  testutil::write_bytes(dir / "bad.sckb", bytes);
  CHECK_THROWS_AS(load_kb(dir / "bad.sckb"), FormatError);
}

TEST_CASE("stage-one training keeps both codebook copies identical") {
  const Stage1Config cfg = tiny_stage1();
  const Stage1Result a = train_stage1(tiny_corpus(), cfg);
  CHECK(a.kb.codebooks_in_sync());
  CHECK(a.loss_history.size() == cfg.steps);
  for (double v : a.loss_history) CHECK(std::isfinite(v));
  const Stage1Result b = train_stage1(tiny_corpus(), cfg);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.kb == b.kb);
  CHECK(kb_relative_mse(a.kb, tiny_corpus()) == kb_relative_mse(b.kb, tiny_corpus()));
}

TEST_CASE("codebook seeding keeps synchrony") {
  KbModel kb = KbModel::random(small_config(64, 2, 8), SeededRng(6));
  std::vector<Vec64> samples;
  for (const auto& u : tiny_corpus().utterances) samples.push_back(u.w);
  seed_codebooks(kb, samples, SeededRng(1));
  CHECK(kb.codebooks_in_sync());
  for (const auto& c : kb.tx.codebooks) CHECK(all_finite(c.flat()));
}

}  // TEST_SUITE

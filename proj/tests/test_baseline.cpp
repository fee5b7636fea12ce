#include <doctest.h>

#include <cmath>

#include "sctts/baseline.hpp"
#include "sctts/error.hpp"
#include "sctts/verify.hpp"

using namespace sctts;

namespace {

const LdpcCode& default_code() {
  static const LdpcCode code = ldpc_build(BaselineConfig{}.code_seed, 128, 64);
  return code;
}

Bits random_bits(SeededRng& rng, std::size_t n) {
  Bits b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(rng.below(2));
  return b;
}

}  // namespace

TEST_SUITE("baseline") {

TEST_CASE("pcm encode") {
  const PcmConfig cfg;
  const Bits b = pcm_encode(Vec64{0.5}, cfg);
  CHECK(b == Bits{1, 1, 0, 0, 0, 0, 0, 0});  // 192
  CHECK(pcm_encode(Vec64{-1.0}, cfg) == Bits(8, 0));
  CHECK(pcm_encode(Vec64{1.0}, cfg) == Bits(8, 1));
  CHECK(pcm_encode(Vec64{-3.0}, cfg) == Bits(8, 0));
}

TEST_CASE("pcm decode") {
  const PcmConfig cfg;
  const Bits q192{1, 1, 0, 0, 0, 0, 0, 0};
  CHECK(pcm_decode(q192, cfg)[0] == 0.50390625);
  CHECK(pcm_decode(Bits(8, 0), cfg)[0] == -0.99609375);
  CHECK_THROWS_AS(pcm_decode(Bits(7, 0), cfg), DecodeError);

  Vec64 sweep(10000);
  for (std::size_t i = 0; i < sweep.size(); ++i) sweep[i] = -1.0 + 2.0 * i / sweep.size();
  const Vec64 back = pcm_decode(pcm_encode(sweep, cfg), cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < sweep.size(); ++i) worst = std::max(worst, std::abs(back[i] - sweep[i]));
  CHECK(worst <= 1.0 / 256.0);
}

TEST_CASE("ldpc construction") {
  const LdpcCode& code = default_code();
  CHECK(code.n() == 128);
  CHECK(code.k() == 64);
  for (const auto& checks : code.var_checks()) CHECK(checks.size() == 3);
  std::size_t edges = 0;
  for (const auto& vars : code.check_vars()) edges += vars.size();
  CHECK(edges == 3 * 128);
  CHECK(code.info_positions().size() == 64);
}

TEST_CASE("ldpc encoder produces codewords") {
  const LdpcCode& code = default_code();
  CHECK(code.encode(Bits(64, 0)) == Bits(128, 0));
  SeededRng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const Bits info = random_bits(rng, 64);
    const Bits word = code.encode(info);
    CHECK(code.is_codeword(word));
    CHECK(code.extract_info(word) == info);
  }
  Bits bad = code.encode(random_bits(rng, 64));
  bad[5] ^= 1;
  CHECK_FALSE(code.is_codeword(bad));
}

TEST_CASE("belief propagation") {
  const LdpcCode& code = default_code();
  SeededRng rng(2);
  const Bits word = code.encode(random_bits(rng, 64));
  Vec64 llr(128);
  for (std::size_t i = 0; i < 128; ++i) llr[i] = word[i] ? -20.0 : 20.0;
  for (auto alg : {BpAlgorithm::SumProduct, BpAlgorithm::MinSum}) {
    const LdpcDecodeResult r = ldpc_decode(llr, code, 50, alg);
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    CHECK(r.word == word);
  }

  // One confidently wrong bit among strong correct ones (6 dB operating point).
  const double sigma2 = 1.0 / (2.0 * 0.5 * std::pow(10.0, 0.6));
  for (std::size_t flip = 0; flip < 128; flip += 7) {
    Vec64 l(128);
    for (std::size_t i = 0; i < 128; ++i) l[i] = (word[i] ? -1.0 : 1.0) * 2.0 / sigma2;
    l[flip] = -l[flip];
    const LdpcDecodeResult r = ldpc_decode(l, code);
    CHECK(r.converged);
    CHECK(r.word == word);
  }
}

TEST_CASE("bpsk") {
  const Bits b{0, 1};
  CHECK(bpsk_modulate(b) == Vec64{1.0, -1.0});
  CHECK(bpsk_llr(Vec64{1.0}, 0.5)[0] == 4.0);
  const Vec64 llr = bpsk_llr(bpsk_modulate(Bits{1, 0, 0, 1}), 0.1);
  CHECK(llr[0] < 0.0);
  CHECK(llr[1] > 0.0);
  CHECK(llr[3] < 0.0);
}

TEST_CASE("budget plan") {
  const BaselineCodec codec(BaselineConfig{});
  const BaselinePlan p = codec.plan(1280, 32, 16, 64);
  CHECK(p.feasible);
  CHECK(p.t_samples == 32);
  CHECK(p.r_samples == 16);
  CHECK(p.w_samples == 32);
  CHECK(p.source_bits == 640);
  CHECK(p.codewords == 10);
  CHECK(p.channel_bits == 1280);

  CHECK_FALSE(codec.plan(256, 32, 16, 64).feasible);

  for (std::size_t budget = 512; budget <= 4096; budget += 128) {
    const BaselinePlan q = codec.plan(budget, 32, 16, 64);
    CHECK(q.channel_bits <= budget);
    CHECK(q.channel_bits == q.codewords * 128);
    CHECK(q.codewords == (q.source_bits + 63) / 64);
  }
}

TEST_CASE("noiseless transmission round trips up to the pcm step") {
  const BaselineCodec codec(BaselineConfig{});
  SeededRng rng(3);
  BaselineSource src{Vec64(32), Vec64(16), Vec64(64)};
  for (double& v : src.t) v = rng.uniform();
  for (double& v : src.r) v = rng.uniform(-1.0, 1.0);
  for (double& v : src.w) v = rng.uniform(-1.0, 1.0);
  for (auto model : {ChannelModel::Awgn, ChannelModel::Rayleigh}) {
    ChannelRealization ch = draw_realization(model, 60.0, rng);
    ch.sigma2 = 1e-9;
    const BaselineReceived got = codec.transmit(src, 1u << 16, ch, rng);
    CHECK_FALSE(got.outage);
    CHECK(got.codewords_failed == 0);
    for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(got.fields.t[i] - src.t[i]) <= 1.0 / 256);
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(got.fields.w[i] - src.w[i]) <= 1.0 / 256);
  }
}

TEST_CASE("coding gain") {
  const CheckResult r = check_ldpc_gain(4, NoiseConvention::PerComplex, 20000);
  INFO(r.detail);
  CHECK(r.passed);
}

}  // TEST_SUITE

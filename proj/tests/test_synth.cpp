#include <doctest.h>

#include <cmath>

#include "sctts/error.hpp"
#include "sctts/synth.hpp"
#include "sctts/verify.hpp"
#include "test_util.hpp"

using namespace sctts;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= xs.size();
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= xs.size() - 1;
  return m;
}

// Exact marginal score of N(m, v) data under the schedule.
ScoreFn gaussian_score(double m, double v, const DiffusionSchedule& sched) {
  return [=](double t, std::span<const double> s, std::span<double> out) {
    const double c = sched.mean_coef(t);
    const double var = c * c * v + sched.sigma(t);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = -(s[i] - c * m) / var;
  };
}

SynthConfig small_synth() {
  SynthConfig c;
  c.vocab = 12;
  c.d_w = 6;
  c.d_r = 4;
  c.d_ss = 5;
  c.d_h = 7;
  c.text_hidden = 8;
  c.pitch_hidden = 6;
  c.score_hidden = 9;
  c.d_audio = 8;
  return c;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("schedule") {
  const DiffusionSchedule s;
  CHECK(s.integral(0.0) == 0.0);
  CHECK(s.mean_coef(0.0) == 1.0);
  CHECK(s.sigma(0.0) == 0.0);
  CHECK(s.integral(1.0) == doctest::Approx(0.05 + 0.5 * 19.95));
  DiffusionSchedule flat{4.0, 4.0};
  CHECK(flat.integral(0.5) == doctest::Approx(2.0));
  CHECK(flat.mean_coef(0.5) == doctest::Approx(std::exp(-1.0)));
  CHECK(flat.sigma(0.5) == doctest::Approx(1.0 - std::exp(-2.0)));
}

TEST_CASE("forward diffusion") {
  SeededRng rng(1);
  const Vec64 s0{0.3, -2.0, 1.0};
  const DiffusionSchedule s;
  CHECK(forward_diffuse(s0, 0.0, s, rng) == s0);
  const DiffusionSchedule none{0.0, 0.0};
  for (double t : {0.1, 0.5, 1.0}) CHECK(forward_diffuse(s0, t, none, rng) == s0);

  const CheckResult r = check_forward_moments(3, 10000);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("terminal distribution is close to standard normal") {
  const DiffusionSchedule s;
  REQUIRE(s.integral(s.t_max) >= 10.0);
  SeededRng rng(4);
  for (double start : {-5.0, 0.0, 5.0}) {
    std::vector<double> xs;
    for (int k = 0; k < 20000; ++k) xs.push_back(forward_diffuse(Vec64{start}, s.t_max, s, rng)[0]);
    const Moments m = moments(xs);
    CHECK(std::abs(m.mean) < 0.05);
    CHECK(std::abs(m.var - 1.0) < 0.05);
  }
}

TEST_CASE("score target") {
  const DiffusionSchedule s;
  const Vec64 s0{1.0, -0.5};
  Vec64 rho(2);
  for (std::size_t i = 0; i < 2; ++i) rho[i] = s.mean_coef(0.4) * s0[i];
  for (double v : score_target(s0, rho, 0.4, s)) CHECK(v == 0.0);

  // B = ln 2 gives a mean coefficient of 1/sqrt(2) and sigma 0.5.
  const DiffusionSchedule ln2{std::log(2.0), std::log(2.0)};
  const Vec64 g = score_target(Vec64{std::sqrt(2.0)}, Vec64{0.0}, 1.0, ln2);
  CHECK(g[0] == doctest::Approx(2.0));

  // Same as the gradient of log N(s; rho, sigma I).
  const Vec64 st{0.7, 0.1};
  const Vec64 tgt = score_target(s0, st, 0.4, s);
  for (std::size_t i = 0; i < 2; ++i) {
    const double sig = s.sigma(0.4);
    auto logp = [&](double x) { return -0.5 * (x - rho[i]) * (x - rho[i]) / sig; };
    const double fd = (logp(st[i] + 1e-6) - logp(st[i] - 1e-6)) / 2e-6;
    CHECK(tgt[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK_THROWS_AS(score_target(s0, s0, 0.0, s), ContractError);
}

TEST_CASE("probability-flow solver") {
  SUBCASE("no dynamics without noise schedule") {
    const DiffusionSchedule none{0.0, 0.0};
    const ScoreFn score = [](double, std::span<const double> s, std::span<double> out) {
      for (std::size_t i = 0; i < s.size(); ++i) out[i] = -s[i];
    };
    const Vec64 sT{0.4, -1.3};
    CHECK(backward_solve(sT, score, none, 100) == sT);
  }
  SUBCASE("step count convergence") {
    const DiffusionSchedule s;
    const ScoreFn score = gaussian_score(1.5, 0.25, s);
    SeededRng rng(6);
    double m500 = 0.0, m1000 = 0.0;
    const int paths = 2000;
    for (int k = 0; k < paths; ++k) {
      const Vec64 start{rng.normal()};
      m500 += backward_solve(start, score, s, 500)[0] / paths;
      m1000 += backward_solve(start, score, s, 1000)[0] / paths;
    }
    CHECK(std::abs(m500 - m1000) < 1e-2);
    CHECK(m1000 == doctest::Approx(1.5).epsilon(0.02));
  }
  SUBCASE("gaussian oracle") {
    const CheckResult r = check_backward_oracle(2, 10000, 1000);
    INFO(r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("duration expansion") {
  Mat64 h(2, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    h(0, j) = 1.0 + j;
    h(1, j) = -1.0 - j;
  }
  const std::vector<std::uint32_t> d{2, 1};
  const Mat64 f = expand_frames(h, d);
  REQUIRE(f.rows() == 3);
  CHECK(Vec64(f.row(0)) == Vec64(h.row(0)));
  CHECK(Vec64(f.row(1)) == Vec64(h.row(0)));
  CHECK(Vec64(f.row(2)) == Vec64(h.row(1)));
  const std::vector<std::uint32_t> ones{1, 1};
  CHECK(expand_frames(h, ones) == h);

  const Vec64 d1{1.2, 2.5, 3.49, 0.3};
  CHECK(round_durations(d1) == std::vector<std::uint32_t>{1, 3, 3, 1});
}

TEST_CASE("token id decoding") {
  // V = 5: id k embeds to k / 4.
  const Vec64 t{0.25, 0.75, 0.0, 1.0, 0.0};
  CHECK(decode_token_ids(t, 5) == std::vector<std::uint32_t>{1, 3});
  CHECK(decode_token_ids(t, 5, 4) == std::vector<std::uint32_t>{1, 3, 1, 4});
  CHECK(token_id_prefix(Vec64{0.26, 1.6, -0.2}, 5, 3) == std::vector<std::uint32_t>{1, 4, 0});
  const Vec64 lead_zero{0.0, 0.5};
  const auto ids = decode_token_ids(lead_zero, 5);
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] == 1);
  CHECK(ids[1] == 2);
}

TEST_CASE("prior loss") {
  const Mat64 z(2, 2);
  const Vec64 a{3.0, 0.0}, b{0.0, 4.0}, p{0.1, 0.2};
  const PriorLoss l = prior_loss(a, b, p, p, z, z);
  CHECK(l.duration == 5.0);
  CHECK(l.pitch == 0.0);
  CHECK(l.feature == 0.0);
  CHECK(l.total() == 5.0);
  CHECK(prior_loss(a, a, p, p, z, z).total() == 0.0);
}

TEST_CASE("prior encoder") {
  const Synthesizer s = Synthesizer::random(small_synth(), SeededRng(2));
  SeededRng rng(3);
  const Vec64 w{0.1, 0.2, -0.3, 0.4, 0.0, 1.0};
  const Vec64 r{0.5, -0.5, 0.25, 0.0};
  for (int k = 0; k < 30; ++k) {
    std::vector<std::uint32_t> ids(1 + rng.below(6));
    for (auto& id : ids) id = 1 + static_cast<std::uint32_t>(rng.below(11));
    const PriorOutputs a = s.prior(ids, w, r);
    for (double d : a.d1) {
      CHECK(d > 1.0);
      CHECK(d < 4.0);
    }
    std::size_t total = 0;
    for (auto d : round_durations(a.d1)) total += d;
    CHECK(a.mu.rows() == total);
    CHECK(a.p1.size() == total);
    CHECK(s.prior(ids, w, r).mu == a.mu);

    std::vector<std::uint32_t> d0(ids.size());
    std::size_t frames = 0;
    for (auto& d : d0) frames += (d = 1 + static_cast<std::uint32_t>(rng.below(4)));
    const PriorOutputs forced = s.prior(ids, w, r, d0);
    CHECK(forced.expansion == d0);
    CHECK(forced.mu.rows() == frames);
    CHECK(forced.h_f.rows() == frames);
  }
}

TEST_CASE("trained-module gradients") {
  for (auto m : {Stage2Module::Prior, Stage2Module::Score}) {
    const CheckResult r = check_grad_stage2(m, 4, 4);
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("diffusion loss is non-negative") {
  const Synthesizer s = Synthesizer::random(small_synth(), SeededRng(5));
  SeededRng rng(6);
  const Vec64 w(6), r(4);
  for (int k = 0; k < 20; ++k) {
    Mat64 s0(3, 5), mu(3, 5);
    for (double& v : s0.flat()) v = rng.normal();
    for (double& v : mu.flat()) v = rng.normal();
    const DiffusionSample d = draw_diffusion_sample(3, 5, s.config().schedule, rng);
    CHECK(d.t >= s.config().schedule.t_min);
    CHECK(d.t <= s.config().schedule.t_max);
    const DiffusionEval e = diffusion_loss(s, s0, mu, w, r, d);
    CHECK(e.loss >= 0.0);
    CHECK(std::isfinite(e.loss));
  }
}

TEST_CASE("vocoder") {
  const LinearVocoder v(5, 8, 11);
  SeededRng rng(1);
  Mat64 s(4, 5);
  for (double& x : s.flat()) x = rng.normal();
  const Mat64 back = v.analyze(v.vocode(s));
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(back.flat()[i] - s.flat()[i]) < 1e-9);
  const Mat64 silent = v.vocode(Mat64(2, 5));
  for (double x : silent.flat()) CHECK(x == 0.0);
  CHECK(LinearVocoder(5, 8, 11).matrix() == v.matrix());
}

TEST_CASE("synthesizer file round trip") {
  SynthConfig cfg = small_synth();
  cfg.score_context = 2;
  const Synthesizer s = Synthesizer::random(cfg, SeededRng(9));
  testutil::TempDir dir("synth");
  save_synth(s, dir / "s.scsy");
  const Synthesizer back = load_synth(dir / "s.scsy");
  CHECK(back == s);
  CHECK(back.config().score_context == 2);
  auto bytes = testutil::read_bytes(dir / "s.scsy");
  bytes[2] ^= 0x40;
  testutil::write_bytes(dir / "bad.scsy", bytes);
  CHECK_THROWS_AS(load_synth(dir / "bad.scsy"), FormatError);
}

}  // TEST_SUITE

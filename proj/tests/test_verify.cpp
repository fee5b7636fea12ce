#include <doctest.h>

#include <cmath>
#include <set>

#include "sctts/numkit/mlp.hpp"
#include "sctts/verify.hpp"

using namespace sctts;

TEST_SUITE("verify") {

TEST_CASE("check names are unique") {
  VerifyOptions o;
  const auto quick = check_names(o);
  CHECK(std::set<std::string>(quick.begin(), quick.end()).size() == quick.size());
  o.include_training = true;
  const auto full = check_names(o);
  CHECK(full.size() == quick.size() + 1);
  CHECK(full.back() == "kb-fidelity");
}

TEST_CASE("relative error") {
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(1.0, 0.5) == 0.5);
  CHECK(relative_error(-2.0, 2.0) == 2.0);
}

TEST_CASE("directional differences match a known gradient and restore parameters") {
  Vec64 p{1.0, -2.0, 0.5};
  const Vec64 before = p;
  const auto loss = [&] { return p[0] * p[0] + 3.0 * p[1] + std::sin(p[2]); };
  const Vec64 dir{0.3, -0.1, 0.7};
  const double fd = directional_fd(loss, {p.span()}, {dir});
  const double exact = 2.0 * 1.0 * 0.3 + 3.0 * -0.1 + std::cos(0.5) * 0.7;
  CHECK(fd == doctest::Approx(exact).epsilon(1e-8));
  CHECK(p == before);
}

TEST_CASE("the gradient comparison notices a wrong gradient") {
  const Mlp net = Mlp::random({4, 5, 3}, {Activation::Tanh, Activation::Identity}, SeededRng(3));
  Mlp probe = net;
  const Vec64 x{0.2, -0.4, 0.9, 0.1};
  auto loss = [&] {
    const Vec64 y = probe.apply(x);
    double s = 0.0;
    for (double v : y) s += 0.5 * v * v;
    return s;
  };
  MlpTape tape;
  const Vec64 y = net.forward(x, tape);
  Vec64 g(net.param_count());
  net.backward(tape, y.span(), g.span());
  g[2] *= 1.01;  // a one-percent slip in one entry
  Vec64 dir(net.param_count());
  dir[2] = 1.0;
  const double fd = directional_fd(loss, {probe.params()}, {dir});
  CHECK(relative_error(fd, g[2]) > kGradTolerance);
}

TEST_CASE("trend tolerance") {
  const std::vector<double> se{0.01, 0.01, 0.01, 0.01};
  std::string why;
  CHECK(trend_holds(std::vector<double>{0.9, 0.7, 0.5, 0.2}, se, false));
  CHECK(trend_holds(std::vector<double>{0.2, 0.5, 0.7, 0.9}, se, true));
  // One small reversal within the difference's standard error.
  CHECK(trend_holds(std::vector<double>{0.9, 0.7, 0.71, 0.2}, se, false));
  CHECK_FALSE(trend_holds(std::vector<double>{0.9, 0.7, 0.8, 0.2}, se, false, &why));
  CHECK_FALSE(why.empty());
  // Two reversals are one too many.
  CHECK_FALSE(trend_holds(std::vector<double>{0.9, 0.91, 0.5, 0.51}, se, false));
}

TEST_CASE("injected noise fault is caught") {
  VerifyOptions o;
  o.noise = NoiseConvention::PerReal;
  o.grad_instances = 2;
  std::set<std::string> failed;
  for (const auto& r : run_checks(o)) {
    if (!r.passed) failed.insert(r.name);
  }
  CHECK(failed == std::set<std::string>{"channel-calibration", "ldpc-coding-gain"});
}

TEST_CASE("clean suite passes") {
  VerifyOptions o;
  o.grad_instances = 3;
  std::size_t seen = 0;
  const auto results = run_checks(o, [&](const CheckResult&) { ++seen; });
  CHECK(seen == results.size());
  CHECK(results.size() == check_names(o).size());
  for (const auto& r : results) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
    CHECK(r.seconds >= 0.0);
  }
}

}  // TEST_SUITE

#pragma once

// Self-checks run by `sctts verify` and by the acceptance binary. Each check
// compares the implementation with an oracle that does not share its code
// path: finite differences, brute force, closed forms or Monte Carlo.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sctts/corpus.hpp"
#include "sctts/link.hpp"
#include "sctts/train.hpp"

namespace sctts {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  // Noise convention handed to every channel the checks drive. PerReal is
  // the deliberate fault used to show the calibration checks can fail.
  NoiseConvention noise = NoiseConvention::PerComplex;
  std::size_t grad_instances = 20;
  bool include_training = false;  // adds the knowledge-base fidelity check
};

// ---------------------------------------------------------------- gradients

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

// Central difference of `loss` along `dir` over the parameter blocks, which
// are restored afterwards.
double directional_fd(const std::function<double()>& loss,
                      const std::vector<std::span<double>>& params,
                      const std::vector<Vec64>& dir, double h = kFdStep);

// |a - b| / max(|a|, |b|), and 0 when both vanish.
double relative_error(double a, double b);

CheckResult check_grad_mlp(std::uint64_t seed, std::size_t instances);
CheckResult check_grad_skip_mlp(std::uint64_t seed, std::size_t instances);
CheckResult check_grad_residual_stage(std::uint64_t seed, std::size_t instances);

// Straight-through and stop-gradient terms make the knowledge-base gradient
// the exact gradient of a surrogate: the selected indices are fixed and every
// ng[.] factor is held at its base-point value. The oracle differentiates that
// surrogate numerically.
CheckResult check_grad_kb(std::uint64_t seed, std::size_t instances);

// Stage-two gradients, one check per trained module. Each module is held to
// the loss terms that train it: the codec to the channel term, the prior
// encoder to the prior term, the score network to the score term, and the
// residual encoder to the prior and score terms through the codec, with
// decoded token ids and code indices fixed and mu fixed in the score term.
enum class Stage2Module { Residual, Encoder, Decoder, Prior, Score };
const char* stage2_module_name(Stage2Module m) noexcept;
CheckResult check_grad_stage2(Stage2Module module, std::uint64_t seed, std::size_t instances);

// ---------------------------------------------------------------- oracles

CheckResult check_nearest_code(std::uint64_t seed, std::size_t pairs = 10000);

// Measured noise power per complex dimension against sigma^2 = 10^(-SNR/10),
// within three Monte Carlo standard errors, on both channel models.
CheckResult check_channel_calibration(std::uint64_t seed, NoiseConvention noise,
                                      std::size_t packets = 100000);

CheckResult check_forward_moments(std::uint64_t seed, std::size_t samples = 10000);

// Probability-flow integration with the exact score of Gaussian data.
CheckResult check_backward_oracle(std::uint64_t seed, std::size_t paths = 100000,
                                  std::size_t steps = 1000);

// Coded BER against closed-form uncoded BPSK over an Eb/N0 grid.
CheckResult check_ldpc_gain(std::uint64_t seed, NoiseConvention noise,
                            std::size_t info_bits = 100000);

// Stage-two loss against a sum of its parts recomputed by hand, for random
// batches and for the first step of a short training run.
CheckResult check_loss_plumbing(std::uint64_t seed);

// Relative reconstruction error for N in {1, 2, 4} over three seeds, plus the
// absolute bound for the default knowledge base.
CheckResult check_kb_fidelity(const Corpus& corpus, const Stage1Config& base);

// ---------------------------------------------------------------- trends

// Monotone trend over an ordered grid, allowing one adjacent pair against
// the trend by at most the standard error of the difference.
bool trend_holds(std::span<const double> mean, std::span<const double> se, bool increasing,
                 std::string* why = nullptr);

// ---------------------------------------------------------------- suite

std::vector<std::string> check_names(const VerifyOptions& opts);
// Runs every check once, in check_names order. `on_result` sees each result
// as it finishes.
std::vector<CheckResult> run_checks(const VerifyOptions& opts,
                                    const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace sctts

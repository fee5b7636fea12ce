#pragma once

// Receiver-side synthesis: prior encoder (text encoder, duration expansion,
// pitch predictor, projection to mu), a variance-preserving diffusion with a
// small MLP score network, and a fixed linear vocoder.
//
// Schedule: beta(t) = beta0 + t (beta1 - beta0), B(t) = int_0^t beta.
// Marginal: s_t ~ N(rho_t, sigma_t I), rho_t = exp(-B/2) s_0,
// sigma_t = 1 - exp(-B) (a variance).

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "sctts/numkit/mlp.hpp"
#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

struct DiffusionSchedule {
  double beta0 = 0.05;
  double beta1 = 20.0;
  double t_max = 1.0;   // T
  double t_min = 1e-3;  // lower end of training times

  double beta(double t) const noexcept { return beta0 + t * (beta1 - beta0); }
  double integral(double t) const noexcept { return beta0 * t + 0.5 * (beta1 - beta0) * t * t; }
  double mean_coef(double t) const;  // exp(-B/2)
  double sigma(double t) const;      // 1 - exp(-B)
  bool operator==(const DiffusionSchedule&) const = default;
};

Vec64 forward_diffuse(std::span<const double> s0, double t, const DiffusionSchedule& sched,
                      SeededRng& rng);
// (rho_t(s_0) - s_t) / sigma_t. Throws ContractError when sigma_t == 0.
Vec64 score_target(std::span<const double> s0, std::span<const double> st, double t,
                   const DiffusionSchedule& sched);

// score(t, s) -> grad log p_t(s), written into the output span.
using ScoreFn = std::function<void(double t, std::span<const double> s, std::span<double> out)>;

// Probability-flow ODE ds/dt = -beta(t)/2 (s + score) integrated by Euler
// from T down to 0 in K uniform steps. The score is evaluated at the start of
// each step, so t = 0 is never queried.
Vec64 backward_solve(Vec64 s_T, const ScoreFn& score, const DiffusionSchedule& sched,
                     std::size_t steps);

// Rows of h_p repeated durations[l] times.
Mat64 expand_frames(const Mat64& h_p, std::span<const std::uint32_t> durations);
// round(d) with a floor of 1.
std::vector<std::uint32_t> round_durations(std::span<const double> d1);

// Token ids from a received token vector: round(t * (V - 1)) clamped to
// [0, V - 1]. decode_token_ids reads up to the first padding id (id 0), with
// the first `min_tokens` slots never read as padding; the prefix form keeps
// the first `count` slots as they are.
std::vector<std::uint32_t> decode_token_ids(std::span<const double> t, std::size_t vocab,
                                            std::size_t min_tokens = 1);
std::vector<std::uint32_t> token_id_prefix(std::span<const double> t, std::size_t vocab,
                                           std::size_t count);

// |d1 - d0| + |p1 - p0| + |mu - s0|, each an unsquared Euclidean norm.
struct PriorLoss {
  double duration = 0.0;
  double pitch = 0.0;
  double feature = 0.0;
  double total() const noexcept { return duration + pitch + feature; }
};
PriorLoss prior_loss(std::span<const double> d1, std::span<const double> d0,
                     std::span<const double> p1, std::span<const double> p0, const Mat64& mu,
                     const Mat64& s0);

struct SynthConfig {
  std::size_t vocab = 32;
  std::size_t d_w = 64;
  std::size_t d_r = 16;
  std::size_t d_ss = 64;
  std::size_t d_h = 64;
  std::size_t text_hidden = 64;
  std::size_t pitch_hidden = 32;
  std::size_t score_hidden = 64;
  std::size_t score_context = 1;  // neighbouring frames on each side seen by the score network
  // Spread of s0 around mu assumed by the analytic skip path of the score
  // network; the network learns the remainder.
  double score_prior_var = 0.001;
  std::size_t d_audio = 64;  // vocoder samples per frame
  DiffusionSchedule schedule;
  std::size_t inference_steps = 200;
  std::uint64_t vocoder_seed = 0x5e55;
  bool operator==(const SynthConfig&) const = default;
};

inline constexpr std::size_t kTimeFeatures = 4;
std::array<double, kTimeFeatures> time_embedding(double t);

struct PriorOutputs {
  Mat64 h_p;                            // L x d_h
  Vec64 d1;                             // L, in (1, 4)
  std::vector<std::uint32_t> expansion; // durations actually used
  Mat64 h_f;                            // F x d_h
  Vec64 p1;                             // F
  Mat64 mu;                             // F x d_ss
};

// Activation records of one prior pass, for backward.
struct PriorTape {
  std::vector<MlpTape> text;
  std::vector<MlpTape> pitch;
  std::vector<MlpTape> proj;
  std::vector<std::size_t> frame_token;  // token index of each frame
  Vec64 raw;                             // pre-squash duration outputs
};

struct ScoreTape {
  std::vector<MlpTape> frames;
};

// theta_p (text, pitch, proj) and theta_diff (score).
class Synthesizer {
 public:
  Synthesizer() = default;
  static Synthesizer random(const SynthConfig& cfg, SeededRng rng);

  const SynthConfig& config() const noexcept { return cfg_; }
  void set_score_prior_var(double v);
  Mlp& text() noexcept { return text_; }
  Mlp& pitch() noexcept { return pitch_; }
  Mlp& proj() noexcept { return proj_; }
  Mlp& score() noexcept { return score_; }
  const Mlp& text() const noexcept { return text_; }
  const Mlp& pitch() const noexcept { return pitch_; }
  const Mlp& proj() const noexcept { return proj_; }
  const Mlp& score() const noexcept { return score_; }

  std::size_t prior_param_count() const noexcept;
  std::size_t score_param_count() const noexcept { return score_.param_count(); }

  // Teacher forcing when `durations` is given; otherwise round(d1).
  PriorOutputs prior(std::span<const std::uint32_t> ids, std::span<const double> w,
                     std::span<const double> r,
                     std::span<const std::uint32_t> durations = {},
                     PriorTape* tape = nullptr) const;

  // Accumulates theta_p gradients into `grads` (text | pitch | proj) and
  // returns dL/dr.
  Vec64 prior_backward(const PriorOutputs& out, const PriorTape& tape,
                       std::span<const double> r, std::span<const double> g_d1,
                       std::span<const double> g_p1, const Mat64& g_mu,
                       std::span<double> grads) const;

  // rho_hat for every frame, with c = exp(-B/2):
  //   c mu + kappa (s_t - c mu) + c net([s_t window | emb(t) | mu window | w | r])
  // where kappa is the posterior gain for s0 ~ N(mu, score_prior_var I) and a
  // window holds the frame and score_context neighbours on each side, zero
  // past the ends.
  Mat64 predict_rho(const Mat64& s_t, double t, const Mat64& mu, std::span<const double> w,
                    std::span<const double> r, ScoreTape* tape = nullptr) const;
  // Backward of predict_rho with mu held constant. Accumulates theta_diff
  // gradients and returns dL/dr.
  Vec64 predict_rho_backward(const ScoreTape& tape, double t, const Mat64& g_rho,
                             std::span<double> grads) const;
  double skip_gain(double t) const;

  // Sample s_0 by backward_solve from s_T ~ N(0, I).
  Mat64 sample(const Mat64& mu, std::span<const double> w, std::span<const double> r,
               SeededRng& rng, std::size_t steps) const;

  bool operator==(const Synthesizer&) const = default;

 private:
  Vec64 score_input(const Mat64& s_t, std::size_t frame, double t, const Mat64& mu,
                    std::span<const double> w, std::span<const double> r) const;
  std::size_t score_window() const noexcept { return 2 * cfg_.score_context + 1; }

  SynthConfig cfg_;
  Mlp text_;
  Mlp pitch_;
  Mlp proj_;
  Mlp score_;
};

// Diffusion loss for one utterance at time t with noise eps:
// |rho_hat - rho| / sigma_t, which equals |score_hat - score_target|.
struct DiffusionSample {
  double t = 0.0;
  Mat64 eps;  // F x d_ss standard normal
};
DiffusionSample draw_diffusion_sample(std::size_t frames, std::size_t d_ss,
                                      const DiffusionSchedule& sched, SeededRng& rng);

struct DiffusionEval {
  double loss = 0.0;
  Mat64 s_t;
  Mat64 rho;
  Mat64 rho_hat;
};
DiffusionEval diffusion_loss(const Synthesizer& synth, const Mat64& s0, const Mat64& mu,
                             std::span<const double> w, std::span<const double> r,
                             const DiffusionSample& sample, ScoreTape* tape = nullptr);
// Gradient of diffusion_loss; accumulates theta_diff and returns dL/dr.
Vec64 diffusion_loss_backward(const Synthesizer& synth, const DiffusionEval& eval,
                              const ScoreTape& tape, double t, double scale,
                              std::span<double> grads);

// Fixed full-rank linear map per frame, d_ss -> d_audio.
class LinearVocoder {
 public:
  LinearVocoder(std::size_t d_ss, std::size_t d_audio, std::uint64_t seed);
  Mat64 vocode(const Mat64& frames) const;
  // Least-squares inverse through the pseudo-inverse.
  Mat64 analyze(const Mat64& waveform) const;
  const Mat64& matrix() const noexcept { return a_; }

 private:
  Mat64 a_;     // d_audio x d_ss
  Mat64 pinv_;  // d_ss x d_audio
};

inline constexpr std::uint16_t kSynthVersion = 1;

class ByteWriter;
class ByteReader;
void write_synth(ByteWriter& out, const Synthesizer& synth);
Synthesizer read_synth(ByteReader& in);
void save_synth(const Synthesizer& synth, const std::filesystem::path& path);
Synthesizer load_synth(const std::filesystem::path& path);

}  // namespace sctts

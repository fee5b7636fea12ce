#include "sctts/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sctts/error.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/numkit/kernels.hpp"
#include "sctts/link.hpp"

namespace sctts {

// ---------------------------------------------------------------- diffusion

double DiffusionSchedule::mean_coef(double t) const { return std::exp(-0.5 * integral(t)); }
double DiffusionSchedule::sigma(double t) const { return -std::expm1(-integral(t)); }

Vec64 forward_diffuse(std::span<const double> s0, double t, const DiffusionSchedule& sched,
                      SeededRng& rng) {
  require(t >= 0.0 && t <= sched.t_max, "forward_diffuse: t outside [0, T]");
  const double c = sched.mean_coef(t);
  const double sd = std::sqrt(sched.sigma(t));
  Vec64 st(s0.size());
  for (std::size_t i = 0; i < s0.size(); ++i) st[i] = c * s0[i] + sd * rng.normal();
  return st;
}

Vec64 score_target(std::span<const double> s0, std::span<const double> st, double t,
                   const DiffusionSchedule& sched) {
  require(s0.size() == st.size(), "score_target: size mismatch");
  const double sigma = sched.sigma(t);
  require(sigma > 0.0, "score_target: sigma_t is zero; sample t from [t_min, T]");
  const double c = sched.mean_coef(t);
  Vec64 out(s0.size());
  for (std::size_t i = 0; i < s0.size(); ++i) out[i] = (c * s0[i] - st[i]) / sigma;
  return out;
}

Vec64 backward_solve(Vec64 s, const ScoreFn& score, const DiffusionSchedule& sched,
                     std::size_t steps) {
  require(steps >= 1, "backward_solve: need at least one step");
  const double h = sched.t_max / static_cast<double>(steps);
  Vec64 sc(s.size());
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = sched.t_max - static_cast<double>(k) * h;
    score(t, s.span(), sc.span());
    const double a = 0.5 * sched.beta(t) * h;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += a * (s[i] + sc[i]);
  }
  return s;
}

// ---------------------------------------------------------------- prior helpers

Mat64 expand_frames(const Mat64& h_p, std::span<const std::uint32_t> durations) {
  require(durations.size() == h_p.rows(), "expand_frames: one duration per row");
  std::size_t frames = 0;
  for (const auto d : durations) frames += d;
  Mat64 out(frames, h_p.cols());
  std::size_t f = 0;
  for (std::size_t l = 0; l < durations.size(); ++l) {
    for (std::uint32_t k = 0; k < durations[l]; ++k, ++f) {
      std::copy(h_p.row(l).begin(), h_p.row(l).end(), out.row(f).begin());
    }
  }
  return out;
}

std::vector<std::uint32_t> round_durations(std::span<const double> d1) {
  std::vector<std::uint32_t> out;
  out.reserve(d1.size());
  for (double d : d1) out.push_back(static_cast<std::uint32_t>(std::max(1.0, std::round(d))));
  return out;
}

std::vector<std::uint32_t> token_id_prefix(std::span<const double> t, std::size_t vocab,
                                           std::size_t count) {
  require(count <= t.size(), "token_id_prefix: count exceeds the token vector");
  const double top = static_cast<double>(vocab - 1);
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    double v = std::round(t[i] * top);
    if (!(v >= 0.0)) v = 0.0;
    out.push_back(static_cast<std::uint32_t>(std::min(v, top)));
  }
  return out;
}

std::vector<std::uint32_t> decode_token_ids(std::span<const double> t, std::size_t vocab,
                                            std::size_t min_tokens) {
  require(min_tokens <= t.size(), "decode_token_ids: min_tokens exceeds the token vector");
  // Padding is a suffix, so the first padding id past min_tokens ends the
  // sentence; slots before it cannot be padding and snap to id 1 or above.
  std::vector<std::uint32_t> out;
  for (const auto id : token_id_prefix(t, vocab, t.size())) {
    if (id == 0) {
      if (out.size() >= min_tokens) break;
      out.push_back(1);
      continue;
    }
    out.push_back(id);
  }
  return out;
}

PriorLoss prior_loss(std::span<const double> d1, std::span<const double> d0,
                     std::span<const double> p1, std::span<const double> p0, const Mat64& mu,
                     const Mat64& s0) {
  if (d1.size() != d0.size() || p1.size() != p0.size() || mu.rows() != s0.rows() ||
      mu.cols() != s0.cols()) {
    throw ContractError("prior_loss: length mismatch");
  }
  PriorLoss l;
  l.duration = ed_loss(d1, d0);
  l.pitch = ed_loss(p1, p0);
  l.feature = ed_loss(mu.flat(), s0.flat());
  return l;
}

std::array<double, kTimeFeatures> time_embedding(double t) {
  constexpr double pi = std::numbers::pi;
  return {std::sin(0.5 * pi * t), std::cos(0.5 * pi * t), std::sin(4.0 * pi * t),
          std::cos(4.0 * pi * t)};
}

// ---------------------------------------------------------------- synthesizer

Synthesizer Synthesizer::random(const SynthConfig& cfg, SeededRng rng) {
  require(cfg.vocab >= 2 && cfg.d_ss >= 1 && cfg.d_h >= 1, "Synthesizer: bad dimensions");
  Synthesizer s;
  s.cfg_ = cfg;
  const auto tanh_id = std::vector<Activation>{Activation::Tanh, Activation::Identity};
  s.text_ = Mlp::random({cfg.vocab + cfg.d_w + cfg.d_r, cfg.text_hidden, cfg.d_h + 1}, tanh_id,
                        rng.child("text"));
  s.pitch_ = Mlp::random({cfg.d_h + cfg.d_w + cfg.d_r, cfg.pitch_hidden, 1}, tanh_id,
                         rng.child("pitch"));
  s.proj_ = Mlp::random({cfg.d_h, cfg.d_ss}, {Activation::Identity}, rng.child("proj"));
  s.score_ = Mlp::random(
      {2 * (2 * cfg.score_context + 1) * cfg.d_ss + kTimeFeatures + cfg.d_w + cfg.d_r,
       cfg.score_hidden, cfg.score_hidden, cfg.d_ss},
      {Activation::Tanh, Activation::Tanh, Activation::Identity}, rng.child("score"));
  // Start from the analytic skip path alone.
  for (double& v : s.score_.weight(2)) v = 0.0;
  for (double& v : s.score_.bias(2)) v = 0.0;
  return s;
}

void Synthesizer::set_score_prior_var(double v) {
  require(v >= 0.0, "score_prior_var must be non-negative");
  cfg_.score_prior_var = v;
}

std::size_t Synthesizer::prior_param_count() const noexcept {
  return text_.param_count() + pitch_.param_count() + proj_.param_count();
}

PriorOutputs Synthesizer::prior(std::span<const std::uint32_t> ids, std::span<const double> w,
                                std::span<const double> r,
                                std::span<const std::uint32_t> durations,
                                PriorTape* tape) const {
  require(w.size() == cfg_.d_w && r.size() == cfg_.d_r, "prior: w or r has the wrong size");
  require(durations.empty() || durations.size() == ids.size(),
          "prior: teacher durations must match the token count");
  const std::size_t L = ids.size();
  const std::size_t dh = cfg_.d_h;
  PriorOutputs out;
  out.h_p = Mat64(L, dh);
  out.d1 = Vec64(L);
  PriorTape scratch;
  PriorTape& tp = tape != nullptr ? *tape : scratch;
  tp.text.assign(L, {});
  tp.pitch.assign(L, {});
  tp.proj.assign(L, {});
  tp.raw = Vec64(L);
  tp.frame_token.clear();

  Vec64 in(cfg_.vocab + cfg_.d_w + cfg_.d_r);
  std::copy(w.begin(), w.end(), in.begin() + static_cast<std::ptrdiff_t>(cfg_.vocab));
  std::copy(r.begin(), r.end(), in.begin() + static_cast<std::ptrdiff_t>(cfg_.vocab + cfg_.d_w));
  for (std::size_t l = 0; l < L; ++l) {
    require(ids[l] < cfg_.vocab, "prior: token id outside the vocabulary");
    std::fill(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(cfg_.vocab), 0.0);
    in[ids[l]] = 1.0;
    const Vec64 o = text_.forward(in.span(), tp.text[l]);
    std::copy(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(dh), out.h_p.row(l).begin());
    tp.raw[l] = o[dh];
    out.d1[l] = 1.0 + 3.0 / (1.0 + std::exp(-o[dh]));
  }
  out.expansion = durations.empty() ? round_durations(out.d1.span())
                                    : std::vector<std::uint32_t>(durations.begin(), durations.end());
  out.h_f = expand_frames(out.h_p, out.expansion);
  const std::size_t F = out.h_f.rows();
  out.p1 = Vec64(F);
  out.mu = Mat64(F, cfg_.d_ss);

  // Frames of one token share h_f, so pitch and projection run per token.
  Vec64 pin(dh + cfg_.d_w + cfg_.d_r);
  std::copy(w.begin(), w.end(), pin.begin() + static_cast<std::ptrdiff_t>(dh));
  std::copy(r.begin(), r.end(), pin.begin() + static_cast<std::ptrdiff_t>(dh + cfg_.d_w));
  std::size_t f = 0;
  for (std::size_t l = 0; l < L; ++l) {
    std::copy(out.h_p.row(l).begin(), out.h_p.row(l).end(), pin.begin());
    const double p = pitch_.forward(pin.span(), tp.pitch[l])[0];
    Vec64 m = proj_.forward(out.h_p.row(l), tp.proj[l]);
    for (double& v : m) v += p;
    for (std::uint32_t k = 0; k < out.expansion[l]; ++k, ++f) {
      out.p1[f] = p;
      std::copy(m.begin(), m.end(), out.mu.row(f).begin());
      tp.frame_token.push_back(l);
    }
  }
  return out;
}

Vec64 Synthesizer::prior_backward(const PriorOutputs& out, const PriorTape& tape,
                                  std::span<const double> r,
                                  std::span<const double> g_d1, std::span<const double> g_p1,
                                  const Mat64& g_mu, std::span<double> grads) const {
  const std::size_t L = out.h_p.rows();
  const std::size_t F = out.h_f.rows();
  if (tape.text.size() != L || tape.frame_token.size() != F) {
    throw StateError("prior_backward: tape does not match this forward pass");
  }
  require(g_d1.size() == L && g_p1.size() == F && g_mu.rows() == F && g_mu.cols() == cfg_.d_ss,
          "prior_backward: gradient shapes do not match the outputs");
  require(grads.size() == prior_param_count(), "prior_backward: gradient buffer size mismatch");
  auto g_text = grads.first(text_.param_count());
  auto g_pitch = grads.subspan(text_.param_count(), pitch_.param_count());
  auto g_proj = grads.subspan(text_.param_count() + pitch_.param_count());

  const std::size_t dh = cfg_.d_h;
  std::vector<double> g_tok_p(L, 0.0);
  Mat64 g_tok_mu(L, cfg_.d_ss);
  for (std::size_t f = 0; f < F; ++f) {
    const std::size_t l = tape.frame_token[f];
    double s = g_p1[f];
    for (double v : g_mu.row(f)) s += v;
    g_tok_p[l] += s;
    kernels::axpy(1.0, g_mu.row(f), g_tok_mu.row(l));
  }

  Vec64 g_r(r.size());
  Vec64 g_o(dh + 1);
  for (std::size_t l = 0; l < L; ++l) {
    const Vec64 g_h = proj_.backward(tape.proj[l], g_tok_mu.row(l), g_proj);
    const double gp[1] = {g_tok_p[l]};
    const Vec64 g_pin = pitch_.backward(tape.pitch[l], gp, g_pitch);
    for (std::size_t k = 0; k < dh; ++k) g_o[k] = g_h[k] + g_pin[k];
    kernels::axpy(1.0, g_pin.span().subspan(dh + cfg_.d_w), g_r.span());
    const double sg = 1.0 / (1.0 + std::exp(-tape.raw[l]));
    g_o[dh] = g_d1[l] * 3.0 * sg * (1.0 - sg);
    const Vec64 g_in = text_.backward(tape.text[l], g_o.span(), g_text);
    kernels::axpy(1.0, g_in.span().subspan(cfg_.vocab + cfg_.d_w), g_r.span());
  }
  return g_r;
}

Vec64 Synthesizer::score_input(const Mat64& s_t, std::size_t frame, double t, const Mat64& mu,
                               std::span<const double> w, std::span<const double> r) const {
  const std::size_t d = cfg_.d_ss;
  const std::size_t ctx = cfg_.score_context;
  Vec64 in(score_.input_size());
  const auto window = [&](const Mat64& m, std::size_t at) {
    for (std::size_t j = 0; j < score_window(); ++j) {
      if (frame + j < ctx || frame + j - ctx >= m.rows()) continue;
      const auto row = m.row(frame + j - ctx);
      std::copy(row.begin(), row.end(), in.begin() + static_cast<std::ptrdiff_t>(at + j * d));
    }
  };
  window(s_t, 0);
  std::size_t at = score_window() * d;
  const auto emb = time_embedding(t);
  std::copy(emb.begin(), emb.end(), in.begin() + static_cast<std::ptrdiff_t>(at));
  at += kTimeFeatures;
  window(mu, at);
  at += score_window() * d;
  std::copy(w.begin(), w.end(), in.begin() + static_cast<std::ptrdiff_t>(at));
  std::copy(r.begin(), r.end(), in.begin() + static_cast<std::ptrdiff_t>(at + cfg_.d_w));
  return in;
}

Mat64 Synthesizer::predict_rho(const Mat64& s_t, double t, const Mat64& mu,
                               std::span<const double> w, std::span<const double> r,
                               ScoreTape* tape) const {
  require(s_t.rows() == mu.rows() && s_t.cols() == cfg_.d_ss && mu.cols() == cfg_.d_ss,
          "predict_rho: frame shapes disagree");
  require(w.size() == cfg_.d_w && r.size() == cfg_.d_r, "predict_rho: w or r has the wrong size");
  const double c = cfg_.schedule.mean_coef(t);
  const double kappa = skip_gain(t);
  Mat64 rho(s_t.rows(), cfg_.d_ss);
  if (tape != nullptr) tape->frames.assign(s_t.rows(), {});
  MlpTape scratch;
  for (std::size_t f = 0; f < s_t.rows(); ++f) {
    const Vec64 in = score_input(s_t, f, t, mu, w, r);
    const Vec64 o = score_.forward(in.span(), tape != nullptr ? tape->frames[f] : scratch);
    auto row = rho.row(f);
    for (std::size_t k = 0; k < cfg_.d_ss; ++k) {
      row[k] = c * mu(f, k) + kappa * (s_t(f, k) - c * mu(f, k)) + c * o[k];
    }
  }
  return rho;
}

double Synthesizer::skip_gain(double t) const {
  const double c = cfg_.schedule.mean_coef(t);
  const double v = c * c * cfg_.score_prior_var;
  const double denom = v + cfg_.schedule.sigma(t);
  return denom > 0.0 ? v / denom : 0.0;
}

Vec64 Synthesizer::predict_rho_backward(const ScoreTape& tape, double t, const Mat64& g_rho,
                                        std::span<double> grads) const {
  if (tape.frames.size() != g_rho.rows()) {
    throw StateError("predict_rho_backward: tape does not match this forward pass");
  }
  require(grads.size() == score_.param_count(), "predict_rho_backward: gradient buffer size");
  const double c = cfg_.schedule.mean_coef(t);
  const std::size_t r_off = 2 * score_window() * cfg_.d_ss + kTimeFeatures + cfg_.d_w;
  Vec64 g_r(cfg_.d_r);
  Vec64 g_o(cfg_.d_ss);
  for (std::size_t f = 0; f < g_rho.rows(); ++f) {
    for (std::size_t k = 0; k < cfg_.d_ss; ++k) g_o[k] = c * g_rho(f, k);
    const Vec64 g_in = score_.backward(tape.frames[f], g_o.span(), grads);
    kernels::axpy(1.0, g_in.span().subspan(r_off), g_r.span());
  }
  return g_r;
}

Mat64 Synthesizer::sample(const Mat64& mu, std::span<const double> w, std::span<const double> r,
                          SeededRng& rng, std::size_t steps) const {
  const std::size_t F = mu.rows();
  const std::size_t d = cfg_.d_ss;
  Vec64 s_T(F * d);
  for (double& v : s_T) v = rng.normal();
  if (F == 0) return Mat64(0, d);
  const DiffusionSchedule& sched = cfg_.schedule;
  Mat64 cur(F, d);
  const ScoreFn score = [&](double t, std::span<const double> s, std::span<double> out) {
    std::copy(s.begin(), s.end(), cur.data());
    const Mat64 rho = predict_rho(cur, t, mu, w, r);
    const double sigma = sched.sigma(t);
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = (rho.flat()[i] - s[i]) / sigma;
  };
  const Vec64 s0 = backward_solve(std::move(s_T), score, sched, steps);
  Mat64 out(F, d);
  std::copy(s0.begin(), s0.end(), out.data());
  return out;
}

// ---------------------------------------------------------------- diffusion loss

DiffusionSample draw_diffusion_sample(std::size_t frames, std::size_t d_ss,
                                      const DiffusionSchedule& sched, SeededRng& rng) {
  DiffusionSample s;
  s.t = rng.uniform(sched.t_min, sched.t_max);
  s.eps = Mat64(frames, d_ss);
  for (double& v : s.eps.flat()) v = rng.normal();
  return s;
}

DiffusionEval diffusion_loss(const Synthesizer& synth, const Mat64& s0, const Mat64& mu,
                             std::span<const double> w, std::span<const double> r,
                             const DiffusionSample& sample, ScoreTape* tape) {
  require(s0.rows() == sample.eps.rows() && s0.cols() == sample.eps.cols(),
          "diffusion_loss: noise shape mismatch");
  const DiffusionSchedule& sched = synth.config().schedule;
  const double c = sched.mean_coef(sample.t);
  const double sd = std::sqrt(sched.sigma(sample.t));
  DiffusionEval ev;
  ev.rho = Mat64(s0.rows(), s0.cols());
  ev.s_t = Mat64(s0.rows(), s0.cols());
  for (std::size_t i = 0; i < s0.size(); ++i) {
    ev.rho.flat()[i] = c * s0.flat()[i];
    ev.s_t.flat()[i] = ev.rho.flat()[i] + sd * sample.eps.flat()[i];
  }
  ev.rho_hat = synth.predict_rho(ev.s_t, sample.t, mu, w, r, tape);
  ev.loss = ed_loss(ev.rho_hat.flat(), ev.rho.flat()) / sched.sigma(sample.t);
  return ev;
}

Vec64 diffusion_loss_backward(const Synthesizer& synth, const DiffusionEval& eval,
                              const ScoreTape& tape, double t, double scale,
                              std::span<double> grads) {
  const double sigma = synth.config().schedule.sigma(t);
  const Vec64 g = norm_loss_grad(eval.rho_hat.flat(), eval.rho.flat());
  Mat64 g_rho(eval.rho.rows(), eval.rho.cols());
  for (std::size_t i = 0; i < g.size(); ++i) g_rho.flat()[i] = scale * g[i] / sigma;
  return synth.predict_rho_backward(tape, t, g_rho, grads);
}

// ---------------------------------------------------------------- vocoder

LinearVocoder::LinearVocoder(std::size_t d_ss, std::size_t d_audio, std::uint64_t seed) {
  require(d_audio >= d_ss, "LinearVocoder: d_audio must be at least d_ss for full column rank");
  SeededRng rng = SeededRng(seed).child("vocoder");
  a_ = Mat64(d_audio, d_ss);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_ss));
  for (double& v : a_.flat()) v = scale * rng.normal();
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMatrix> a(a_.data(), static_cast<Eigen::Index>(d_audio),
                                      static_cast<Eigen::Index>(d_ss));
  Eigen::CompleteOrthogonalDecomposition<RowMatrix> cod(a);
  if (cod.rank() != static_cast<Eigen::Index>(d_ss)) {
    throw ContractError("LinearVocoder: drawn map is rank deficient");
  }
  const RowMatrix p = cod.pseudoInverse();
  pinv_ = Mat64(d_ss, d_audio);
  Eigen::Map<RowMatrix>(pinv_.data(), p.rows(), p.cols()) = p;
}

Mat64 LinearVocoder::vocode(const Mat64& frames) const {
  require(frames.cols() == a_.cols(), "vocode: frame dimension mismatch");
  Mat64 out(frames.rows(), a_.rows());
  for (std::size_t f = 0; f < frames.rows(); ++f) {
    for (std::size_t j = 0; j < a_.rows(); ++j) out(f, j) = kernels::dot(a_.row(j), frames.row(f));
  }
  return out;
}

Mat64 LinearVocoder::analyze(const Mat64& waveform) const {
  require(waveform.cols() == a_.rows(), "analyze: waveform frame length mismatch");
  Mat64 out(waveform.rows(), a_.cols());
  for (std::size_t f = 0; f < waveform.rows(); ++f) {
    for (std::size_t j = 0; j < pinv_.rows(); ++j) {
      out(f, j) = kernels::dot(pinv_.row(j), waveform.row(f));
    }
  }
  return out;
}

// ---------------------------------------------------------------- files

void write_synth(ByteWriter& out, const Synthesizer& synth) {
  const SynthConfig& c = synth.config();
  out.magic("SCSY");
  out.u16(kSynthVersion);
  for (const std::size_t v : {c.vocab, c.d_w, c.d_r, c.d_ss, c.d_h, c.text_hidden, c.pitch_hidden,
                              c.score_hidden, c.score_context, c.d_audio, c.inference_steps}) {
    out.u64(v);
  }
  out.f64(c.schedule.beta0);
  out.f64(c.schedule.beta1);
  out.f64(c.schedule.t_max);
  out.f64(c.schedule.t_min);
  out.f64(c.score_prior_var);
  out.u64(c.vocoder_seed);
  write_mlp(out, synth.text());
  write_mlp(out, synth.pitch());
  write_mlp(out, synth.proj());
  write_mlp(out, synth.score());
}

Synthesizer read_synth(ByteReader& in) {
  in.expect_magic("SCSY");
  if (in.u16() != kSynthVersion) throw FormatError("unsupported synthesizer version");
  SynthConfig c;
  for (std::size_t* v : {&c.vocab, &c.d_w, &c.d_r, &c.d_ss, &c.d_h, &c.text_hidden,
                         &c.pitch_hidden, &c.score_hidden, &c.score_context, &c.d_audio,
                         &c.inference_steps}) {
    *v = in.u64();
    if (*v > (1u << 20) || (*v == 0 && v != &c.score_context)) {
      throw FormatError("implausible synthesizer dimension");
    }
  }
  c.schedule.beta0 = in.f64();
  c.schedule.beta1 = in.f64();
  c.schedule.t_max = in.f64();
  c.schedule.t_min = in.f64();
  c.score_prior_var = in.f64();
  if (!(c.score_prior_var >= 0.0)) throw FormatError("negative score prior variance");
  c.vocoder_seed = in.u64();
  Synthesizer s = Synthesizer::random(c, SeededRng(0));
  const auto load = [&in](Mlp& dst) {
    Mlp m = read_mlp(in);
    if (m.sizes() != dst.sizes() || m.activations() != dst.activations()) {
      throw FormatError("synthesizer network shape disagrees with its header");
    }
    dst = std::move(m);
  };
  load(s.text());
  load(s.pitch());
  load(s.proj());
  load(s.score());
  return s;
}

void save_synth(const Synthesizer& synth, const std::filesystem::path& path) {
  ByteWriter out;
  write_synth(out, synth);
  out.save(path);
}

Synthesizer load_synth(const std::filesystem::path& path) {
  ByteReader in = ByteReader::load(path);
  Synthesizer s = read_synth(in);
  in.expect_end();
  return s;
}

}  // namespace sctts

#include "sctts/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>
#include <map>

#include "sctts/baseline.hpp"
#include "sctts/config.hpp"
#include "sctts/error.hpp"
#include "sctts/kb.hpp"
#include "sctts/numkit/optim.hpp"
#include "sctts/synth.hpp"

namespace sctts {

namespace {

std::string format(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

// Plain loops on purpose: the oracles avoid the dispatching kernels.
double naive_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double naive_norm(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Vec64 gaussian(SeededRng& rng, std::size_t n, double sd = 1.0) {
  Vec64 v(n);
  for (double& x : v) x = sd * rng.normal();
  return v;
}

std::vector<Vec64> directions(const std::vector<std::span<double>>& blocks, SeededRng rng) {
  std::vector<Vec64> dir;
  for (const auto& b : blocks) dir.push_back(gaussian(rng, b.size()));
  return dir;
}

double directional(const std::vector<std::span<double>>& grads, const std::vector<Vec64>& dir) {
  double s = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) s += naive_dot(grads[i], dir[i].span());
  return s;
}

void jitter(std::span<double> params, SeededRng rng, double sd) {
  for (double& p : params) p += sd * rng.normal();
}

// Worst relative error over instances; NaN poisons the result.
struct Worst {
  double rel = 0.0;
  std::size_t instances = 0;
  void add(double analytic, double numeric) {
    const double e = relative_error(analytic, numeric);
    rel = std::isnan(e) || std::isnan(rel) ? std::numeric_limits<double>::quiet_NaN()
                                           : std::max(rel, e);
    ++instances;
  }
  CheckResult result(std::size_t wanted) const {
    CheckResult r;
    r.passed = instances >= wanted && rel < kGradTolerance;
    r.detail = format("%zu instances, worst relative error %.2e (limit %.0e)", instances, rel,
                      kGradTolerance);
    return r;
  }
};

double configured_sigma2(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

}  // namespace

double directional_fd(const std::function<double()>& loss,
                      const std::vector<std::span<double>>& params,
                      const std::vector<Vec64>& dir, double h) {
  require(params.size() == dir.size(), "directional_fd: block count mismatch");
  std::vector<Vec64> saved;
  for (const auto& p : params) saved.emplace_back(std::span<const double>(p));
  auto shift = [&](double step) {
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        params[b][i] = saved[b][i] + step * dir[b][i];
      }
    }
  };
  shift(h);
  const double up = loss();
  shift(-h);
  const double down = loss();
  for (std::size_t b = 0; b < params.size(); ++b) {
    std::copy(saved[b].begin(), saved[b].end(), params[b].begin());
  }
  return (up - down) / (2.0 * h);
}

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  return std::abs(a - b) / scale;
}

// ---------------------------------------------------------------- networks

CheckResult check_grad_mlp(std::uint64_t seed, std::size_t instances) {
  Worst worst;
  for (std::size_t k = 0; k < instances; ++k) {
    SeededRng rng = SeededRng(seed).child("grad-mlp").child(k);
    const std::size_t layers = 1 + rng.below(3);
    std::vector<std::size_t> sizes{2 + rng.below(10)};
    std::vector<Activation> acts;
    for (std::size_t l = 0; l < layers; ++l) {
      sizes.push_back(2 + rng.below(14));
      acts.push_back(rng.below(2) == 0 ? Activation::Tanh : Activation::Identity);
    }
    Mlp net = Mlp::random(sizes, acts, rng.child("init"));
    Vec64 x = gaussian(rng, sizes.front());
    const Vec64 c = gaussian(rng, sizes.back());
    // L = c.y + |y|^2 / 2
    auto loss = [&] {
      const Vec64 y = net.apply(x.span());
      return naive_dot(c.span(), y.span()) + 0.5 * naive_dot(y.span(), y.span());
    };
    MlpTape tape;
    const Vec64 y = net.forward(x.span(), tape);
    Vec64 up(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) up[i] = c[i] + y[i];
    Vec64 g(net.param_count());
    Vec64 gx = net.backward(tape, up.span(), g.span());
    const std::vector<std::span<double>> params{net.params(), x.span()};
    const auto dir = directions(params, rng.child("dir"));
    worst.add(directional({g.span(), gx.span()}, dir), directional_fd(loss, params, dir));
  }
  return worst.result(instances);
}

CheckResult check_grad_skip_mlp(std::uint64_t seed, std::size_t instances) {
  Worst worst;
  for (std::size_t k = 0; k < instances; ++k) {
    SeededRng rng = SeededRng(seed).child("grad-skip-mlp").child(k);
    const std::size_t in = 2 + rng.below(12);
    const std::size_t out = rng.below(2) == 0 ? in : 2 + rng.below(12);
    SkipMlp net = SkipMlp::random(in, 4 + rng.below(12), out, rng.child("init"));
    // The body's output layer starts at zero; move it so every path carries gradient.
    for (auto b : net.param_blocks()) jitter(b, rng.child("jitter").child(b.size()), 0.1);
    Vec64 x = gaussian(rng, in);
    const Vec64 c = gaussian(rng, out);
    auto loss = [&] {
      const Vec64 y = net.apply(x.span());
      return naive_dot(c.span(), y.span()) + 0.5 * naive_dot(y.span(), y.span());
    };
    SkipMlp::Tape tape;
    const Vec64 y = net.forward(x.span(), tape);
    Vec64 up(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) up[i] = c[i] + y[i];
    Vec64 g(net.param_count());
    Vec64 gx = net.backward(tape, up.span(), g.span());
    std::vector<std::span<double>> params = net.param_blocks();
    std::vector<std::span<double>> grads = net.split(g.span());
    params.push_back(x.span());
    grads.push_back(gx.span());
    const auto dir = directions(params, rng.child("dir"));
    worst.add(directional(grads, dir), directional_fd(loss, params, dir));

    // The input-only backward must agree with the full one.
    const Vec64 gx_only = net.backward_input(tape, up.span());
    worst.add(naive_dot(gx_only.span(), dir.back().span()), naive_dot(gx.span(), dir.back().span()));
  }
  return worst.result(instances);
}

CheckResult check_grad_residual_stage(std::uint64_t seed, std::size_t instances) {
  Worst worst;
  for (std::size_t k = 0; k < instances; ++k) {
    SeededRng rng = SeededRng(seed).child("grad-residual-stage").child(k);
    const auto order =
        k % 2 == 0 ? ResidualStage::Order::ProjectFirst : ResidualStage::Order::ResidualFirst;
    const std::size_t dim = 2 + rng.below(12);
    ResidualStage stage = ResidualStage::random(dim, 3 + rng.below(10), order, rng.child("init"));
    Vec64 x = gaussian(rng, dim);
    const Vec64 c = gaussian(rng, dim);
    auto loss = [&] {
      const Vec64 y = stage.apply(x.span());
      return naive_dot(c.span(), y.span()) + 0.5 * naive_dot(y.span(), y.span());
    };
    ResidualStage::Tape tape;
    const Vec64 y = stage.forward(x.span(), tape);
    Vec64 up(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) up[i] = c[i] + y[i];
    Vec64 g(stage.param_count());
    Vec64 gx = stage.backward(tape, up.span(), g.span());
    const std::size_t np = stage.projection().param_count();
    const std::vector<std::span<double>> params{stage.projection().params(),
                                                stage.residual().params(), x.span()};
    const std::vector<std::span<double>> grads{g.span().first(np), g.span().subspan(np),
                                               gx.span()};
    const auto dir = directions(params, rng.child("dir"));
    worst.add(directional(grads, dir), directional_fd(loss, params, dir));
  }
  return worst.result(instances);
}

// ---------------------------------------------------------------- knowledge base

CheckResult check_grad_kb(std::uint64_t seed, std::size_t instances) {
  Worst worst;
  for (std::size_t k = 0; k < instances; ++k) {
    SeededRng rng = SeededRng(seed).child("grad-kb").child(k);
    KbConfig cfg;
    cfg.d_w = 4 + rng.below(12);
    cfg.stages = 1 + rng.below(4);
    cfg.codes = 2 + rng.below(16);
    cfg.hidden = 3 + rng.below(8);
    cfg.stage_hidden = 3 + rng.below(8);
    KbModel model = KbModel::random(cfg, rng.child("init"));
    for (std::size_t i = 0; i < cfg.stages; ++i) {
      SeededRng cb = rng.child("codebook").child(i);
      for (double& v : model.tx.codebooks[i].flat()) v = 0.5 * cb.normal();
    }
    model.rx.codebooks = model.tx.codebooks;
    const KbWeights weights{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.1, 1.0)};
    const Vec64 w = gaussian(rng, cfg.d_w);

    KbGrads g = KbGrads::zeros_like(model);
    KbEncoding base;
    kb_loss_and_grad(model, w.span(), weights, g, 1.0, &base);

    // Surrogate with the selection and every ng[.] value frozen at `base`.
    auto surrogate = [&] {
      const auto& tx = model.tx;
      Vec64 z = tx.source.apply(w.span());
      Vec64 sum(cfg.d_w);
      double embed = 0.0, commit = 0.0;
      for (std::size_t i = 0; i < cfg.stages; ++i) {
        const Vec64 ze = tx.encoders[i].apply(z.span());
        const auto code = tx.codebooks[i].row(base.indices[i]);
        const Vec64& ze0 = base.pre_quant[i];
        const Vec64& c0 = base.codes[i];
        Vec64 q(cfg.d_w);
        for (std::size_t j = 0; j < cfg.d_w; ++j) {
          embed += (ze0[j] - code[j]) * (ze0[j] - code[j]);
          commit += (ze[j] - c0[j]) * (ze[j] - c0[j]);
          q[j] = c0[j] + (ze[j] - ze0[j]);
          z[j] = ze[j] - c0[j];
        }
        const Vec64 latent = model.rx.decoders[i].apply(q.span());
        for (std::size_t j = 0; j < cfg.d_w; ++j) sum[j] += latent[j];
      }
      const Vec64 w_rec = model.rx.reconstruct.apply(sum.span());
      const double recon = naive_norm(w.span(), w_rec.span());
      return weights.recon * recon * recon + weights.embed * embed + weights.commit * commit;
    };

    // Each codebook appears twice among the parameters (both copies) but
    // once among the gradients; both copies move along the same direction.
    KbBlocks pb = kb_param_blocks(model);
    KbBlocks gb = kb_grad_blocks_for_update(g);
    std::vector<std::span<double>> params = pb.networks;
    std::vector<std::span<double>> grads = gb.networks;
    params.insert(params.end(), pb.codebooks.begin(), pb.codebooks.end());
    grads.insert(grads.end(), gb.codebooks.begin(), gb.codebooks.end());
    SeededRng drng = rng.child("dir");
    std::map<const double*, Vec64> by_grad;
    std::vector<Vec64> dir;
    double analytic = 0.0;
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto [it, fresh] = by_grad.try_emplace(grads[b].data());
      if (fresh) {
        it->second = gaussian(drng, grads[b].size());
        analytic += naive_dot(grads[b], it->second.span());
      }
      dir.push_back(it->second);
    }
    worst.add(analytic, directional_fd(surrogate, params, dir));
  }
  return worst.result(instances);
}

// ---------------------------------------------------------------- stage two

const char* stage2_module_name(Stage2Module m) noexcept {
  switch (m) {
    case Stage2Module::Residual: return "residual-encoder";
    case Stage2Module::Encoder: return "channel-encoder";
    case Stage2Module::Decoder: return "channel-decoder";
    case Stage2Module::Prior: return "prior-encoder";
    case Stage2Module::Score: return "score-network";
  }
  return "?";
}

namespace {

struct Stage2Fixture {
  Corpus corpus;
  SemanticModel model;

  Stage2Fixture(std::uint64_t seed, bool perturb)
      : corpus(generate_corpus(seed, CorpusDims{}, 2, 4)) {
    SeededRng rng = SeededRng(seed).child("stage2-fixture");
    KbConfig kc;
    kc.d_w = corpus.model.dims().d_w;
    KbModel kb = KbModel::random(kc, rng.child("kb"));
    for (std::size_t i = 0; i < kc.stages; ++i) {
      SeededRng cb = rng.child("codebook").child(i);
      for (double& v : kb.tx.codebooks[i].flat()) v = 0.3 * cb.normal();
    }
    kb.rx.codebooks = kb.tx.codebooks;
    model = SemanticModel::init(kb, corpus.model.dims(), Stage2Config{}, rng.child("init"));
    if (perturb) {
      // Zero-initialized output layers would hide the layers behind them.
      SeededRng j = rng.child("jitter");
      std::size_t n = 0;
      for (auto b : blocks(model)) jitter(b, j.child(n++), 0.05);
    }
  }

  static std::vector<std::span<double>> blocks(SemanticModel& m) {
    std::vector<std::span<double>> out{m.residual.params()};
    for (auto b : m.codec.encoder().param_blocks()) out.push_back(b);
    for (auto b : m.codec.decoder().param_blocks()) out.push_back(b);
    for (auto b : {m.synth.text().params(), m.synth.pitch().params(), m.synth.proj().params(),
                   m.synth.score().params()}) {
      out.push_back(b);
    }
    return out;
  }
};

// The receiver side of one stage-two forward pass, rebuilt from public
// pieces with the same random streams as stage2_sample.
struct Forward {
  bool outage = false;
  Vec64 f_e, f_d;
  Unframed rx;
  Vec64 w_tilde;
  std::vector<std::uint32_t> ids;
  PriorOutputs prior;
  DiffusionSample ds;
};

Forward forward_pass(const SemanticModel& model, const Utterance& u, const KbEncoding& codes,
                     const ChannelRealization& channel, SeededRng rng) {
  Forward f;
  const Vec64 r = model.residual.apply(residual_input(u.w.span(), codes).span());
  f.f_e = frame_packet(model.layout, u.tokens.embedded.span(), r.span(), codes.indices);
  const Vec64 x = model.codec.encode(f.f_e.span());
  SeededRng channel_rng = rng.child("channel");
  SeededRng diffusion_rng = rng.child("diffusion");
  const Equalized eq = equalize(apply_channel(x.span(), channel, channel_rng).span(), channel);
  if (eq.outage) {
    f.outage = true;
    return f;
  }
  f.f_d = model.codec.decode(eq.y.span());
  f.rx = unframe_packet(model.layout, f.f_d.span());
  f.w_tilde = rvq_decode(model.kb.rx, f.rx.indices);
  f.ids = token_id_prefix(f.rx.t.span(), model.synth.config().vocab, u.tokens.ids.size());
  f.prior = model.synth.prior(f.ids, f.w_tilde.span(), f.rx.r.span(), u.truth.durations);
  f.ds = draw_diffusion_sample(u.truth.frames.rows(), u.truth.frames.cols(),
                               model.synth.config().schedule, diffusion_rng);
  return f;
}

// Independent loss parts of one sample: hand-written norms and schedule.
LossParts hand_parts(const SemanticModel& model, const Utterance& u, const KbEncoding& codes,
                     const ChannelRealization& channel, SeededRng rng) {
  LossParts p;
  const Forward f = forward_pass(model, u, codes, channel, rng);
  if (f.outage) return p;
  p.ed = naive_norm(f.f_e.span(), f.f_d.span());
  Vec64 d0(u.truth.durations.size());
  for (std::size_t l = 0; l < d0.size(); ++l) d0[l] = u.truth.durations[l];
  p.prior = naive_norm(f.prior.d1.span(), d0.span()) +
            naive_norm(f.prior.p1.span(), u.truth.pitch.span()) +
            naive_norm(f.prior.mu.flat(), u.truth.frames.flat());
  const DiffusionSchedule& s = model.synth.config().schedule;
  const double t = f.ds.t;
  const double big_b = s.beta0 * t + 0.5 * (s.beta1 - s.beta0) * t * t;
  const double c = std::exp(-0.5 * big_b);
  const double sigma = 1.0 - std::exp(-big_b);
  Mat64 rho(u.truth.frames.rows(), u.truth.frames.cols());
  Mat64 s_t(rho.rows(), rho.cols());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    rho.flat()[i] = c * u.truth.frames.flat()[i];
    s_t.flat()[i] = rho.flat()[i] + std::sqrt(sigma) * f.ds.eps.flat()[i];
  }
  const Mat64 rho_hat =
      model.synth.predict_rho(s_t, t, f.prior.mu, f.w_tilde.span(), f.rx.r.span());
  p.diff = naive_norm(rho_hat.flat(), rho.flat()) / sigma;
  return p;
}

}  // namespace

CheckResult check_grad_stage2(Stage2Module module, std::uint64_t seed, std::size_t instances) {
  Worst worst;
  std::size_t skipped = 0;
  bool kb_touched = false;
  for (std::size_t k = 0; worst.instances < instances && k < 4 * instances; ++k) {
    SeededRng rng = SeededRng(seed).child("grad-stage2").child(stage2_module_name(module)).child(k);
    Stage2Fixture fx(derive_seed(seed, k), true);
    SemanticModel& model = fx.model;
    const Utterance& u = fx.corpus.utterances[rng.below(fx.corpus.utterances.size())];
    const KbEncoding codes = rvq_encode(model.kb.tx, u.w.span());
    const ChannelModel cm = k % 2 == 0 ? ChannelModel::Awgn : ChannelModel::Rayleigh;
    const ChannelRealization channel = draw_realization(cm, rng.uniform(-5.0, 25.0), rng);
    const SeededRng sample = rng.child("sample");

    Stage2Grads g = Stage2Grads::zeros_like(model);
    stage2_sample(model, u, codes, channel, sample, &g, 1.0);
    kb_touched = kb_touched || !g.kb.all_zero();
    const Forward base = forward_pass(model, u, codes, channel, sample);
    if (base.outage) {
      ++skipped;
      continue;
    }

    std::vector<std::span<double>> params, grads;
    std::function<double()> loss;
    switch (module) {
      case Stage2Module::Residual:
        params = {model.residual.params()};
        grads = {g.residual.span()};
        loss = [&] {
          // Token ids, code indices and mu frozen at the base point.
          const Vec64 r = model.residual.apply(residual_input(u.w.span(), codes).span());
          const Vec64 f_e =
              frame_packet(model.layout, u.tokens.embedded.span(), r.span(), codes.indices);
          SeededRng channel_rng = sample.child("channel");
          const Equalized eq = equalize(
              apply_channel(model.codec.encode(f_e.span()).span(), channel, channel_rng).span(),
              channel);
          const Unframed rx = unframe_packet(model.layout, model.codec.decode(eq.y.span()).span());
          const PriorOutputs pr = model.synth.prior(base.ids, base.w_tilde.span(), rx.r.span(),
                                                    u.truth.durations);
          Vec64 d0(u.truth.durations.size());
          for (std::size_t l = 0; l < d0.size(); ++l) d0[l] = u.truth.durations[l];
          const double lp = naive_norm(pr.d1.span(), d0.span()) +
                            naive_norm(pr.p1.span(), u.truth.pitch.span()) +
                            naive_norm(pr.mu.flat(), u.truth.frames.flat());
          const double ld = diffusion_loss(model.synth, u.truth.frames, base.prior.mu,
                                           base.w_tilde.span(), rx.r.span(), base.ds)
                                .loss;
          return lp + ld;
        };
        break;
      case Stage2Module::Encoder:
        params = model.codec.encoder().param_blocks();
        grads = model.codec.encoder().split(g.encoder.span());
        loss = [&] { return stage2_sample(model, u, codes, channel, sample).ed; };
        break;
      case Stage2Module::Decoder:
        params = model.codec.decoder().param_blocks();
        grads = model.codec.decoder().split(g.decoder.span());
        loss = [&] { return stage2_sample(model, u, codes, channel, sample).ed; };
        break;
      case Stage2Module::Prior: {
        params = {model.synth.text().params(), model.synth.pitch().params(),
                  model.synth.proj().params()};
        const std::size_t a = model.synth.text().param_count();
        const std::size_t b = model.synth.pitch().param_count();
        grads = {g.prior.span().first(a), g.prior.span().subspan(a, b),
                 g.prior.span().subspan(a + b)};
        loss = [&] { return stage2_sample(model, u, codes, channel, sample).prior; };
        break;
      }
      case Stage2Module::Score:
        params = {model.synth.score().params()};
        grads = {g.score.span()};
        loss = [&] { return stage2_sample(model, u, codes, channel, sample).diff; };
        break;
    }
    const auto dir = directions(params, rng.child("dir"));
    worst.add(directional(grads, dir), directional_fd(loss, params, dir));
  }
  CheckResult r = worst.result(instances);
  if (skipped > 0) r.detail += format(", %zu outage draws skipped", skipped);
  if (kb_touched) {
    r.passed = false;
    r.detail += ", knowledge-base gradient written";
  }
  return r;
}

// ---------------------------------------------------------------- oracles

CheckResult check_nearest_code(std::uint64_t seed, std::size_t pairs) {
  constexpr std::size_t kCodes = 64;
  std::size_t mismatches = 0, ties = 0;
  SeededRng rng = SeededRng(seed).child("nearest-code");
  for (std::size_t p = 0; p < pairs; ++p) {
    // Three families: Gaussian, small integers (exact arithmetic, natural
    // ties) and Gaussian with the winning row duplicated elsewhere.
    const std::size_t family = p % 3;
    const std::size_t d = family == 1 ? 1 + rng.below(8) : 1 + rng.below(64);
    Mat64 cb(kCodes, d);
    Vec64 z(d);
    auto draw = [&](double& v) {
      v = family == 1 ? static_cast<double>(rng.below(5)) - 2.0 : rng.normal();
    };
    for (double& v : cb.flat()) draw(v);
    for (double& v : z) draw(v);

    auto brute = [&](std::size_t& count_min) {
      long double best = std::numeric_limits<long double>::infinity();
      std::size_t arg = 0;
      count_min = 0;
      for (std::size_t m = 0; m < kCodes; ++m) {
        long double s = 0.0L;
        for (std::size_t j = 0; j < d; ++j) {
          const long double diff = static_cast<long double>(z[j]) - cb(m, j);
          s += diff * diff;
        }
        if (s < best) {
          best = s;
          arg = m;
          count_min = 1;
        } else if (s == best) {
          ++count_min;
        }
      }
      return arg;
    };
    std::size_t count_min = 0;
    std::size_t want = brute(count_min);
    if (family == 2) {
      // Copy the winner onto another row; the lower of the two must win.
      std::size_t other = rng.below(kCodes - 1);
      if (other >= want) ++other;
      std::copy(cb.row(want).begin(), cb.row(want).end(), cb.row(other).begin());
      want = brute(count_min);
    }
    if (count_min > 1) ++ties;
    if (nearest_code(z.span(), cb).index != want) ++mismatches;
  }
  CheckResult r;
  r.passed = mismatches == 0 && ties > 0;
  r.detail = format("%zu pairs (M=%zu), %zu with tied minima, %zu mismatches", pairs, kCodes,
                    ties, mismatches);
  return r;
}

CheckResult check_channel_calibration(std::uint64_t seed, NoiseConvention noise,
                                      std::size_t packets) {
  constexpr std::size_t kDx = 96;
  CheckResult r;
  r.passed = true;
  double worst_z = 0.0;
  for (const ChannelModel cm : {ChannelModel::Awgn, ChannelModel::Rayleigh}) {
    for (const double snr : {-5.0, 0.0, 5.0, 10.0, 15.0}) {
      SeededRng rng = SeededRng(seed).child("calibration").child(channel_name(cm)).child(
          static_cast<std::uint64_t>(snr + 100.0));
      const double sigma2 = configured_sigma2(snr);
      double power = 0.0;
      for (std::size_t p = 0; p < packets; ++p) {
        const Vec64 x = normalize_power(gaussian(rng, kDx).span());
        const ChannelRealization ch = draw_realization(cm, snr, rng);
        const Vec64 y = apply_channel(x.span(), ch, rng, noise);
        for (std::size_t k = 0; k < kDx; k += 2) {
          const std::complex<double> hx = ch.h * std::complex<double>(x[k], x[k + 1]);
          power += std::norm(std::complex<double>(y[k], y[k + 1]) - hx);
        }
      }
      // |n|^2 of a circular complex Gaussian is exponential: sd = mean.
      const double count = static_cast<double>(packets * kDx / 2);
      const double measured = power / count;
      const double se = sigma2 / std::sqrt(count);
      const double z = std::abs(measured - sigma2) / se;
      worst_z = std::max(worst_z, z);
      if (!(z <= 3.0)) {
        r.passed = false;
        r.detail += format("%s %+g dB: measured %.5g, configured %.5g (%.1f se); ",
                           channel_name(cm), snr, measured, sigma2, z);
      }
    }
  }
  r.detail += format("%zu packets per point, worst deviation %.2f se (limit 3)", packets, worst_z);
  return r;
}

CheckResult check_forward_moments(std::uint64_t seed, std::size_t samples) {
  const DiffusionSchedule sched;
  const Vec64 s0{1.5, -0.7, 0.0};
  CheckResult r;
  r.passed = true;
  double worst_z = 0.0;
  for (const double t : {0.1, 0.5, 1.0}) {
    SeededRng rng = SeededRng(seed).child("forward-moments").child(static_cast<std::uint64_t>(t * 1000));
    const double big_b = sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t;
    const double var = 1.0 - std::exp(-big_b);
    std::vector<double> sum(s0.size()), sum2(s0.size());
    for (std::size_t n = 0; n < samples; ++n) {
      const Vec64 st = forward_diffuse(s0.span(), t, sched, rng);
      for (std::size_t i = 0; i < s0.size(); ++i) {
        sum[i] += st[i];
        sum2[i] += st[i] * st[i];
      }
    }
    const double n = static_cast<double>(samples);
    for (std::size_t i = 0; i < s0.size(); ++i) {
      const double mean = std::exp(-0.5 * big_b) * s0[i];
      const double m = sum[i] / n;
      const double v = (sum2[i] - n * m * m) / (n - 1.0);
      const double z_mean = std::abs(m - mean) / std::sqrt(var / n);
      const double z_var = std::abs(v - var) / (var * std::sqrt(2.0 / (n - 1.0)));
      worst_z = std::max({worst_z, z_mean, z_var});
      if (!(z_mean <= 3.0 && z_var <= 3.0)) {
        r.passed = false;
        r.detail += format("t=%g dim %zu: mean %.4f vs %.4f, var %.4f vs %.4f; ", t, i, m, mean,
                           v, var);
      }
    }
  }
  r.detail += format("%zu samples per time, worst deviation %.2f se (limit 3)", samples, worst_z);
  return r;
}

CheckResult check_backward_oracle(std::uint64_t seed, std::size_t paths, std::size_t steps) {
  const DiffusionSchedule sched;
  struct Case {
    double mean, var;
  };
  CheckResult r;
  r.passed = true;
  double worst_mean = 0.0, worst_var = 0.0;
  for (const Case c : {Case{0.0, 1.0}, Case{2.0, 0.25}, Case{-1.0, 0.5}, Case{0.5, 2.0}}) {
    SeededRng rng = SeededRng(seed).child("backward-oracle").child(static_cast<std::uint64_t>(c.var * 100));
    // Each coordinate is an independent 1-D path.
    const ScoreFn score = [&](double t, std::span<const double> s, std::span<double> out) {
      const double big_b = sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t;
      const double a = std::exp(-0.5 * big_b);
      const double v = a * a * c.var + 1.0 - std::exp(-big_b);
      for (std::size_t i = 0; i < s.size(); ++i) out[i] = -(s[i] - a * c.mean) / v;
    };
    const Vec64 s0 = backward_solve(gaussian(rng, paths), score, sched, steps);
    double m = 0.0;
    for (double v : s0) m += v;
    m /= static_cast<double>(paths);
    double v = 0.0;
    for (double x : s0) v += (x - m) * (x - m);
    v /= static_cast<double>(paths - 1);
    const double mean_frac = std::abs(m - c.mean) / (0.02 * (1.0 + std::abs(c.mean)));
    const double var_frac = std::abs(v - c.var) / (0.05 * c.var);
    worst_mean = std::max(worst_mean, mean_frac);
    worst_var = std::max(worst_var, var_frac);
    if (!(mean_frac <= 1.0 && var_frac <= 1.0)) {
      r.passed = false;
      r.detail += format("N(%g, %g): mean %.4f, var %.4f; ", c.mean, c.var, m, v);
    }
  }
  r.detail += format("%zu paths, K=%zu; worst mean error %.2f and variance error %.2f of tolerance",
                     paths, steps, worst_mean, worst_var);
  return r;
}

CheckResult check_ldpc_gain(std::uint64_t seed, NoiseConvention noise, std::size_t info_bits) {
  const BaselineConfig bc;
  const LdpcCode code = ldpc_build(bc.code_seed, bc.n, bc.k, bc.col_weight);
  const double rate = static_cast<double>(code.k()) / static_cast<double>(code.n());
  const std::size_t words = (info_bits + code.k() - 1) / code.k();
  const double a = std::sqrt(0.5);
  std::vector<double> coded, uncoded;
  const std::vector<double> grid{0.0, 2.0, 4.0, 6.0};
  for (const double ebn0_db : grid) {
    SeededRng rng = SeededRng(seed).child("ldpc").child(static_cast<std::uint64_t>(ebn0_db));
    const double ebn0 = std::pow(10.0, ebn0_db / 10.0);
    // Each coded bit rides one real axis at amplitude sqrt(1/2), so
    // Eb / N0 = 1 / (2 R sigma^2) with sigma^2 the complex noise power.
    ChannelRealization ch;
    ch.sigma2 = 1.0 / (2.0 * rate * ebn0);
    std::size_t errors = 0;
    for (std::size_t w = 0; w < words; ++w) {
      Bits info(code.k());
      for (auto& b : info) b = static_cast<std::uint8_t>(rng.below(2));
      Vec64 x = bpsk_modulate(code.encode(info));
      for (double& v : x) v *= a;
      Vec64 y = apply_channel(x.span(), ch, rng, noise);
      for (double& v : y) v /= a;
      const auto dec = ldpc_decode(bpsk_llr(y.span(), ch.sigma2).span(), code, bc.max_iterations,
                                   bc.algorithm);
      const Bits got = code.extract_info(dec.word);
      for (std::size_t i = 0; i < info.size(); ++i) errors += got[i] != info[i];
    }
    coded.push_back(static_cast<double>(errors) / static_cast<double>(words * code.k()));
    uncoded.push_back(0.5 * std::erfc(std::sqrt(ebn0)));
  }
  CheckResult r;
  const bool gain = coded[2] <= 0.1 * uncoded[2];
  bool monotone = true;
  for (std::size_t i = 1; i < coded.size(); ++i) monotone = monotone && coded[i] <= coded[i - 1];
  r.passed = gain && monotone;
  r.detail = format("%zu info bits per point; coded BER", words * code.k());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    r.detail += format(" %g dB: %.2e (uncoded %.2e)%s", grid[i], coded[i], uncoded[i],
                       i + 1 < grid.size() ? "," : "");
  }
  return r;
}

CheckResult check_loss_plumbing(std::uint64_t seed) {
  double worst = 0.0;
  std::size_t samples = 0;
  auto compare = [&](double total, double hand) {
    worst = std::max(worst, std::abs(total - hand) / std::max(1.0, std::abs(hand)));
  };

  // Random models and batches.
  for (std::size_t k = 0; k < 8; ++k) {
    SeededRng rng = SeededRng(seed).child("plumbing").child(k);
    Stage2Fixture fx(derive_seed(seed, 100 + k), true);
    const ChannelModel cm = k % 2 == 0 ? ChannelModel::Awgn : ChannelModel::Rayleigh;
    const ChannelRealization channel = draw_realization(cm, rng.uniform(-5.0, 45.0), rng);
    const std::size_t batch = 1 + rng.below(6);
    LossParts mean;
    double hand = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Utterance& u = fx.corpus.utterances[rng.below(fx.corpus.utterances.size())];
      const KbEncoding codes = rvq_encode(fx.model.kb.tx, u.w.span());
      const SeededRng s = rng.child("sample").child(b);
      const LossParts p = stage2_sample(fx.model, u, codes, channel, s);
      mean.ed += p.ed / static_cast<double>(batch);
      mean.prior += p.prior / static_cast<double>(batch);
      mean.diff += p.diff / static_cast<double>(batch);
      const LossParts h = hand_parts(fx.model, u, codes, channel, s);
      hand += (h.ed + h.prior + h.diff) / static_cast<double>(batch);
      ++samples;
    }
    compare(total_loss(mean), hand);
  }

  // First step of a real training run, redrawn from the trainer's streams.
  Stage2Fixture fx(derive_seed(seed, 999), false);
  Stage2Config cfg;
  cfg.epochs = 1;
  cfg.batch = 4;
  cfg.seed = seed;
  const Stage2Result run = train_stage2(fx.corpus, fx.model.kb, cfg);
  const SeededRng root = SeededRng(cfg.seed).child("stage2");
  const SemanticModel init =
      SemanticModel::init(fx.model.kb, fx.corpus.model.dims(), cfg, root.child("init"));
  BatchSampler sampler(fx.corpus.utterances.size(), root.child("batches"));
  SeededRng draw = root.child("channel-draws");
  const auto batch = sampler.next(cfg.batch);
  const double snr = draw.uniform(cfg.snr_min_db, cfg.snr_max_db);
  const ChannelModel cm = cfg.channels[draw.below(cfg.channels.size())];
  const ChannelRealization channel = draw_realization(cm, snr, draw);
  double hand = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Utterance& u = fx.corpus.utterances[batch[b]];
    const LossParts h = hand_parts(init, u, rvq_encode(init.kb.tx, u.w.span()), channel,
                                   sample_rng(cfg.seed, 0, b));
    hand += (h.ed + h.prior + h.diff) / static_cast<double>(cfg.batch);
    ++samples;
  }
  compare(run.loss_history.at(0), hand);

  CheckResult r;
  r.passed = worst <= 1e-12;
  r.detail = format("%zu samples in 9 batches, worst deviation %.2e (limit 1e-12)", samples, worst);
  return r;
}

CheckResult check_kb_fidelity(const Corpus& corpus, const Stage1Config& base) {
  const std::vector<std::size_t> stages{1, 2, 4};
  const std::vector<std::uint64_t> seeds{base.seed, base.seed + 1, base.seed + 2};
  std::size_t decreasing = 0;
  double worst_n4 = 0.0;
  std::string table;
  for (const std::uint64_t s : seeds) {
    std::vector<double> mse;
    for (const std::size_t n : stages) {
      Stage1Config cfg = base;
      cfg.kb.stages = n;
      cfg.seed = s;
      mse.push_back(kb_relative_mse(train_stage1(corpus, cfg).kb, corpus));
    }
    if (mse[0] > mse[1] && mse[1] > mse[2]) ++decreasing;
    worst_n4 = std::max(worst_n4, mse[2]);
    table += format(" seed %llu: %.4f %.4f %.4f;", static_cast<unsigned long long>(s), mse[0],
                    mse[1], mse[2]);
  }
  CheckResult r;
  r.passed = 2 * decreasing > seeds.size() && worst_n4 < 0.1;
  r.detail = format("relative MSE for N=1,2,4 (M=%zu, %zu steps):", base.kb.codes, base.steps) +
             table + format(" strictly decreasing for %zu of %zu seeds", decreasing, seeds.size());
  return r;
}

// ---------------------------------------------------------------- trends

bool trend_holds(std::span<const double> mean, std::span<const double> se, bool increasing,
                 std::string* why) {
  require(mean.size() == se.size(), "trend_holds: size mismatch");
  std::size_t violations = 0;
  for (std::size_t i = 1; i < mean.size(); ++i) {
    const double against = increasing ? mean[i - 1] - mean[i] : mean[i] - mean[i - 1];
    if (!(against > 0.0)) continue;
    ++violations;
    const double tol = std::sqrt(se[i - 1] * se[i - 1] + se[i] * se[i]);
    if (against > tol || violations > 1) {
      if (why != nullptr) {
        *why = format("points %zu-%zu move against the trend by %.4f (allowed %.4f, violation %zu)",
                      i - 1, i, against, tol, violations);
      }
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- suite

namespace {

using CheckFn = std::function<CheckResult()>;

std::vector<std::pair<std::string, CheckFn>> suite(const VerifyOptions& o) {
  const std::uint64_t s = o.seed;
  const std::size_t n = o.grad_instances;
  std::vector<std::pair<std::string, CheckFn>> out{
      {"grad-mlp", [=] { return check_grad_mlp(s, n); }},
      {"grad-skip-mlp", [=] { return check_grad_skip_mlp(s, n); }},
      {"grad-residual-stage", [=] { return check_grad_residual_stage(s, n); }},
      {"grad-knowledge-base", [=] { return check_grad_kb(s, n); }},
  };
  for (const Stage2Module m : {Stage2Module::Residual, Stage2Module::Encoder,
                               Stage2Module::Decoder, Stage2Module::Prior, Stage2Module::Score}) {
    out.emplace_back(std::string("grad-") + stage2_module_name(m),
                     [=] { return check_grad_stage2(m, s, n); });
  }
  const NoiseConvention noise = o.noise;
  out.emplace_back("nearest-code", [=] { return check_nearest_code(s); });
  out.emplace_back("channel-calibration", [=] { return check_channel_calibration(s, noise); });
  out.emplace_back("sde-forward-moments", [=] { return check_forward_moments(s); });
  out.emplace_back("sde-backward-oracle", [=] { return check_backward_oracle(s); });
  out.emplace_back("ldpc-coding-gain", [=] { return check_ldpc_gain(s, noise); });
  out.emplace_back("loss-plumbing", [=] { return check_loss_plumbing(s); });
  if (o.include_training) {
    out.emplace_back("kb-fidelity", [] {
      const RunConfig defaults;
      const CorpusSettings& c = defaults.corpus;
      const Corpus corpus =
          generate_corpus(c.seed, c.dims, c.speakers, c.utterances_per_speaker);
      return check_kb_fidelity(corpus, defaults.stage1_for_corpus());
    });
  }
  return out;
}

}  // namespace

std::vector<std::string> check_names(const VerifyOptions& opts) {
  std::vector<std::string> names;
  for (const auto& [name, fn] : suite(opts)) names.push_back(name);
  return names;
}

std::vector<CheckResult> run_checks(const VerifyOptions& opts,
                                    const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> results;
  for (const auto& [name, fn] : suite(opts)) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("threw: ") + e.what();
    }
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace sctts

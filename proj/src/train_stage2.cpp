#include <cmath>
#include <fstream>
#include <json.hpp>
#include <string>

#include "sctts/error.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/numkit/kernels.hpp"
#include "sctts/numkit/optim.hpp"
#include "sctts/train.hpp"

namespace sctts {

SemanticModel SemanticModel::init(const KbModel& kb, const CorpusDims& dims,
                                  const Stage2Config& cfg, SeededRng rng) {
  require(kb.config.d_w == dims.d_w, "SemanticModel: KB d_w disagrees with the corpus");
  SemanticModel m;
  m.layout = PacketLayout{dims.d_t, cfg.d_r, kb.config.stages, kb.config.codes};
  m.kb = kb;
  m.residual = Mlp::random({2 * dims.d_w, cfg.residual_hidden, cfg.d_r},
                           {Activation::Tanh, Activation::Tanh}, rng.child("residual"));
  m.codec = ChannelCodec::random(m.layout.d_f(), cfg.d_x, cfg.codec_hidden, rng.child("codec"));
  SynthConfig sc = cfg.synth;
  sc.vocab = dims.vocab;
  sc.d_w = dims.d_w;
  sc.d_r = cfg.d_r;
  sc.d_ss = dims.d_ss;
  m.synth = Synthesizer::random(sc, rng.child("synth"));
  return m;
}

Vec64 residual_input(std::span<const double> w, const KbEncoding& codes) {
  const Vec64 sum = codes.code_sum();
  require(sum.size() == w.size(), "residual_input: code and feature sizes differ");
  Vec64 in(2 * w.size());
  std::copy(w.begin(), w.end(), in.begin());
  std::copy(sum.begin(), sum.end(), in.begin() + static_cast<std::ptrdiff_t>(w.size()));
  return in;
}

double total_loss(const LossParts& parts) { return parts.ed + parts.prior + parts.diff; }

Stage2Grads Stage2Grads::zeros_like(const SemanticModel& model) {
  Stage2Grads g;
  g.residual = Vec64(model.residual.param_count());
  g.encoder = Vec64(model.codec.encoder().param_count());
  g.decoder = Vec64(model.codec.decoder().param_count());
  g.prior = Vec64(model.synth.prior_param_count());
  g.score = Vec64(model.synth.score_param_count());
  g.kb = KbGrads::zeros_like(model.kb);
  return g;
}

std::vector<std::span<double>> Stage2Grads::trainable_blocks() {
  return {residual.span(), encoder.span(), decoder.span(), prior.span(), score.span()};
}

namespace {

void note(Trace* trace, const char* what) {
  if (trace != nullptr) trace->emplace_back(what);
}

// Flat parameter views of the synthesizer in Stage2Grads::prior order.
std::vector<std::span<double>> prior_params(Synthesizer& s) {
  return {s.text().params(), s.pitch().params(), s.proj().params()};
}

std::vector<std::span<double>> split_prior(Vec64& g, const Synthesizer& s) {
  auto all = g.span();
  const std::size_t a = s.text().param_count();
  const std::size_t b = s.pitch().param_count();
  return {all.first(a), all.subspan(a, b), all.subspan(a + b)};
}

}  // namespace

LossParts stage2_sample(const SemanticModel& model, const Utterance& u, const KbEncoding& codes,
                        const ChannelRealization& channel, SeededRng rng, Stage2Grads* grads,
                        double scale, Trace* trace) {
  const PacketLayout& lay = model.layout;
  SeededRng channel_rng = rng.child("channel");
  SeededRng diffusion_rng = rng.child("diffusion");

  MlpTape res_tape;
  const Vec64 r_in = residual_input(u.w.span(), codes);
  const Vec64 r = model.residual.forward(r_in.span(), res_tape);
  note(trace, "5 residual-encoder");

  const Vec64 f_e = frame_packet(lay, u.tokens.embedded.span(), r.span(), codes.indices);
  note(trace, "6 padding");

  ChannelCodec::EncodeTape enc_tape;
  const Vec64 x = model.codec.encode(f_e.span(), enc_tape);
  note(trace, "7 channel-encoder");

  const Vec64 y = apply_channel(x.span(), channel, channel_rng);
  note(trace, "8 channel");

  LossParts parts;
  const Equalized eq = equalize(y.span(), channel);
  if (eq.outage) return parts;  // nothing usable reaches the receiver
  SkipMlp::Tape dec_tape;
  const Vec64 f_d = model.codec.decode(eq.y.span(), dec_tape);
  note(trace, "9 channel-decoder");

  const Unframed rx = unframe_packet(lay, f_d.span());
  note(trace, "10 identify-fields");

  const Vec64 w_tilde = rvq_decode(model.kb.rx, rx.indices);
  note(trace, "11 receiver-kb");

  // Token slots are read up to the reference length so that teacher-forced
  // durations line up with the decoded tokens.
  const auto ids = token_id_prefix(rx.t.span(), model.synth.config().vocab, u.tokens.ids.size());
  PriorTape prior_tape;
  const PriorOutputs prior =
      model.synth.prior(ids, w_tilde.span(), rx.r.span(), u.truth.durations, &prior_tape);
  note(trace, "12 prior-encoder");

  const DiffusionSample ds = draw_diffusion_sample(u.truth.frames.rows(), u.truth.frames.cols(),
                                                   model.synth.config().schedule, diffusion_rng);
  ScoreTape score_tape;
  const DiffusionEval dev =
      diffusion_loss(model.synth, u.truth.frames, prior.mu, w_tilde.span(), rx.r.span(), ds,
                     &score_tape);
  note(trace, "13 diffusion-model");

  Vec64 d0(u.truth.durations.size());
  for (std::size_t l = 0; l < d0.size(); ++l) d0[l] = u.truth.durations[l];
  parts.ed = ed_loss(f_e.span(), f_d.span());
  parts.prior = prior_loss(prior.d1.span(), d0.span(), prior.p1.span(), u.truth.pitch.span(),
                           prior.mu, u.truth.frames)
                    .total();
  parts.diff = dev.loss;
  note(trace, "14 total-loss");
  if (grads == nullptr) return parts;

  // Backward, reverse order of the forward pass.
  Vec64 g_r_tilde =
      diffusion_loss_backward(model.synth, dev, score_tape, ds.t, scale, grads->score.span());
  Vec64 g_d1 = norm_loss_grad(prior.d1.span(), d0.span());
  Vec64 g_p1 = norm_loss_grad(prior.p1.span(), u.truth.pitch.span());
  const Vec64 g_mu_flat = norm_loss_grad(prior.mu.flat(), u.truth.frames.flat());
  Mat64 g_mu(prior.mu.rows(), prior.mu.cols());
  for (std::size_t i = 0; i < g_mu_flat.size(); ++i) g_mu.flat()[i] = scale * g_mu_flat[i];
  for (double& v : g_d1) v *= scale;
  for (double& v : g_p1) v *= scale;
  const Vec64 g_r_prior = model.synth.prior_backward(prior, prior_tape, rx.r.span(), g_d1.span(),
                                                     g_p1.span(), g_mu, grads->prior.span());
  kernels::axpy(1.0, g_r_prior.span(), g_r_tilde.span());

  // Each loss term trains only the parameters it is written against:
  // L_ED moves the codec; the prior and diffusion terms reach theta_r through
  // the codec's input Jacobians without updating the codec.
  const Vec64 g_ed = norm_loss_grad(f_e.span(), f_d.span());
  Vec64 g_fd(f_d.size());
  kernels::axpy(-scale, g_ed.span(), g_fd.span());
  const Vec64 g_x = model.codec.decode_backward(dec_tape, g_fd.span(), grads->decoder.span());
  model.codec.encode_backward(enc_tape, g_x.span(), grads->encoder.span());

  Vec64 g_fd_r(f_d.size());
  std::copy(g_r_tilde.begin(), g_r_tilde.end(),
            g_fd_r.begin() + static_cast<std::ptrdiff_t>(lay.r_offset()));
  const Vec64 g_x_r = model.codec.decode_backward_input(dec_tape, g_fd_r.span());
  const Vec64 g_fe_r = model.codec.encode_backward_input(enc_tape, g_x_r.span());
  model.residual.backward(res_tape, g_fe_r.span().subspan(lay.r_offset(), lay.d_r),
                          grads->residual.span());
  return parts;
}

SeededRng sample_rng(std::uint64_t seed, std::size_t step, std::size_t slot) {
  return SeededRng(seed).child("stage2").child("noise").child(step).child(slot);
}

std::size_t stage2_steps(std::size_t corpus_size, const Stage2Config& cfg) {
  return cfg.epochs * ((corpus_size + cfg.batch - 1) / cfg.batch);
}

Stage2Result train_stage2(const Corpus& corpus, const KbModel& kb, const Stage2Config& cfg,
                          bool record_trace) {
  require(!corpus.utterances.empty(), "train_stage2: empty corpus");
  require(cfg.epochs >= 1 && cfg.batch >= 1, "train_stage2: epochs and batch must be positive");
  require(!cfg.channels.empty(), "train_stage2: no channel models");
  require(cfg.snr_min_db <= cfg.snr_max_db, "train_stage2: empty SNR range");
  const SeededRng root = SeededRng(cfg.seed).child("stage2");

  Stage2Result out;
  Trace* trace = record_trace ? &out.trace : nullptr;
  out.model = SemanticModel::init(kb, corpus.model.dims(), cfg, root.child("init"));
  note(trace, "1 initialize");
  SemanticModel& model = out.model;

  // Lines 2-3 do not depend on trained parameters; run them once.
  note(trace, "2 text-tokenizer");
  std::vector<KbEncoding> codes;
  codes.reserve(corpus.utterances.size());
  for (const auto& u : corpus.utterances) codes.push_back(rvq_encode(model.kb.tx, u.w.span()));
  note(trace, "3 transmitter-kb");

  BatchSampler sampler(corpus.utterances.size(), root.child("batches"));
  SeededRng draw_rng = root.child("channel-draws");
  Stage2Grads grads = Stage2Grads::zeros_like(model);
  Adam opt_residual;
  Adam opt_codec;
  Adam opt_prior;
  Adam opt_score;
  out.steps = stage2_steps(corpus.utterances.size(), cfg);
  out.loss_history.reserve(out.steps);
  const double scale = 1.0 / static_cast<double>(cfg.batch);

  for (std::size_t step = 0; step < out.steps; ++step) {
    note(trace, "4 epoch-loop");
    const auto batch = sampler.next(cfg.batch);
    const double snr = draw_rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
    const ChannelModel cm = cfg.channels[draw_rng.below(cfg.channels.size())];
    const ChannelRealization channel = draw_realization(cm, snr, draw_rng);

    zero(grads.trainable_blocks());
    LossParts mean;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const LossParts p =
          stage2_sample(model, corpus.utterances[batch[b]], codes[batch[b]], channel,
                        sample_rng(cfg.seed, step, b), &grads, scale, b == 0 ? trace : nullptr);
      mean.ed += scale * p.ed;
      mean.prior += scale * p.prior;
      mean.diff += scale * p.diff;
    }
    const double loss = total_loss(mean);
    if (!std::isfinite(loss) || loss > cfg.divergence_limit) {
      throw DivergenceError("stage two diverged at step " + std::to_string(step) + " (loss " +
                            std::to_string(loss) + ")");
    }
    if (!grads.kb.all_zero()) throw StateError("stage two produced a knowledge-base gradient");
    out.loss_history.push_back(loss);
    out.part_history.push_back(mean);

    if (cfg.clip_norm > 0.0) {
      // Small-t score-matching draws carry a 1/sigma_t weight; a shared cap
      // would let them starve every other module for that step.
      clip_grad_norm({grads.residual.span()}, cfg.clip_norm);
      clip_grad_norm({grads.encoder.span(), grads.decoder.span()}, cfg.clip_norm);
      clip_grad_norm({grads.prior.span()}, cfg.clip_norm);
      clip_grad_norm({grads.score.span()}, cfg.clip_norm);
    }
    const double decay = cosine_decay(step, out.steps, cfg.lr_final_fraction);
    opt_residual.step({model.residual.params()}, {grads.residual.span()}, decay * cfg.lr_residual);
    auto codec_params = model.codec.encoder().param_blocks();
    auto codec_grads = model.codec.encoder().split(grads.encoder.span());
    for (auto b : model.codec.decoder().param_blocks()) codec_params.push_back(b);
    for (auto b : model.codec.decoder().split(grads.decoder.span())) codec_grads.push_back(b);
    opt_codec.step(codec_params, codec_grads, decay * cfg.lr_codec);
    opt_prior.step(prior_params(model.synth), split_prior(grads.prior, model.synth),
                   decay * cfg.lr_prior);
    opt_score.step({model.synth.score().params()}, {grads.score.span()}, decay * cfg.lr_diff);
    note(trace, "15 sgd-update");
    trace = nullptr;  // one step is enough to show the order
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  require(ckpt.stage == 1 || ckpt.stage == 2, "save_checkpoint: stage must be 1 or 2");
  ByteWriter out;
  out.magic("SCCK");
  out.u16(kCheckpointVersion);
  out.u8(ckpt.stage);
  const PacketLayout& lay = ckpt.model.layout;
  for (const std::size_t v : {lay.d_t, lay.d_r, lay.n_indices, lay.codes}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  write_kb(out, ckpt.model.kb);
  if (ckpt.stage == 2) {
    write_mlp(out, ckpt.model.residual);
    write_skip_mlp(out, ckpt.model.codec.encoder());
    write_skip_mlp(out, ckpt.model.codec.decoder());
    write_synth(out, ckpt.model.synth);
  }
  out.u64(ckpt.steps);
  out.f64_array(ckpt.stage1_loss);
  out.f64_array(ckpt.stage2_loss);
  out.str(ckpt.config_json);
  out.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader in = ByteReader::load(path);
  in.expect_magic("SCCK");
  if (in.u16() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint c;
  c.stage = in.u8();
  if (c.stage != 1 && c.stage != 2) throw FormatError("checkpoint stage must be 1 or 2");
  PacketLayout& lay = c.model.layout;
  for (std::size_t* v : {&lay.d_t, &lay.d_r, &lay.n_indices, &lay.codes}) *v = in.u32();
  c.model.kb = read_kb(in);
  if (lay.n_indices != c.model.kb.config.stages || lay.codes != c.model.kb.config.codes) {
    throw FormatError("checkpoint packet layout disagrees with its knowledge base");
  }
  if (c.stage == 2) {
    c.model.residual = read_mlp(in);
    SkipMlp enc = read_skip_mlp(in);
    SkipMlp dec = read_skip_mlp(in);
    try {
      c.model.codec = ChannelCodec(std::move(enc), std::move(dec));
    } catch (const ContractError& e) {
      throw FormatError(std::string("checkpoint codec: ") + e.what());
    }
    c.model.synth = read_synth(in);
    if (c.model.codec.d_f() != lay.d_f() || c.model.residual.output_size() != lay.d_r ||
        c.model.synth.config().d_r != lay.d_r) {
      throw FormatError("checkpoint networks disagree with the packet layout");
    }
  }
  c.steps = in.u64();
  c.stage1_loss = in.f64_array();
  c.stage2_loss = in.f64_array();
  c.config_json = in.str();
  in.expect_end();
  return c;
}

void write_loss_history(const std::vector<double>& losses, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << nlohmann::json{{"steps", losses.size()}, {"loss", losses}}.dump(1) << '\n';
}

}  // namespace sctts

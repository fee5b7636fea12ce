#include "sctts/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

#include "sctts/error.hpp"

namespace sctts {

const char* scheme_name(Scheme s) noexcept {
  return s == Scheme::Semantic ? "semantic" : "baseline";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "semantic") return Scheme::Semantic;
  if (name == "baseline") return Scheme::Baseline;
  throw ContractError("unknown scheme '" + std::string(name) + "'");
}

std::string scheme_tag(Scheme s, ChannelModel channel) {
  return std::string(scheme_name(s)) + "-" + channel_name(channel);
}

std::uint64_t trial_seed(const TrialSpec& spec) {
  std::uint64_t s = derive_seed(spec.master_seed, scheme_tag(spec.scheme, spec.channel));
  s = derive_seed(s, std::bit_cast<std::uint64_t>(spec.snr_db));
  s = derive_seed(s, static_cast<std::uint64_t>(spec.budget_bits));
  return derive_seed(s, static_cast<std::uint64_t>(spec.trial));
}

std::vector<SpeakerProfile> corpus_speakers(const Corpus& corpus) {
  std::vector<SpeakerProfile> out;
  for (const auto& u : corpus.utterances) {
    const bool seen = std::any_of(out.begin(), out.end(),
                                  [&](const SpeakerProfile& s) { return s.id == u.speaker.id; });
    if (!seen) out.push_back(u.speaker);
  }
  return out;
}

Utterance test_utterance(const CorpusModel& world, const std::vector<SpeakerProfile>& speakers,
                         std::uint64_t master_seed, std::size_t trial) {
  require(!speakers.empty(), "test_utterance: no speakers");
  SeededRng rng = SeededRng(master_seed).child("test-utterances").child(trial);
  const SpeakerProfile& spk = speakers[rng.below(speakers.size())];
  const auto ids = world.random_token_ids(rng);
  return world.synthesize_utterance(spk, world.tokenize(ids));
}

Synthesis synthesize(const SemanticModel& model, const LinearVocoder& vocoder,
                     const ReceiverFields& rx, SeededRng rng, std::size_t steps,
                     std::size_t min_tokens) {
  Synthesis out;
  out.ids = decode_token_ids(rx.t.span(), model.synth.config().vocab, min_tokens);
  if (out.ids.empty()) {
    out.frames = Mat64(0, model.synth.config().d_ss);
    return out;
  }
  const PriorOutputs prior = model.synth.prior(out.ids, rx.w.span(), rx.r.span());
  const Mat64 s0 = model.synth.sample(prior.mu, rx.w.span(), rx.r.span(), rng, steps);
  out.frames = vocoder.analyze(vocoder.vocode(s0));
  return out;
}

namespace {

void score(TrialRecord& rec, const Utterance& u, const CorpusModel& world, const Synthesis& syn) {
  rec.wer_token = wer(u.tokens.ids, syn.ids);
  if (syn.frames.rows() == 0) {
    rec.wer_synth = 1.0;
    rec.spk = -1.0;
    return;
  }
  rec.wer_synth = wer(u.tokens.ids, world.oracle_recognize(syn.frames));
  rec.spk = spk(world, syn.frames, u.speaker.factors.span()).value;
}

void mark_failed(TrialRecord& rec, Outage why) {
  rec.outage = why;
  rec.wer_token = 1.0;
  rec.wer_synth = 1.0;
  rec.spk = -1.0;
}

}  // namespace

TrialRecord run_trial(const SemanticModel& model, const TrialContext& ctx, const TrialSpec& spec) {
  require(ctx.world != nullptr && ctx.speakers != nullptr, "run_trial: incomplete context");
  const CorpusModel& world = *ctx.world;
  TrialRecord rec;
  rec.scheme = scheme_tag(spec.scheme, spec.channel);
  rec.snr_db = spec.snr_db;
  rec.budget_bits = spec.budget_bits;
  rec.seed = spec.master_seed;
  rec.trial = spec.trial;

  const SeededRng rng(trial_seed(spec));
  SeededRng channel_rng = rng.child("channel");
  const Utterance u = test_utterance(world, *ctx.speakers, spec.master_seed, spec.trial);
  const KbEncoding codes = rvq_encode(model.kb.tx, u.w.span());
  const Vec64 r = model.residual.apply(residual_input(u.w.span(), codes).span());
  const ChannelRealization ch = draw_realization(spec.channel, spec.snr_db, channel_rng);
  rec.h = ch.h;
  const SynthConfig& sc = model.synth.config();
  const LinearVocoder vocoder(sc.d_ss, sc.d_audio, sc.vocoder_seed);

  ReceiverFields rx;
  if (spec.scheme == Scheme::Semantic) {
    require(analog_bits_used(model.codec.d_x()) == spec.budget_bits,
            "run_trial: model d_x does not match the budget");
    rec.bits_used = analog_bits_used(model.codec.d_x());
    const Vec64 f_e = frame_packet(model.layout, u.tokens.embedded.span(), r.span(), codes.indices);
    const Vec64 x = model.codec.encode(f_e.span());
    const Vec64 y = apply_channel(x.span(), ch, channel_rng, ctx.noise);
    const Equalized eq = equalize(y.span(), ch);
    if (eq.outage) {
      mark_failed(rec, Outage::Faded);
      return rec;
    }
    const Unframed un = unframe_packet(model.layout, model.codec.decode(eq.y.span()).span());
    rx = {un.t, un.r, rvq_decode(model.kb.rx, un.indices)};
  } else {
    require(ctx.baseline != nullptr, "run_trial: baseline codec missing");
    const BaselineSource src{u.tokens.embedded, r, u.w};
    const BaselineReceived got =
        ctx.baseline->transmit(src, spec.budget_bits, ch, channel_rng, ctx.noise);
    rec.bits_used = got.plan.channel_bits;
    if (!got.plan.feasible) {
      mark_failed(rec, Outage::Infeasible);
      return rec;
    }
    if (got.outage) {
      mark_failed(rec, Outage::Faded);
      return rec;
    }
    rx = {got.fields.t, got.fields.r, got.fields.w};
  }
  score(rec, u, world, synthesize(model, vocoder, rx, rng.child("synthesis"),
                                   ctx.inference_steps, world.dims().min_len));
  return rec;
}

std::vector<TrialRecord> run_sweep(const ModelSet& models, const TrialContext& ctx,
                                   const SweepGrid& grid) {
  require(!models.empty(), "run_sweep: no trained models");
  std::vector<std::pair<const SemanticModel*, TrialSpec>> jobs;
  for (const Scheme scheme : grid.schemes) {
    for (const std::size_t budget : grid.budgets) {
      const SemanticModel* model = nullptr;
      const auto it = models.find(budget / kBitsPerAnalogReal);
      if (scheme == Scheme::Baseline) {
        model = &models.rbegin()->second;
      } else if (budget % kBitsPerAnalogReal == 0 && it != models.end()) {
        model = &it->second;
      } else {
        throw ContractError("run_sweep: no checkpoint with d_x = " +
                            std::to_string(budget / kBitsPerAnalogReal) + " for budget " +
                            std::to_string(budget));
      }
      for (const ChannelModel ch : grid.channels) {
        for (const double snr : grid.snr_db) {
          for (std::size_t t = 0; t < grid.trials; ++t) {
            jobs.push_back({model, TrialSpec{scheme, ch, snr, budget, grid.master_seed, t}});
          }
        }
      }
    }
  }

  std::vector<TrialRecord> out(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        out[i] = run_trial(*jobs[i].first, ctx, jobs[i].second);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(grid.jobs, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  sort_records(out);
  return out;
}

}  // namespace sctts

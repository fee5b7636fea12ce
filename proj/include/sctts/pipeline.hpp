#pragma once

// Transmit -> receive -> synthesize -> score for one trial, and sweeps over
// (scheme, channel, SNR, budget, trial) grids.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sctts/baseline.hpp"
#include "sctts/corpus.hpp"
#include "sctts/link.hpp"
#include "sctts/metrics.hpp"
#include "sctts/synth.hpp"
#include "sctts/train.hpp"

namespace sctts {

enum class Scheme : std::uint8_t { Semantic, Baseline };

const char* scheme_name(Scheme s) noexcept;
Scheme parse_scheme(std::string_view name);
std::string scheme_tag(Scheme s, ChannelModel channel);

struct TrialSpec {
  Scheme scheme = Scheme::Semantic;
  ChannelModel channel = ChannelModel::Awgn;
  double snr_db = 0.0;
  std::size_t budget_bits = 0;
  std::uint64_t master_seed = 0;
  std::size_t trial = 0;
};

// hash(master, scheme, channel, snr, budget, trial).
std::uint64_t trial_seed(const TrialSpec& spec);

// Held-out test utterance for a trial index: a corpus speaker and a fresh
// sentence. Depends on (master seed, trial) only, so every grid point sees
// the same utterance for a given trial index.
Utterance test_utterance(const CorpusModel& world, const std::vector<SpeakerProfile>& speakers,
                         std::uint64_t master_seed, std::size_t trial);

// Distinct speakers of a corpus in order of first appearance.
std::vector<SpeakerProfile> corpus_speakers(const Corpus& corpus);

struct ReceiverFields {
  Vec64 t;
  Vec64 r;
  Vec64 w;
};

struct Synthesis {
  std::vector<std::uint32_t> ids;  // decoded tokens
  Mat64 frames;                    // features recovered from the vocoded waveform
};

// Semantic decoder shared by every scheme. Sentences are known to hold at
// least `min_tokens` tokens.
Synthesis synthesize(const SemanticModel& model, const LinearVocoder& vocoder,
                     const ReceiverFields& rx, SeededRng rng, std::size_t steps,
                     std::size_t min_tokens = 1);

struct TrialContext {
  const CorpusModel* world = nullptr;
  const std::vector<SpeakerProfile>* speakers = nullptr;
  const BaselineCodec* baseline = nullptr;
  std::size_t inference_steps = 200;
  NoiseConvention noise = NoiseConvention::PerComplex;
};

// The model's d_x must match the budget for the semantic scheme.
TrialRecord run_trial(const SemanticModel& model, const TrialContext& ctx, const TrialSpec& spec);

struct SweepGrid {
  std::vector<Scheme> schemes{Scheme::Semantic, Scheme::Baseline};
  std::vector<ChannelModel> channels{ChannelModel::Awgn, ChannelModel::Rayleigh};
  std::vector<double> snr_db{-5, 0, 5, 10, 15};
  std::vector<std::size_t> budgets{1536};
  std::size_t trials = 100;
  std::uint64_t master_seed = 1;
  std::size_t jobs = 1;
  bool operator==(const SweepGrid&) const = default;
};

// Models keyed by d_x. The semantic scheme at budget B uses d_x = B / 16; the
// baseline always takes the residual encoder and synthesizer of the largest
// model, so its synthesis does not change with the budget.
using ModelSet = std::map<std::size_t, SemanticModel>;

std::vector<TrialRecord> run_sweep(const ModelSet& models, const TrialContext& ctx,
                                   const SweepGrid& grid);

}  // namespace sctts

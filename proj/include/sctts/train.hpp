#pragma once

// Two-stage training. Stage one fits the knowledge bases on the noiseless
// path; stage two trains the residual encoder, channel codec, prior encoder
// and score network end to end with the knowledge bases frozen.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sctts/corpus.hpp"
#include "sctts/kb.hpp"
#include "sctts/link.hpp"
#include "sctts/synth.hpp"

namespace sctts {

struct Stage1Config {
  KbConfig kb;
  KbWeights weights;
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double lr = 0.01;           // networks
  double codebook_lr = 0.5;  // codebooks; each code is selected by ~batch/M samples per step
  // A code that wins no assignment for this many steps is moved onto a
  // pre-quantization vector from the current batch. 0 disables.
  std::size_t dead_code_steps = 200;
  double clip_norm = 5.0;  // global gradient-norm cap, 0 disables
  double divergence_limit = 1e6;
  std::uint64_t seed = 1;
  bool operator==(const Stage1Config&) const = default;
};

struct Stage1Result {
  KbModel kb;
  std::vector<double> loss_history;  // mean batch L_KB per step
};

Stage1Result train_stage1(const Corpus& corpus, const Stage1Config& cfg);

// Mean of |w - w~|^2 / |w|^2 over the corpus on the noiseless path.
double kb_relative_mse(const KbModel& kb, const Corpus& corpus);

// Visits 0..n-1 in reshuffled epochs; each epoch is a fresh permutation.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, SeededRng rng);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  void reshuffle();
  std::size_t n_;
  SeededRng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------- stage two

struct Stage2Config {
  std::size_t d_r = 16;
  std::size_t d_x = 96;
  std::size_t residual_hidden = 64;
  std::size_t codec_hidden = 128;
  SynthConfig synth;  // vocab, d_w, d_r, d_ss are overwritten from the corpus and d_r
  std::size_t epochs = 600;  // J
  std::size_t batch = 16;
  // Adam step sizes, one optimizer per module.
  double lr_residual = 1e-3;
  double lr_codec = 1e-3;
  double lr_prior = 1e-3;
  double lr_diff = 1e-3;
  double lr_final_fraction = 0.001;  // cosine decay floor, relative to the step sizes above
  double clip_norm = 1.0;  // per-module gradient-norm cap, 0 disables
  // Training SNR range. Reaching well above the evaluation grid gives the
  // prior enough packets whose tokens survive the channel.
  double snr_min_db = -5.0;
  double snr_max_db = 45.0;
  std::vector<ChannelModel> channels{ChannelModel::Awgn, ChannelModel::Rayleigh};
  double divergence_limit = 1e6;
  std::uint64_t seed = 1;
  bool operator==(const Stage2Config&) const = default;
};

// Every trained parameter set plus the fixed packet layout.
struct SemanticModel {
  PacketLayout layout;
  KbModel kb;
  Mlp residual;  // theta_r: [w | sum of feature codes] -> r
  ChannelCodec codec;
  Synthesizer synth;

  static SemanticModel init(const KbModel& kb, const CorpusDims& dims, const Stage2Config& cfg,
                            SeededRng rng);
  bool operator==(const SemanticModel&) const = default;
};

Vec64 residual_input(std::span<const double> w, const KbEncoding& codes);

struct LossParts {
  double ed = 0.0;     // channel codec term
  double prior = 0.0;  // prior encoder term
  double diff = 0.0;   // score matching term
};
double total_loss(const LossParts& parts);

struct Stage2Grads {
  Vec64 residual;
  Vec64 encoder;
  Vec64 decoder;
  Vec64 prior;
  Vec64 score;
  KbGrads kb;  // never written; checked to stay zero

  static Stage2Grads zeros_like(const SemanticModel& model);
  std::vector<std::span<double>> trainable_blocks();
};

// One named training-loop operation per entry, numbered in execution order,
// e.g. "5 residual-encoder".
using Trace = std::vector<std::string>;

// Steps 5-14 of the training loop for one utterance. `codes` is the frozen
// transmitter-KB output for the utterance. Channel noise and the diffusion draw come from `rng`.
// With `grads`, gradients of scale * L_total are accumulated.
LossParts stage2_sample(const SemanticModel& model, const Utterance& u, const KbEncoding& codes,
                        const ChannelRealization& channel, SeededRng rng,
                        Stage2Grads* grads = nullptr, double scale = 1.0, Trace* trace = nullptr);

// Stream handed to stage2_sample for batch slot `slot` of step `step`.
SeededRng sample_rng(std::uint64_t seed, std::size_t step, std::size_t slot);

struct Stage2Result {
  SemanticModel model;
  std::vector<double> loss_history;  // mean batch L_total per step
  std::vector<LossParts> part_history;
  std::size_t steps = 0;
  Trace trace;  // preamble plus the first step, when requested
};

Stage2Result train_stage2(const Corpus& corpus, const KbModel& kb, const Stage2Config& cfg,
                          bool record_trace = false);

std::size_t stage2_steps(std::size_t corpus_size, const Stage2Config& cfg);

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint8_t stage = 1;  // 1: knowledge bases only; 2: full model
  SemanticModel model;     // only model.kb is meaningful for stage 1
  std::uint64_t steps = 0;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;
  std::string config_json;  // training configuration snapshot

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void write_loss_history(const std::vector<double>& losses, const std::filesystem::path& path);

}  // namespace sctts

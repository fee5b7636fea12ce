#pragma once

// Synthetic speech corpus with analytic recognizer and speaker oracles.
//
// Every frame is a linear mixture s[f] = G * [one_hot(token) | pitch | v_spk]
// with G of full column rank, so least squares through G recovers the token
// and the speaker exactly on clean features. The demonstration feature w is a
// fixed linear map of the frame mean and plays the frozen feature-extractor
// role.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

struct CorpusDims {
  std::size_t vocab = 32;        // V; id 0 is the padding id and never drawn
  std::size_t d_t = 32;          // token vector length
  std::size_t d_s = 8;           // speaker latent factors
  std::size_t d_ss = 64;         // frame feature dimension
  std::size_t d_w = 64;          // demonstration feature dimension
  std::size_t min_len = 4;
  std::size_t max_len = 10;
  std::size_t max_duration = 4;  // frames per token in 1..max_duration

  std::size_t mixing_cols() const noexcept { return vocab + 1 + d_s; }
  bool operator==(const CorpusDims&) const = default;
};

struct SpeakerProfile {
  std::uint32_t id = 0;
  Vec64 factors;  // v_spk, entries in [-1, 1]
  bool operator==(const SpeakerProfile&) const = default;
};

struct TokenVector {
  Vec64 embedded;                  // id / (V - 1), zero-padded to d_t
  std::vector<std::uint32_t> ids;  // raw ids, length L
  bool operator==(const TokenVector&) const = default;
};

struct GroundTruth {
  std::vector<std::uint32_t> durations;  // d_0, frames per token
  Vec64 pitch;                           // p_0, one value per frame
  Mat64 frames;                          // s_0^g, F x d_ss
  std::size_t frame_count() const noexcept { return frames.rows(); }
  bool operator==(const GroundTruth&) const = default;
};

struct Utterance {
  SpeakerProfile speaker;
  TokenVector tokens;
  Vec64 w;
  GroundTruth truth;
  bool operator==(const Utterance&) const = default;
};

// The fixed world a corpus is drawn from: mixing matrix, feature map,
// per-token duration and pitch tables. A deterministic function of
// (seed, dims).
class CorpusModel {
 public:
  static constexpr double kMaxCondition = 1e6;

  CorpusModel(std::uint64_t seed, CorpusDims dims);

  std::uint64_t seed() const noexcept { return seed_; }
  const CorpusDims& dims() const noexcept { return dims_; }
  const Mat64& mixing() const noexcept { return mixing_; }
  const Mat64& feature_map() const noexcept { return feature_map_; }
  double mixing_condition() const noexcept { return condition_; }
  std::uint32_t redraws() const noexcept { return redraws_; }

  SpeakerProfile generate_speaker(std::uint32_t speaker_id) const;
  TokenVector tokenize(std::span<const std::uint32_t> ids) const;
  // Random sentence: length in [min_len, max_len], ids in 1..V-1, no
  // consecutive repeats.
  std::vector<std::uint32_t> random_token_ids(SeededRng& rng) const;
  Utterance synthesize_utterance(const SpeakerProfile& speaker, const TokenVector& tokens) const;

  std::uint32_t token_duration(std::uint32_t id) const { return durations_.at(id); }
  double base_pitch(std::span<const double> factors) const;
  double token_pitch_offset(std::uint32_t id) const { return pitch_offsets_.at(id); }
  // Frame feature for one (token, pitch, speaker) triple.
  Vec64 mix_frame(std::uint32_t id, double pitch, std::span<const double> factors) const;
  // w from a frame matrix: feature map applied to the frame mean.
  Vec64 demonstration_feature(const Mat64& frames) const;

  // Least-squares coefficients of one frame through G.
  Vec64 unmix_frame(std::span<const double> frame) const;
  // Per-frame token argmax (ties to the lowest id), duplicates collapsed.
  std::vector<std::uint32_t> oracle_recognize(const Mat64& frames) const;
  std::vector<std::uint32_t> frame_tokens(const Mat64& frames) const;
  // Frame mean of the speaker block of the least-squares coefficients.
  Vec64 oracle_speaker_embed(const Mat64& frames) const;

 private:
  std::uint64_t seed_;
  CorpusDims dims_;
  Mat64 mixing_;       // d_ss x (V + 1 + d_s)
  Mat64 unmixing_;     // (V + 1 + d_s) x d_ss, (G^T G)^{-1} G^T
  Mat64 feature_map_;  // d_w x d_ss
  std::vector<std::uint32_t> durations_;
  std::vector<double> pitch_offsets_;
  double condition_ = 0.0;
  std::uint32_t redraws_ = 0;
};

struct Corpus {
  CorpusModel model;
  std::uint32_t speakers = 0;
  std::vector<Utterance> utterances;
};

Corpus generate_corpus(std::uint64_t seed, const CorpusDims& dims, std::uint32_t speakers,
                       std::uint32_t utterances_per_speaker);

inline constexpr std::uint16_t kCorpusVersion = 1;

// Binary corpus file ("SCTC") and its JSON manifest.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus_manifest(const Corpus& corpus, const std::filesystem::path& corpus_path,
                           const std::filesystem::path& manifest_path);

}  // namespace sctts

#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sctts/corpus.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

// Unit-cost edit distance between token sequences.
std::size_t levenshtein(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

// levenshtein / |reference|. Throws ContractError on an empty reference.
double wer(std::span<const std::uint32_t> reference, std::span<const std::uint32_t> hypothesis);

struct SpkScore {
  double value = -1.0;
  bool degenerate = false;  // no frames or a zero speaker embedding
};

// Cosine between the oracle speaker embedding of `frames` and v_spk.
SpkScore spk(const CorpusModel& world, const Mat64& frames, std::span<const double> v_spk);

inline constexpr std::size_t kBitsPerAnalogReal = 16;

// Analog schemes: 16 bits per transmitted real.
std::size_t analog_bits_used(std::size_t d_x) noexcept;

enum class Outage : int { None = 0, Faded = 1, Infeasible = 2 };

struct TrialRecord {
  std::string scheme;  // e.g. "semantic-awgn"
  double snr_db = 0.0;
  std::size_t budget_bits = 0;
  std::uint64_t seed = 0;  // master seed of the sweep
  std::size_t trial = 0;
  double wer_token = 0.0;
  double wer_synth = 0.0;
  double spk = 0.0;
  Outage outage = Outage::None;
  std::complex<double> h{1.0, 0.0};
  std::size_t bits_used = 0;
};

inline constexpr const char* kTrialCsvHeader =
    "scheme,snr_db,budget_bits,seed,trial,wer_token,wer_synth,spk,outage";

// Canonical order: (scheme, snr_db, budget_bits, seed, trial).
void sort_records(std::vector<TrialRecord>& records);
std::string trial_csv(std::vector<TrialRecord> records);

struct PointSummary {
  std::string scheme;
  double snr_db = 0.0;
  std::size_t budget_bits = 0;
  std::size_t trials = 0;
  double wer_token = 0.0, wer_token_se = 0.0;
  double wer_synth = 0.0, wer_synth_se = 0.0;
  double spk = 0.0, spk_se = 0.0;
  std::size_t outages = 0;
  std::size_t infeasible = 0;
};

std::vector<PointSummary> summarize(std::vector<TrialRecord> records);
std::string summary_csv(const std::vector<PointSummary>& points);

}  // namespace sctts

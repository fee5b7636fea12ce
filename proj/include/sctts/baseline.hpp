#pragma once

// Separate source and channel coding reference: uniform PCM, a regular LDPC
// code decoded by belief propagation, and BPSK over the same block-fading
// channel as the semantic scheme.

#include <cstdint>
#include <span>
#include <vector>

#include "sctts/link.hpp"
#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

using Bits = std::vector<std::uint8_t>;  // one bit (0/1) per entry

struct PcmConfig {
  unsigned bits = 8;
  bool operator==(const PcmConfig&) const = default;
};

// q = floor((v + 1) / 2 * 2^b), clamped to [0, 2^b - 1]; big-endian per sample.
Bits pcm_encode(std::span<const double> v, const PcmConfig& cfg);
// Bin centres. Throws DecodeError when the length is not a multiple of b.
Vec64 pcm_decode(std::span<const std::uint8_t> bits, const PcmConfig& cfg);

class LdpcCode {
 public:
  std::size_t n() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t m() const noexcept { return n_ - k_; }
  const std::vector<std::vector<std::uint32_t>>& check_vars() const noexcept { return checks_; }
  const std::vector<std::vector<std::uint32_t>>& var_checks() const noexcept { return vars_; }
  // Codeword positions carrying the information bits, in order.
  const std::vector<std::uint32_t>& info_positions() const noexcept { return info_pos_; }
  std::uint32_t attempts() const noexcept { return attempts_; }
  std::size_t four_cycles() const;

  Bits encode(std::span<const std::uint8_t> info) const;
  bool is_codeword(std::span<const std::uint8_t> word) const;
  Bits extract_info(std::span<const std::uint8_t> word) const;

 private:
  friend LdpcCode ldpc_build(std::uint64_t, std::size_t, std::size_t, std::size_t);

  std::size_t n_ = 0;
  std::size_t k_ = 0;
  std::vector<std::vector<std::uint32_t>> checks_;  // check -> variables
  std::vector<std::vector<std::uint32_t>> vars_;    // variable -> checks
  std::vector<std::uint32_t> info_pos_;
  std::vector<std::uint32_t> parity_pos_;
  // parity_pos_[i] = XOR of info bits selected by row i (bit j <-> info j).
  std::vector<std::vector<std::uint64_t>> parity_rows_;
  std::uint32_t attempts_ = 0;
};

// Regular (col_weight, n col_weight / (n - k)) code from a random socket
// permutation with a 4-cycle reduction pass. Rank-deficient draws are redrawn
// up to 64 times, then ContractError.
LdpcCode ldpc_build(std::uint64_t seed, std::size_t n, std::size_t k, std::size_t col_weight = 3);

enum class BpAlgorithm : std::uint8_t { SumProduct, MinSum };

struct LdpcDecodeResult {
  Bits word;  // hard decisions, length n
  bool converged = false;
  std::size_t iterations = 0;
};

// llr > 0 favours bit 0. At least one iteration always runs.
LdpcDecodeResult ldpc_decode(std::span<const double> llr, const LdpcCode& code,
                             std::size_t max_iterations = 50,
                             BpAlgorithm algorithm = BpAlgorithm::SumProduct);

// 0 -> +1, 1 -> -1.
Vec64 bpsk_modulate(std::span<const std::uint8_t> bits);
// 2 y / sigma^2 with sigma^2 the per-real noise variance.
Vec64 bpsk_llr(std::span<const double> y, double sigma2);

struct BaselineConfig {
  PcmConfig pcm;
  std::size_t n = 128;
  std::size_t k = 64;
  std::size_t col_weight = 3;
  std::size_t max_iterations = 50;
  BpAlgorithm algorithm = BpAlgorithm::SumProduct;
  std::uint64_t code_seed = 0x1d9c;
  bool operator==(const BaselineConfig&) const = default;
};

// Source fields in transmission order; truncation removes w first, then r.
struct BaselineSource {
  Vec64 t;
  Vec64 r;
  Vec64 w;
};

struct BaselinePlan {
  bool feasible = false;  // t fits entirely
  std::size_t codewords = 0;
  std::size_t t_samples = 0;
  std::size_t r_samples = 0;
  std::size_t w_samples = 0;
  std::size_t source_bits = 0;   // before padding to k
  std::size_t channel_bits = 0;  // codewords * n
};

struct BaselineReceived {
  BaselineSource fields;  // untransmitted entries are zero
  BaselinePlan plan;
  bool outage = false;
  std::size_t codewords_failed = 0;
};

class BaselineCodec {
 public:
  explicit BaselineCodec(BaselineConfig cfg);

  const BaselineConfig& config() const noexcept { return cfg_; }
  const LdpcCode& code() const noexcept { return code_; }

  BaselinePlan plan(std::size_t budget_bits, std::size_t d_t, std::size_t d_r,
                    std::size_t d_w) const;

  // PCM -> LDPC -> BPSK (two coded bits per complex symbol) -> channel ->
  // coherent equalization -> LLR -> BP -> PCM decode.
  BaselineReceived transmit(const BaselineSource& src, std::size_t budget_bits,
                            const ChannelRealization& channel, SeededRng& rng,
                            NoiseConvention convention = NoiseConvention::PerComplex) const;

 private:
  BaselineConfig cfg_;
  LdpcCode code_;
};

}  // namespace sctts

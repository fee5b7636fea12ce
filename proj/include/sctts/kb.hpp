#pragma once

// Semantic knowledge bases: residual vector quantization of the demonstration
// feature at the transmitter and its reconstruction at the receiver.
//
//   z_1     = source(w)
//   z_i^e   = encoder_i(z_i)
//   m_i     = argmin_m |C_i[m] - z_i^e|        (ties -> lowest m)
//   z_{i+1} = z_i^e - C_i[m_i]
//   w~      = reconstruct( sum_i decoder_i(C_i[m_i]) )
//
// Gradient conventions for the training loss
//   L = a1 |w - w~|^2 + a2 sum |ng[z_i^e] - c_i|^2 + a3 sum |z_i^e - ng[c_i]|^2:
// the reconstruction term reaches the encoders through a straight-through copy
// across the nearest-code lookup, the embedding term moves only codebooks, the
// commitment term moves only encoder-side parameters, and the residual
// z_{i+1} treats the selected code as a constant.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sctts/numkit/mlp.hpp"
#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

struct KbConfig {
  std::size_t d_w = 64;
  std::size_t stages = 4;          // N
  std::size_t codes = 64;          // M
  std::size_t hidden = 64;         // source / reconstruct residual block width
  std::size_t stage_hidden = 32;   // residual block width inside each stage
  bool operator==(const KbConfig&) const = default;
};

struct KbWeights {
  double recon = 1.0;    // alpha_1
  double embed = 1.0;    // alpha_2
  double commit = 0.25;  // alpha_3
  bool operator==(const KbWeights&) const = default;
};

// Linear projection plus residual block u + res(u). Encoders project first,
// decoders apply the residual block first.
class ResidualStage {
 public:
  enum class Order : std::uint8_t { ProjectFirst = 0, ResidualFirst = 1 };

  struct Tape {
    MlpTape proj;
    MlpTape res;
  };

  ResidualStage() = default;
  ResidualStage(Mlp proj, Mlp res, Order order);
  static ResidualStage random(std::size_t dim, std::size_t hidden, Order order, SeededRng rng);
  // Identity map: projection W = I, residual block all zeros.
  static ResidualStage identity(std::size_t dim, std::size_t hidden, Order order);

  std::size_t dim() const noexcept { return proj_.input_size(); }
  std::size_t param_count() const noexcept { return proj_.param_count() + res_.param_count(); }
  Order order() const noexcept { return order_; }
  const Mlp& projection() const noexcept { return proj_; }
  const Mlp& residual() const noexcept { return res_; }
  Mlp& projection() noexcept { return proj_; }
  Mlp& residual() noexcept { return res_; }

  Vec64 apply(std::span<const double> x) const;
  Vec64 forward(std::span<const double> x, Tape& tape) const;
  // grads has param_count entries: projection block then residual block.
  Vec64 backward(const Tape& tape, std::span<const double> upstream,
                 std::span<double> grads) const;

  bool operator==(const ResidualStage&) const = default;

 private:
  Mlp proj_;
  Mlp res_;
  Order order_ = Order::ProjectFirst;
};

struct TransmitterKb {
  ResidualStage source;                // phi_t
  std::vector<ResidualStage> encoders; // theta_RVQE,i
  std::vector<Mat64> codebooks;        // C_i, M x d_w
  bool operator==(const TransmitterKb&) const = default;
};

struct ReceiverKb {
  std::vector<Mat64> codebooks;        // identical copy of the transmitter's
  std::vector<ResidualStage> decoders; // theta_RVQD,i
  ResidualStage reconstruct;           // phi_r
  bool operator==(const ReceiverKb&) const = default;
};

struct KbModel {
  KbConfig config;
  TransmitterKb tx;
  ReceiverKb rx;

  static KbModel random(const KbConfig& cfg, SeededRng rng);
  // All networks are identity maps; codebooks are zero.
  static KbModel identity(const KbConfig& cfg);

  bool codebooks_in_sync() const { return tx.codebooks == rx.codebooks; }
  bool operator==(const KbModel&) const = default;
};

struct NearestCode {
  std::uint32_t index = 0;
  double sq_distance = 0.0;
};

struct KbEncoding {
  std::vector<std::uint32_t> indices;  // m_1..m_N
  std::vector<Vec64> codes;            // c*_i = C_i[m_i]
  Vec64 source;                        // z_1
  std::vector<Vec64> inputs;           // z_i, i = 1..N+1 (last is the final residual)
  std::vector<Vec64> pre_quant;        // z_i^e
  Vec64 code_sum() const;
};

struct KbLoss {
  double recon = 0.0;   // |w - w~|^2
  double embed = 0.0;   // sum |ng[z^e] - c|^2
  double commit = 0.0;  // sum |z^e - ng[c]|^2
  double total = 0.0;
};

// Gradient buffers matching KbModel's parameters. Codebook gradients are
// shared: the update is applied to both copies.
struct KbGrads {
  Vec64 source;
  std::vector<Vec64> encoders;
  std::vector<Mat64> codebooks;
  std::vector<Vec64> decoders;
  Vec64 reconstruct;

  static KbGrads zeros_like(const KbModel& model);
  std::vector<std::span<double>> blocks();
  bool all_zero() const;
};

Vec64 kb_source(const TransmitterKb& tx, std::span<const double> w);

// Throws ContractError on an empty codebook or dimension mismatch.
NearestCode nearest_code(std::span<const double> z, const Mat64& codebook);

KbEncoding rvq_encode(const TransmitterKb& tx, std::span<const double> w);

// Throws DecodeError for an index count or index value the KB cannot serve.
Vec64 rvq_decode(const ReceiverKb& rx, std::span<const std::uint32_t> indices);

// Loss value from a finished encoding (receiver code taken equal to the
// transmitter code).
KbLoss kb_loss(std::span<const double> w, std::span<const double> w_rec,
               const KbEncoding& enc, const KbWeights& weights);

// Forward, loss and backward for one sample; gradients are accumulated into
// `grads` scaled by `scale`.
KbLoss kb_loss_and_grad(const KbModel& model, std::span<const double> w,
                        const KbWeights& weights, KbGrads& grads, double scale = 1.0,
                        KbEncoding* encoding_out = nullptr);

// Parameter blocks split into networks and codebooks, paired by position
// with the gradient blocks below. The codebook list holds each stage twice
// (transmitter copy, receiver copy); both map to the same gradient.
struct KbBlocks {
  std::vector<std::span<double>> networks;
  std::vector<std::span<double>> codebooks;
};
KbBlocks kb_param_blocks(KbModel& model);
KbBlocks kb_grad_blocks_for_update(KbGrads& grads);

// k-means++ seeding of every stage codebook, stage by stage, from the
// pre-quantization outputs of `samples`.
void seed_codebooks(KbModel& model, std::span<const Vec64> samples, SeededRng rng);

inline constexpr std::uint16_t kKbVersion = 1;

void save_kb(const KbModel& model, const std::filesystem::path& path);
KbModel load_kb(const std::filesystem::path& path);

class ByteWriter;
class ByteReader;
void write_kb(ByteWriter& out, const KbModel& model);
KbModel read_kb(ByteReader& in);

}  // namespace sctts

#pragma once

// Packet framing, the learned analog channel codec and the block-fading
// channel y = h x + n.
//
// A real vector x of even length d_x is read as d_x / 2 complex symbols
// (x[2k] + j x[2k+1]). Transmit power is normalized so the mean complex
// symbol energy is 1, which makes SNR(dB) = -10 log10(sigma^2).

#include <complex>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sctts/numkit/mlp.hpp"
#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

inline constexpr double kNormGuard = 1e-12;
inline constexpr double kOutageGain = 1e-6;

// [ pad(t) | pad(r) | embed(indices) ], every field padded to d_max.
struct PacketLayout {
  std::size_t d_t = 32;
  std::size_t d_r = 16;
  std::size_t n_indices = 4;
  std::size_t codes = 64;  // M

  std::size_t d_max() const noexcept;
  std::size_t d_f() const noexcept { return 3 * d_max(); }
  std::size_t t_offset() const noexcept { return 0; }
  std::size_t r_offset() const noexcept { return d_max(); }
  std::size_t index_offset() const noexcept { return 2 * d_max(); }
  bool operator==(const PacketLayout&) const = default;
};

// m -> 2m/(M-1) - 1.
double embed_index(std::uint32_t m, std::size_t codes);
// Nearest index to an embedded value, clamped to [0, M-1].
std::uint32_t recover_index(double v, std::size_t codes);

Vec64 frame_packet(const PacketLayout& layout, std::span<const double> t,
                   std::span<const double> r, std::span<const std::uint32_t> indices);

struct Unframed {
  Vec64 t;
  Vec64 r;
  std::vector<std::uint32_t> indices;
};
Unframed unframe_packet(const PacketLayout& layout, std::span<const double> f_d);

enum class ChannelModel : std::uint8_t { Awgn = 0, Rayleigh = 1 };

const char* channel_name(ChannelModel model) noexcept;
// "awgn" / "rayleigh"; throws ContractError otherwise.
ChannelModel parse_channel(std::string_view name);

struct ChannelRealization {
  ChannelModel model = ChannelModel::Awgn;
  std::complex<double> h{1.0, 0.0};
  double sigma2 = 0.0;  // noise power per complex dimension
  bool receiver_knows_h = true;
};

double snr_to_sigma2(double snr_db);

// AWGN: h = 1. Rayleigh: h ~ CN(0, 1).
ChannelRealization draw_realization(ChannelModel model, double snr_db, SeededRng& rng);

// PerReal deliberately puts sigma^2 on each real component (twice the
// intended noise); it exists only so the verifier can prove it notices.
enum class NoiseConvention : std::uint8_t { PerComplex, PerReal };

Vec64 apply_channel(std::span<const double> x, const ChannelRealization& channel,
                    SeededRng& rng, NoiseConvention convention = NoiseConvention::PerComplex);

struct Equalized {
  Vec64 y;
  bool outage = false;
};
// y / h when the receiver knows h (identity for AWGN). |h| < 1e-6 is an
// outage and yields an empty vector.
Equalized equalize(std::span<const double> y, const ChannelRealization& channel);

// u -> c u / max(|u|, eps) with c = sqrt(d / 2), i.e. unit mean complex power.
Vec64 normalize_power(std::span<const double> u);
Vec64 normalize_power_backward(std::span<const double> u, std::span<const double> upstream);

// Mean complex-symbol power |x|^2 / (d / 2).
double symbol_power(std::span<const double> x);

class ChannelCodec {
 public:
  struct EncodeTape {
    SkipMlp::Tape mlp;
    Vec64 pre;  // encoder output before normalization
  };

  ChannelCodec() = default;
  ChannelCodec(SkipMlp encoder, SkipMlp decoder);
  static ChannelCodec random(std::size_t d_f, std::size_t d_x, std::size_t hidden, SeededRng rng);

  std::size_t d_f() const noexcept { return encoder_.input_size(); }
  std::size_t d_x() const noexcept { return encoder_.output_size(); }
  const SkipMlp& encoder() const noexcept { return encoder_; }
  const SkipMlp& decoder() const noexcept { return decoder_; }
  SkipMlp& encoder() noexcept { return encoder_; }
  SkipMlp& decoder() noexcept { return decoder_; }

  Vec64 encode(std::span<const double> f_e) const;
  Vec64 encode(std::span<const double> f_e, EncodeTape& tape) const;
  // Accumulates theta_e gradients, returns dL/df_e.
  Vec64 encode_backward(const EncodeTape& tape, std::span<const double> g_x,
                        std::span<double> grads) const;

  Vec64 decode(std::span<const double> y_hat) const;
  Vec64 decode(std::span<const double> y_hat, SkipMlp::Tape& tape) const;
  Vec64 decode_backward(const SkipMlp::Tape& tape, std::span<const double> g_fd,
                        std::span<double> grads) const;
  // Input gradients only, for losses that do not train the codec.
  Vec64 encode_backward_input(const EncodeTape& tape, std::span<const double> g_x) const;
  Vec64 decode_backward_input(const SkipMlp::Tape& tape, std::span<const double> g_fd) const;

  bool operator==(const ChannelCodec&) const = default;

 private:
  SkipMlp encoder_;
  SkipMlp decoder_;
};

// |a - b|, unsquared.
double ed_loss(std::span<const double> f_e, std::span<const double> f_d);
// d|a - b| / da = (a - b) / |a - b|; zero when the norm is below the guard.
Vec64 norm_loss_grad(std::span<const double> a, std::span<const double> b);

}  // namespace sctts

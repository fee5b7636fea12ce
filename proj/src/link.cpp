#include "sctts/link.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sctts/error.hpp"
#include "sctts/numkit/kernels.hpp"

namespace sctts {

std::size_t PacketLayout::d_max() const noexcept { return std::max({d_t, d_r, n_indices}); }

double embed_index(std::uint32_t m, std::size_t codes) {
  require(codes >= 2, "embed_index: need at least two codes");
  require(m < codes, "embed_index: index out of range");
  return 2.0 * static_cast<double>(m) / static_cast<double>(codes - 1) - 1.0;
}

std::uint32_t recover_index(double v, std::size_t codes) {
  const double top = static_cast<double>(codes - 1);
  double m = std::round((v + 1.0) * top / 2.0);
  if (!(m >= 0.0)) m = 0.0;  // also catches NaN
  return static_cast<std::uint32_t>(std::min(m, top));
}

Vec64 frame_packet(const PacketLayout& layout, std::span<const double> t,
                   std::span<const double> r, std::span<const std::uint32_t> indices) {
  if (t.size() > layout.d_max() || r.size() > layout.d_max()) {
    throw ContractError("frame_packet: field longer than d_max");
  }
  require(indices.size() == layout.n_indices, "frame_packet: expected " +
                                                  std::to_string(layout.n_indices) + " indices");
  Vec64 f(layout.d_f());
  std::copy(t.begin(), t.end(), f.begin() + static_cast<std::ptrdiff_t>(layout.t_offset()));
  std::copy(r.begin(), r.end(), f.begin() + static_cast<std::ptrdiff_t>(layout.r_offset()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    f[layout.index_offset() + i] = embed_index(indices[i], layout.codes);
  }
  return f;
}

Unframed unframe_packet(const PacketLayout& layout, std::span<const double> f_d) {
  require(f_d.size() == layout.d_f(), "unframe_packet: expected d_f entries");
  Unframed out;
  out.t = Vec64(f_d.subspan(layout.t_offset(), layout.d_t));
  out.r = Vec64(f_d.subspan(layout.r_offset(), layout.d_r));
  for (std::size_t i = 0; i < layout.n_indices; ++i) {
    out.indices.push_back(recover_index(f_d[layout.index_offset() + i], layout.codes));
  }
  return out;
}

const char* channel_name(ChannelModel model) noexcept {
  return model == ChannelModel::Awgn ? "awgn" : "rayleigh";
}

ChannelModel parse_channel(std::string_view name) {
  if (name == "awgn") return ChannelModel::Awgn;
  if (name == "rayleigh") return ChannelModel::Rayleigh;
  throw ContractError("unknown channel model '" + std::string(name) + "'");
}

double snr_to_sigma2(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

ChannelRealization draw_realization(ChannelModel model, double snr_db, SeededRng& rng) {
  ChannelRealization ch;
  ch.model = model;
  ch.sigma2 = snr_to_sigma2(snr_db);
  if (model == ChannelModel::Rayleigh) {
    const double s = std::sqrt(0.5);
    const double re = s * rng.normal();
    const double im = s * rng.normal();
    ch.h = {re, im};
  }
  return ch;
}

Vec64 apply_channel(std::span<const double> x, const ChannelRealization& channel, SeededRng& rng,
                    NoiseConvention convention) {
  require(x.size() % 2 == 0, "apply_channel: d_x must be even");
  const double per_real =
      convention == NoiseConvention::PerComplex ? channel.sigma2 / 2.0 : channel.sigma2;
  const double sd = std::sqrt(per_real);
  Vec64 y(x.size());
  for (std::size_t k = 0; k < x.size(); k += 2) {
    const std::complex<double> hx = channel.h * std::complex<double>(x[k], x[k + 1]);
    y[k] = hx.real();
    y[k + 1] = hx.imag();
    if (sd > 0.0) {
      y[k] += sd * rng.normal();
      y[k + 1] += sd * rng.normal();
    }
  }
  return y;
}

Equalized equalize(std::span<const double> y, const ChannelRealization& channel) {
  require(y.size() % 2 == 0, "equalize: length must be even");
  Equalized out;
  if (channel.model == ChannelModel::Awgn || !channel.receiver_knows_h) {
    out.y = Vec64(y);
    return out;
  }
  if (std::abs(channel.h) < kOutageGain) {
    out.outage = true;
    return out;
  }
  out.y = Vec64(y.size());
  for (std::size_t k = 0; k < y.size(); k += 2) {
    const std::complex<double> v = std::complex<double>(y[k], y[k + 1]) / channel.h;
    out.y[k] = v.real();
    out.y[k + 1] = v.imag();
  }
  return out;
}

double symbol_power(std::span<const double> x) {
  require(!x.empty() && x.size() % 2 == 0, "symbol_power: length must be even and positive");
  return kernels::dot(x, x) / (static_cast<double>(x.size()) / 2.0);
}

Vec64 normalize_power(std::span<const double> u) {
  require(!u.empty() && u.size() % 2 == 0, "normalize_power: length must be even and positive");
  const double c = std::sqrt(static_cast<double>(u.size()) / 2.0);
  const double n = std::sqrt(kernels::dot(u, u));
  Vec64 x(u.size());
  kernels::axpy(c / std::max(n, kNormGuard), u, x.span());
  return x;
}

Vec64 normalize_power_backward(std::span<const double> u, std::span<const double> upstream) {
  require(u.size() == upstream.size(), "normalize_power_backward: size mismatch");
  const double c = std::sqrt(static_cast<double>(u.size()) / 2.0);
  const double n = std::sqrt(kernels::dot(u, u));
  const double a = c / std::max(n, kNormGuard);
  Vec64 g(u.size());
  kernels::axpy(a, upstream, g.span());
  if (n > kNormGuard) {
    const double proj = kernels::dot(u, upstream) * a / (n * n);
    kernels::axpy(-proj, u, g.span());
  }
  return g;
}

ChannelCodec::ChannelCodec(SkipMlp encoder, SkipMlp decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  require(encoder_.output_size() == decoder_.input_size(), "ChannelCodec: d_x mismatch");
  require(decoder_.output_size() == encoder_.input_size(), "ChannelCodec: d_f mismatch");
  require(encoder_.output_size() % 2 == 0, "ChannelCodec: d_x must be even");
}

ChannelCodec ChannelCodec::random(std::size_t d_f, std::size_t d_x, std::size_t hidden,
                                  SeededRng rng) {
  return ChannelCodec(SkipMlp::random(d_f, hidden, d_x, rng.child("encoder")),
                      SkipMlp::random(d_x, hidden, d_f, rng.child("decoder")));
}

Vec64 ChannelCodec::encode(std::span<const double> f_e) const {
  return normalize_power(encoder_.apply(f_e).span());
}

Vec64 ChannelCodec::encode(std::span<const double> f_e, EncodeTape& tape) const {
  tape.pre = encoder_.forward(f_e, tape.mlp);
  return normalize_power(tape.pre.span());
}

Vec64 ChannelCodec::encode_backward(const EncodeTape& tape, std::span<const double> g_x,
                                    std::span<double> grads) const {
  const Vec64 g_pre = normalize_power_backward(tape.pre.span(), g_x);
  return encoder_.backward(tape.mlp, g_pre.span(), grads);
}

Vec64 ChannelCodec::decode(std::span<const double> y_hat) const { return decoder_.apply(y_hat); }

Vec64 ChannelCodec::decode(std::span<const double> y_hat, SkipMlp::Tape& tape) const {
  return decoder_.forward(y_hat, tape);
}

Vec64 ChannelCodec::decode_backward(const SkipMlp::Tape& tape, std::span<const double> g_fd,
                                    std::span<double> grads) const {
  return decoder_.backward(tape, g_fd, grads);
}

Vec64 ChannelCodec::encode_backward_input(const EncodeTape& tape,
                                          std::span<const double> g_x) const {
  const Vec64 g_pre = normalize_power_backward(tape.pre.span(), g_x);
  return encoder_.backward_input(tape.mlp, g_pre.span());
}

Vec64 ChannelCodec::decode_backward_input(const SkipMlp::Tape& tape,
                                          std::span<const double> g_fd) const {
  return decoder_.backward_input(tape, g_fd);
}

double ed_loss(std::span<const double> f_e, std::span<const double> f_d) {
  require(f_e.size() == f_d.size(), "ed_loss: size mismatch");
  return std::sqrt(kernels::sq_dist(f_e, f_d));
}

Vec64 norm_loss_grad(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "norm_loss_grad: size mismatch");
  const double n = std::sqrt(kernels::sq_dist(a, b));
  Vec64 g(a.size());
  if (n < kNormGuard) return g;
  for (std::size_t k = 0; k < a.size(); ++k) g[k] = (a[k] - b[k]) / n;
  return g;
}

}  // namespace sctts

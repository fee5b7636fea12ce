#include "sctts/numkit/mlp.hpp"

#include <cmath>
#include <string>

#include "sctts/error.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/numkit/kernels.hpp"

namespace sctts {

Mlp::Mlp(std::vector<std::size_t> sizes, std::vector<Activation> activations)
    : sizes_(std::move(sizes)), activations_(std::move(activations)) {
  require(sizes_.size() >= 2, "Mlp needs at least one layer");
  require(activations_.size() + 1 == sizes_.size(), "Mlp: one activation per layer");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    require(sizes_[l] > 0 && sizes_[l + 1] > 0, "Mlp: layer sizes must be positive");
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = Vec64(total);
}

Mlp Mlp::random(std::vector<std::size_t> sizes, std::vector<Activation> activations,
                SeededRng rng) {
  Mlp net(std::move(sizes), std::move(activations));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
    for (double& v : net.weight(l)) v = rng.uniform(-bound, bound);
    for (double& v : net.bias(l)) v = rng.uniform(-bound, bound);
  }
  return net;
}

Mlp Mlp::identity(std::size_t dim) {
  Mlp net({dim, dim}, {Activation::Identity});
  auto w = net.weight(0);
  for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
  return net;
}

std::span<double> Mlp::weight(std::size_t layer) noexcept {
  return params_.span().subspan(offset(layer), sizes_[layer] * sizes_[layer + 1]);
}
std::span<const double> Mlp::weight(std::size_t layer) const noexcept {
  return params_.span().subspan(offset(layer), sizes_[layer] * sizes_[layer + 1]);
}
std::span<double> Mlp::bias(std::size_t layer) noexcept {
  return params_.span().subspan(offset(layer) + sizes_[layer] * sizes_[layer + 1],
                                sizes_[layer + 1]);
}
std::span<const double> Mlp::bias(std::size_t layer) const noexcept {
  return params_.span().subspan(offset(layer) + sizes_[layer] * sizes_[layer + 1],
                                sizes_[layer + 1]);
}

Vec64 Mlp::apply(std::span<const double> x) const {
  MlpTape scratch;
  return forward(x, scratch);
}

Vec64 Mlp::forward(std::span<const double> x, MlpTape& tape) const {
  if (x.size() != input_size()) {
    throw ContractError("Mlp input has " + std::to_string(x.size()) + " entries, expected " +
                        std::to_string(input_size()));
  }
  tape.acts.clear();
  tape.acts.reserve(num_layers() + 1);
  tape.acts.emplace_back(x);
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    const auto w = weight(l);
    const auto b = bias(l);
    const Vec64& a = tape.acts.back();
    Vec64 z(out);
    for (std::size_t r = 0; r < out; ++r) {
      z[r] = kernels::dot(w.subspan(r * in, in), a.span()) + b[r];
    }
    if (activations_[l] == Activation::Tanh) {
      for (double& v : z) v = std::tanh(v);
    }
    tape.acts.push_back(std::move(z));
  }
  return tape.acts.back();
}

Vec64 Mlp::backward(const MlpTape& tape, std::span<const double> upstream,
                    std::span<double> grads) const {
  if (tape.acts.size() != num_layers() + 1) {
    throw StateError("Mlp backward called without a matching forward pass");
  }
  require(upstream.size() == output_size(), "Mlp backward: upstream gradient size mismatch");
  require(grads.size() == param_count(), "Mlp backward: gradient buffer size mismatch");

  Vec64 g(upstream);
  for (std::size_t l = num_layers(); l-- > 0;) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    if (activations_[l] == Activation::Tanh) {
      const Vec64& y = tape.acts[l + 1];
      for (std::size_t r = 0; r < out; ++r) g[r] *= 1.0 - y[r] * y[r];
    }
    const Vec64& a = tape.acts[l];
    const auto w = weight(l);
    auto gw = grads.subspan(offset(l), in * out);
    auto gb = grads.subspan(offset(l) + in * out, out);
    Vec64 g_in(in);
    for (std::size_t r = 0; r < out; ++r) {
      if (g[r] == 0.0) continue;
      kernels::axpy(g[r], a.span(), gw.subspan(r * in, in));
      gb[r] += g[r];
      kernels::axpy(g[r], w.subspan(r * in, in), g_in.span());
    }
    g = std::move(g_in);
  }
  return g;
}

Vec64 Mlp::backward_input(const MlpTape& tape, std::span<const double> upstream) const {
  if (tape.acts.size() != num_layers() + 1) {
    throw StateError("Mlp backward called without a matching forward pass");
  }
  require(upstream.size() == output_size(), "Mlp backward: upstream gradient size mismatch");
  Vec64 g(upstream);
  for (std::size_t l = num_layers(); l-- > 0;) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    if (activations_[l] == Activation::Tanh) {
      const Vec64& y = tape.acts[l + 1];
      for (std::size_t r = 0; r < out; ++r) g[r] *= 1.0 - y[r] * y[r];
    }
    const auto w = weight(l);
    Vec64 g_in(in);
    for (std::size_t r = 0; r < out; ++r) {
      if (g[r] != 0.0) kernels::axpy(g[r], w.subspan(r * in, in), g_in.span());
    }
    g = std::move(g_in);
  }
  return g;
}

Vec64 Mlp::forward(std::span<const double> x) { return forward(x, cache_); }

MlpBackward Mlp::backward(std::span<const double> upstream) {
  if (cache_.empty()) throw StateError("Mlp backward called before forward");
  MlpBackward out{Vec64(param_count()), Vec64()};
  out.input_grad = backward(cache_, upstream, out.param_grads.span());
  return out;
}

SkipMlp::SkipMlp(Mlp linear, Mlp body) : linear_(std::move(linear)), body_(std::move(body)) {
  require(linear_.num_layers() == 1 && linear_.activations()[0] == Activation::Identity,
          "SkipMlp: linear path must be one identity-activation layer");
  require(linear_.input_size() == body_.input_size() &&
              linear_.output_size() == body_.output_size(),
          "SkipMlp: linear path and body disagree on shape");
}

SkipMlp SkipMlp::random(std::size_t in, std::size_t hidden, std::size_t out, SeededRng rng) {
  Mlp linear = in == out ? Mlp::identity(in)
                         : Mlp::random({in, out}, {Activation::Identity}, rng.child("linear"));
  Mlp body = Mlp::random({in, hidden, out}, {Activation::Tanh, Activation::Identity},
                         rng.child("body"));
  for (double& v : body.weight(1)) v = 0.0;
  for (double& v : body.bias(1)) v = 0.0;
  return SkipMlp(std::move(linear), std::move(body));
}

std::vector<std::span<double>> SkipMlp::param_blocks() {
  return {linear_.params(), body_.params()};
}

std::vector<std::span<double>> SkipMlp::split(std::span<double> grads) const {
  require(grads.size() == param_count(), "SkipMlp: gradient buffer size mismatch");
  return {grads.first(linear_.param_count()), grads.subspan(linear_.param_count())};
}

Vec64 SkipMlp::apply(std::span<const double> x) const {
  Tape scratch;
  return forward(x, scratch);
}

Vec64 SkipMlp::forward(std::span<const double> x, Tape& tape) const {
  Vec64 y = linear_.forward(x, tape.linear);
  const Vec64 b = body_.forward(x, tape.body);
  kernels::axpy(1.0, b.span(), y.span());
  return y;
}

Vec64 SkipMlp::backward(const Tape& tape, std::span<const double> upstream,
                        std::span<double> grads) const {
  const auto parts = split(grads);
  Vec64 g = linear_.backward(tape.linear, upstream, parts[0]);
  const Vec64 gb = body_.backward(tape.body, upstream, parts[1]);
  kernels::axpy(1.0, gb.span(), g.span());
  return g;
}

Vec64 SkipMlp::backward_input(const Tape& tape, std::span<const double> upstream) const {
  Vec64 g = linear_.backward_input(tape.linear, upstream);
  const Vec64 gb = body_.backward_input(tape.body, upstream);
  kernels::axpy(1.0, gb.span(), g.span());
  return g;
}

void write_mlp(ByteWriter& out, const Mlp& net) {
  out.u32(static_cast<std::uint32_t>(net.num_layers()));
  for (const auto s : net.sizes()) out.u64(s);
  for (const auto a : net.activations()) out.u8(static_cast<std::uint8_t>(a));
  out.f64s(net.params());
}

Mlp read_mlp(ByteReader& in) {
  const std::uint32_t layers = in.u32();
  if (layers == 0 || layers > 64) throw FormatError("implausible layer count");
  std::vector<std::size_t> sizes(layers + 1);
  for (auto& s : sizes) {
    s = in.u64();
    if (s == 0 || s > (1u << 20)) throw FormatError("implausible layer size");
  }
  std::vector<Activation> acts(layers);
  for (auto& a : acts) {
    const auto tag = in.u8();
    if (tag > 1) throw FormatError("unknown activation tag");
    a = static_cast<Activation>(tag);
  }
  Mlp net(std::move(sizes), std::move(acts));
  in.f64s(net.params());
  return net;
}

void write_skip_mlp(ByteWriter& out, const SkipMlp& net) {
  write_mlp(out, net.linear());
  write_mlp(out, net.body());
}

SkipMlp read_skip_mlp(ByteReader& in) {
  Mlp linear = read_mlp(in);
  Mlp body = read_mlp(in);
  try {
    return SkipMlp(std::move(linear), std::move(body));
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
}

}  // namespace sctts

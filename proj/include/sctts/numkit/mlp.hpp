#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

enum class Activation : std::uint8_t { Identity = 0, Tanh = 1 };

// Per-call activation record. acts[0] is the input, acts[l + 1] the
// post-activation output of layer l.
struct MlpTape {
  std::vector<Vec64> acts;
  bool empty() const noexcept { return acts.empty(); }
};

struct MlpBackward {
  Vec64 param_grads;
  Vec64 input_grad;
};

// Fully connected network with a flat parameter vector. Layer l occupies
// [weight (out x in, row-major) | bias (out)] starting at offset(l).
class Mlp {
 public:
  Mlp() = default;
  // Zero-initialised parameters. sizes has layers + 1 entries.
  Mlp(std::vector<std::size_t> sizes, std::vector<Activation> activations);

  // Weights and biases uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static Mlp random(std::vector<std::size_t> sizes, std::vector<Activation> activations,
                    SeededRng rng);
  // One identity-activation layer with W = I and b = 0.
  static Mlp identity(std::size_t dim);

  std::size_t input_size() const noexcept { return sizes_.empty() ? 0 : sizes_.front(); }
  std::size_t output_size() const noexcept { return sizes_.empty() ? 0 : sizes_.back(); }
  std::size_t num_layers() const noexcept { return activations_.size(); }
  std::size_t param_count() const noexcept { return params_.size(); }
  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  const std::vector<Activation>& activations() const noexcept { return activations_; }

  std::span<double> params() noexcept { return params_.span(); }
  std::span<const double> params() const noexcept { return params_.span(); }
  std::span<double> weight(std::size_t layer) noexcept;
  std::span<const double> weight(std::size_t layer) const noexcept;
  std::span<double> bias(std::size_t layer) noexcept;
  std::span<const double> bias(std::size_t layer) const noexcept;

  // Stateless evaluation.
  Vec64 apply(std::span<const double> x) const;
  // Evaluation that records activations into `tape` for a later backward.
  Vec64 forward(std::span<const double> x, MlpTape& tape) const;
  // Accumulates dL/dparams into `grads` (length param_count) and returns dL/dx.
  Vec64 backward(const MlpTape& tape, std::span<const double> upstream,
                 std::span<double> grads) const;
  // dL/dx only; parameter gradients are not formed.
  Vec64 backward_input(const MlpTape& tape, std::span<const double> upstream) const;

  // Single-shot interface: forward caches internally, backward consumes it.
  Vec64 forward(std::span<const double> x);
  MlpBackward backward(std::span<const double> upstream);

  bool operator==(const Mlp& other) const {
    return sizes_ == other.sizes_ && activations_ == other.activations_ &&
           params_ == other.params_;
  }

 private:
  std::size_t offset(std::size_t layer) const noexcept { return offsets_[layer]; }

  std::vector<std::size_t> sizes_;
  std::vector<Activation> activations_;
  std::vector<std::size_t> offsets_;
  Vec64 params_;
  MlpTape cache_;
};

// y = linear(x) + body(x): a single affine layer next to a deeper network.
// Gradient buffers are laid out [linear | body].
class SkipMlp {
 public:
  struct Tape {
    MlpTape linear;
    MlpTape body;
  };

  SkipMlp() = default;
  SkipMlp(Mlp linear, Mlp body);
  // Linear path is the identity when in == out and random otherwise; the
  // body's last layer starts at zero so the initial map is the linear path.
  static SkipMlp random(std::size_t in, std::size_t hidden, std::size_t out, SeededRng rng);

  std::size_t input_size() const noexcept { return linear_.input_size(); }
  std::size_t output_size() const noexcept { return linear_.output_size(); }
  std::size_t param_count() const noexcept { return linear_.param_count() + body_.param_count(); }
  const Mlp& linear() const noexcept { return linear_; }
  const Mlp& body() const noexcept { return body_; }
  Mlp& linear() noexcept { return linear_; }
  Mlp& body() noexcept { return body_; }
  std::vector<std::span<double>> param_blocks();
  std::vector<std::span<double>> split(std::span<double> grads) const;

  Vec64 apply(std::span<const double> x) const;
  Vec64 forward(std::span<const double> x, Tape& tape) const;
  Vec64 backward(const Tape& tape, std::span<const double> upstream,
                 std::span<double> grads) const;
  Vec64 backward_input(const Tape& tape, std::span<const double> upstream) const;

  bool operator==(const SkipMlp&) const = default;

 private:
  Mlp linear_;
  Mlp body_;
};

class ByteWriter;
class ByteReader;

void write_mlp(ByteWriter& out, const Mlp& net);
Mlp read_mlp(ByteReader& in);
void write_skip_mlp(ByteWriter& out, const SkipMlp& net);
SkipMlp read_skip_mlp(ByteReader& in);
}  // namespace sctts

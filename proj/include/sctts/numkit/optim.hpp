#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sctts/numkit/rng.hpp"
#include "sctts/numkit/tensor.hpp"

namespace sctts {

// theta <- theta - lr * g, elementwise.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr);

// Applies sgd_step block by block; blocks pair up by position.
void sgd_step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<double>>& grads, double lr);

// Adam over a fixed list of parameter blocks. Moment buffers are sized on
// the first step and must see the same block shapes afterwards.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<double>>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Vec64> m_;
  std::vector<Vec64> v_;
  std::size_t t_ = 0;
};

// Global L2 norm over all blocks.
double grad_norm(const std::vector<std::span<double>>& grads);

// Rescales every block so the global norm is at most max_norm. Returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<std::span<double>>& grads, double max_norm);

void zero(const std::vector<std::span<double>>& blocks);

Vec64 sample_gaussian(SeededRng& rng, std::size_t dim, double mean, double stddev);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

double l2_norm(std::span<const double> v);

bool all_finite(std::span<const double> v);

// Cosine schedule from 1 at step 0 down to final_fraction at step total.
double cosine_decay(std::size_t step, std::size_t total, double final_fraction);

}  // namespace sctts

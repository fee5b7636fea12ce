#include "sctts/numkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sctts/error.hpp"
#include "sctts/numkit/kernels.hpp"

namespace sctts {

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  require(params.size() == grads.size(), "sgd_step: parameter/gradient shape mismatch");
  require(lr > 0.0, "sgd_step: learning rate must be positive");
  kernels::axpy(-lr, grads, params);
}

void sgd_step(const std::vector<std::span<double>>& params,
              const std::vector<std::span<double>>& grads, double lr) {
  require(params.size() == grads.size(), "sgd_step: block count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) sgd_step(params[i], grads[i], lr);
}

void Adam::step(const std::vector<std::span<double>>& params,
                const std::vector<std::span<double>>& grads, double lr) {
  require(params.size() == grads.size(), "Adam: block count mismatch");
  require(lr > 0.0, "Adam: learning rate must be positive");
  if (t_ == 0) {
    for (const auto& p : params) {
      m_.emplace_back(p.size());
      v_.emplace_back(p.size());
    }
  }
  require(m_.size() == params.size(), "Adam: block list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    require(params[b].size() == grads[b].size() && m_[b].size() == params[b].size(),
            "Adam: block shape mismatch");
    double* m = m_[b].data();
    double* v = v_[b].data();
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      params[b][i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

double grad_norm(const std::vector<std::span<double>>& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += kernels::dot(g, g);
  return std::sqrt(s);
}

double clip_grad_norm(const std::vector<std::span<double>>& grads, double max_norm) {
  const double norm = grad_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (double& v : g) v *= scale;
    }
  }
  return norm;
}

void zero(const std::vector<std::span<double>>& blocks) {
  for (const auto& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

Vec64 sample_gaussian(SeededRng& rng, std::size_t dim, double mean, double stddev) {
  require(stddev >= 0.0, "sample_gaussian: negative standard deviation");
  Vec64 out(dim, mean);
  if (stddev == 0.0) return out;
  for (double& v : out) v = mean + stddev * rng.normal();
  return out;
}

double l2_norm(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine_similarity: dimension mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  require(na > 0.0 && nb > 0.0, "cosine_similarity: zero vector");
  return std::clamp(kernels::dot(a, b) / (na * nb), -1.0, 1.0);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double cosine_decay(std::size_t step, std::size_t total, double final_fraction) {
  require(final_fraction >= 0.0 && final_fraction <= 1.0,
          "cosine_decay: final fraction must lie in [0, 1]");
  if (total == 0) return 1.0;
  const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

}  // namespace sctts

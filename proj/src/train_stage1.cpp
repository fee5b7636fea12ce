#include <cmath>
#include <numeric>
#include <string>

#include "sctts/error.hpp"
#include "sctts/numkit/kernels.hpp"
#include "sctts/numkit/optim.hpp"
#include "sctts/train.hpp"

namespace sctts {

BatchSampler::BatchSampler(std::size_t n, SeededRng rng) : n_(n), rng_(rng), order_(n) {
  require(n > 0, "BatchSampler: empty population");
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  pos_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (pos_ == n_) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

double kb_relative_mse(const KbModel& kb, const Corpus& corpus) {
  require(!corpus.utterances.empty(), "kb_relative_mse: empty corpus");
  double total = 0.0;
  for (const auto& u : corpus.utterances) {
    const KbEncoding enc = rvq_encode(kb.tx, u.w.span());
    const Vec64 rec = rvq_decode(kb.rx, enc.indices);
    total += kernels::sq_dist(u.w.span(), rec.span()) / kernels::dot(u.w.span(), u.w.span());
  }
  return total / static_cast<double>(corpus.utterances.size());
}

Stage1Result train_stage1(const Corpus& corpus, const Stage1Config& cfg) {
  require(!corpus.utterances.empty(), "train_stage1: empty corpus");
  require(cfg.steps >= 1 && cfg.batch >= 1, "train_stage1: steps and batch must be positive");
  require(cfg.kb.d_w == corpus.model.dims().d_w, "train_stage1: d_w disagrees with the corpus");
  const SeededRng root = SeededRng(cfg.seed).child("stage1");

  Stage1Result out{KbModel::random(cfg.kb, root.child("init")), {}};
  KbModel& kb = out.kb;
  {
    std::vector<Vec64> samples;
    for (const auto& u : corpus.utterances) samples.push_back(u.w);
    seed_codebooks(kb, samples, root.child("kmeans"));
  }

  BatchSampler sampler(corpus.utterances.size(), root.child("batches"));
  SeededRng refresh_rng = root.child("refresh");
  std::vector<std::vector<std::size_t>> idle(cfg.kb.stages, std::vector<std::size_t>(cfg.kb.codes));
  KbGrads grads = KbGrads::zeros_like(kb);
  const double scale = 1.0 / static_cast<double>(cfg.batch);
  out.loss_history.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    zero(grads.blocks());
    double loss = 0.0;
    std::vector<KbEncoding> encs(cfg.batch);
    const auto batch = sampler.next(cfg.batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Utterance& u = corpus.utterances[batch[b]];
      loss += kb_loss_and_grad(kb, u.w.span(), cfg.weights, grads, scale, &encs[b]).total * scale;
    }
    if (!std::isfinite(loss) || loss > cfg.divergence_limit) {
      throw DivergenceError("stage one diverged at step " + std::to_string(step) +
                            " (loss " + std::to_string(loss) + ")");
    }
    out.loss_history.push_back(loss);
    if (cfg.clip_norm > 0.0) clip_grad_norm(grads.blocks(), cfg.clip_norm);
    const KbBlocks params = kb_param_blocks(kb);
    const KbBlocks g = kb_grad_blocks_for_update(grads);
    sgd_step(params.networks, g.networks, cfg.lr);
    sgd_step(params.codebooks, g.codebooks, cfg.codebook_lr);

    if (cfg.dead_code_steps == 0) continue;
    for (std::size_t i = 0; i < cfg.kb.stages; ++i) {
      for (auto& c : idle[i]) ++c;
      for (const auto& e : encs) idle[i][e.indices[i]] = 0;
      for (std::size_t m = 0; m < cfg.kb.codes; ++m) {
        if (idle[i][m] < cfg.dead_code_steps) continue;
        const Vec64& pick = encs[refresh_rng.below(encs.size())].pre_quant[i];
        std::copy(pick.begin(), pick.end(), kb.tx.codebooks[i].row(m).begin());
        std::copy(pick.begin(), pick.end(), kb.rx.codebooks[i].row(m).begin());
        idle[i][m] = 0;
      }
    }
  }
  return out;
}

}  // namespace sctts

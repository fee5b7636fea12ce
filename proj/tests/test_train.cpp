#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sctts/error.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/train.hpp"
#include "sctts/verify.hpp"
#include "test_util.hpp"

using namespace sctts;

namespace {

const Corpus& corpus() {
  static const Corpus c = generate_corpus(7, CorpusDims{}, 3, 4);
  return c;
}

Stage1Config stage1_cfg() {
  Stage1Config cfg;
  cfg.kb.stages = 2;
  cfg.kb.codes = 8;
  cfg.kb.hidden = 16;
  cfg.kb.stage_hidden = 8;
  cfg.steps = 40;
  cfg.batch = 4;
  return cfg;
}

const KbModel& kb() {
  static const KbModel k = train_stage1(corpus(), stage1_cfg()).kb;
  return k;
}

Stage2Config stage2_cfg() {
  Stage2Config cfg;
  cfg.d_x = 16;
  cfg.residual_hidden = 8;
  cfg.codec_hidden = 16;
  cfg.synth.d_h = 8;
  cfg.synth.text_hidden = 8;
  cfg.synth.pitch_hidden = 8;
  cfg.synth.score_hidden = 8;
  cfg.epochs = 2;
  cfg.batch = 4;
  return cfg;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("total loss") {
  CHECK(total_loss(LossParts{1.0, 2.0, 3.5}) == 6.5);
  CHECK(total_loss(LossParts{}) == 0.0);
}

TEST_CASE("batch sampler visits every item once per epoch") {
  BatchSampler s(10, SeededRng(1));
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (int b = 0; b < 5; ++b) {
      for (auto i : s.next(2)) seen.insert(i);
    }
    CHECK(seen.size() == 10);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 10);
  }
  CHECK_THROWS_AS(BatchSampler(0, SeededRng(1)), ContractError);
}

TEST_CASE("stage one reduces the loss and is reproducible") {
  Stage1Config cfg = stage1_cfg();
  cfg.steps = 300;
  const Stage1Result a = train_stage1(corpus(), cfg);
  const auto& h = a.loss_history;
  const std::size_t tenth = h.size() / 10;
  CHECK(mean({h.data() + h.size() - tenth, tenth}) < mean({h.data(), tenth}));
  CHECK(train_stage1(corpus(), cfg).loss_history == h);
}

TEST_CASE("one stage with a code per utterance memorizes the corpus") {
  Stage1Config cfg = stage1_cfg();
  cfg.kb.stages = 1;
  cfg.kb.codes = 16;
  cfg.steps = 1500;
  const Stage1Result r = train_stage1(corpus(), cfg);
  const double mse = kb_relative_mse(r.kb, corpus());
  MESSAGE("relative mse " << mse);
  CHECK(mse < 0.01);
}

TEST_CASE("stage two leaves the knowledge bases untouched") {
  const Stage2Result r = train_stage2(corpus(), kb(), stage2_cfg(), true);
  CHECK(r.model.kb == kb());
  CHECK(r.steps == stage2_steps(corpus().utterances.size(), stage2_cfg()));
  CHECK(r.loss_history.size() == r.steps);
  for (double v : r.loss_history) CHECK(std::isfinite(v));
}

TEST_CASE("trace lists the training-loop steps in order") {
  const Stage2Result r = train_stage2(corpus(), kb(), stage2_cfg(), true);
  const Trace expected{"1 initialize",       "2 text-tokenizer",    "3 transmitter-kb",
                       "4 epoch-loop",       "5 residual-encoder",  "6 padding",
                       "7 channel-encoder",  "8 channel",           "9 channel-decoder",
                       "10 identify-fields", "11 receiver-kb",      "12 prior-encoder",
                       "13 diffusion-model", "14 total-loss",       "15 sgd-update"};
  CHECK(r.trace == expected);
}

TEST_CASE("stage two loss trends down") {
  Stage2Config cfg = stage2_cfg();
  cfg.epochs = 400;
  cfg.batch = 12;
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    const Stage2Result r = train_stage2(corpus(), kb(), cfg);
    const auto& h = r.loss_history;
    const std::size_t tenth = std::max<std::size_t>(1, h.size() / 10);
    MESSAGE(seed << " " << mean({h.data(), tenth}) << " -> " << mean({h.data() + h.size() - tenth, tenth}));
    CHECK(mean({h.data() + h.size() - tenth, tenth}) < mean({h.data(), tenth}));
  }
}

TEST_CASE("checkpoints are byte-identical across reruns") {
  testutil::TempDir dir("ckpt");
  for (const char* name : {"a.scck", "b.scck"}) {
    const Stage2Result r = train_stage2(corpus(), kb(), stage2_cfg());
    Checkpoint ck;
    ck.stage = 2;
    ck.model = r.model;
    ck.steps = r.steps;
    ck.stage2_loss = r.loss_history;
    ck.config_json = "{}";
    save_checkpoint(ck, dir / name);
    CHECK(load_checkpoint(dir / name) == ck);
  }
  CHECK(file_hash(dir / "a.scck") == file_hash(dir / "b.scck"));
  auto bytes = testutil::read_bytes(dir / "a.scck");
  bytes[0] = 'Z';
  testutil::write_bytes(dir / "bad.scck", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.scck"), FormatError);
}

TEST_CASE("loss decomposition and gradients") {
  const CheckResult plumbing = check_loss_plumbing(5);
  INFO(plumbing.detail);
  CHECK(plumbing.passed);
  const CheckResult r = check_grad_stage2(Stage2Module::Residual, 6, 4);
  INFO(r.detail);
  CHECK(r.passed);
}

}  // TEST_SUITE

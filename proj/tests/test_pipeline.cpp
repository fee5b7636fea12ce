#include <doctest.h>

#include "sctts/config.hpp"
#include "sctts/error.hpp"
#include "sctts/pipeline.hpp"
#include "test_util.hpp"

using namespace sctts;

namespace {

struct Fixture {
  Corpus corpus = generate_corpus(7, CorpusDims{}, 3, 4);
  std::vector<SpeakerProfile> speakers = corpus_speakers(corpus);
  BaselineCodec baseline{BaselineConfig{}};
  ModelSet models;

  Fixture() {
    Stage1Config s1;
    s1.kb.stages = 2;
    s1.kb.codes = 8;
    s1.kb.hidden = 16;
    s1.kb.stage_hidden = 8;
    s1.steps = 30;
    s1.batch = 4;
    const KbModel kb = train_stage1(corpus, s1).kb;
    for (std::size_t budget : {256, 1536}) {
      Stage2Config s2;
      s2.d_x = budget / kBitsPerAnalogReal;
      s2.residual_hidden = 8;
      s2.codec_hidden = 16;
      s2.synth.d_h = 8;
      s2.synth.text_hidden = 8;
      s2.synth.pitch_hidden = 8;
      s2.synth.score_hidden = 8;
      s2.epochs = 2;
      s2.batch = 4;
      models.emplace(s2.d_x, train_stage2(corpus, kb, s2).model);
    }
  }

  TrialContext context() const {
    TrialContext ctx;
    ctx.world = &corpus.model;
    ctx.speakers = &speakers;
    ctx.baseline = &baseline;
    ctx.inference_steps = 20;
    return ctx;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

SweepGrid small_grid() {
  SweepGrid g;
  g.snr_db = {0, 10};
  g.budgets = {256, 1536};
  g.trials = 3;
  return g;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("scheme names") {
  CHECK(parse_scheme("semantic") == Scheme::Semantic);
  CHECK(parse_scheme("baseline") == Scheme::Baseline);
  CHECK(scheme_tag(Scheme::Baseline, ChannelModel::Rayleigh) == "baseline-rayleigh");
  CHECK_THROWS_AS(parse_scheme("analog"), ContractError);
}

TEST_CASE("corpus speakers keep first-appearance order") {
  const auto& sp = fixture().speakers;
  REQUIRE(sp.size() == 3);
  for (std::uint32_t i = 0; i < 3; ++i) CHECK(sp[i].id == i);
}

TEST_CASE("trial seeds separate grid points") {
  TrialSpec a{Scheme::Semantic, ChannelModel::Awgn, 5.0, 1536, 1, 0};
  TrialSpec b = a;
  CHECK(trial_seed(a) == trial_seed(b));
  b.trial = 1;
  CHECK(trial_seed(a) != trial_seed(b));
  b = a;
  b.snr_db = 10.0;
  CHECK(trial_seed(a) != trial_seed(b));
  b = a;
  b.channel = ChannelModel::Rayleigh;
  CHECK(trial_seed(a) != trial_seed(b));

  const Fixture& f = fixture();
  CHECK(test_utterance(f.corpus.model, f.speakers, 1, 4) ==
        test_utterance(f.corpus.model, f.speakers, 1, 4));
}

TEST_CASE("single trials") {
  const Fixture& f = fixture();
  const TrialContext ctx = f.context();
  TrialSpec spec{Scheme::Semantic, ChannelModel::Awgn, 10.0, 256, 1, 2};
  const TrialRecord r = run_trial(f.models.at(16), ctx, spec);
  CHECK(r.scheme == "semantic-awgn");
  CHECK(r.bits_used == 256);
  CHECK(r.wer_token >= 0.0);
  CHECK(r.spk >= -1.0);
  CHECK(r.spk <= 1.0);
  const TrialRecord again = run_trial(f.models.at(16), ctx, spec);
  CHECK(again.wer_synth == r.wer_synth);
  CHECK(again.spk == r.spk);

  spec.scheme = Scheme::Baseline;
  const TrialRecord base = run_trial(f.models.at(96), ctx, spec);
  CHECK(base.outage == Outage::Infeasible);
  spec.budget_bits = 1536;
  const TrialRecord ok = run_trial(f.models.at(96), ctx, spec);
  CHECK(ok.outage != Outage::Infeasible);
  CHECK(ok.bits_used <= 1536);
}

TEST_CASE("sweeps are deterministic and independent of the worker count") {
  const Fixture& f = fixture();
  SweepGrid g = small_grid();
  const auto one = run_sweep(f.models, f.context(), g);
  CHECK(one.size() == 2 * 2 * 2 * 2 * 3);
  g.jobs = 3;
  const auto three = run_sweep(f.models, f.context(), g);
  CHECK(trial_csv(one) == trial_csv(three));
  CHECK(summary_csv(summarize(one)) == summary_csv(summarize(three)));
}

TEST_CASE("sweep without a matching model") {
  const Fixture& f = fixture();
  SweepGrid g = small_grid();
  g.budgets = {512};
  CHECK_THROWS_AS(run_sweep(f.models, f.context(), g), ContractError);
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("defaults round trip") {
  const RunConfig d;
  CHECK(parse_run_config(dump_run_config(d)) == d);
  CHECK(parse_run_config("{}") == d);
  CHECK_NOTHROW(validate_run_config(d));
}

TEST_CASE("edited values round trip") {
  RunConfig c;
  c.stage1.steps = 17;
  c.stage2.channels = {ChannelModel::Rayleigh};
  c.sweep.grid.snr_db = {-3.5};
  c.sweep.grid.budgets = {256, 512};
  c.sweep.noise = NoiseConvention::PerReal;
  c.baseline.algorithm = BpAlgorithm::MinSum;
  c.output_dir = "elsewhere";
  CHECK(parse_run_config(dump_run_config(c)) == c);
  const RunConfig partial = parse_run_config(R"({"stage1": {"steps": 5}})");
  CHECK(partial.stage1.steps == 5);
  CHECK(partial.stage1.batch == Stage1Config{}.batch);
}

TEST_CASE("invalid configurations are rejected") {
  CHECK_THROWS_AS(parse_run_config(R"({"stage1": {"stepz": 5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"stage1": {"steps": "many"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"sweep": {"budgets": [100]}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"sweep": {"channels": ["fading"]}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[1, 2"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("derived sizes") {
  const RunConfig c;
  CHECK(c.stage1_for_corpus().kb.d_w == c.corpus.dims.d_w);
  CHECK(c.stage2_for_budget(1536).d_x == 96);
  CHECK(c.stage2_for_budget(256).d_x == 16);
}

TEST_CASE("shipped defaults file matches the built-in defaults") {
  const auto path = std::filesystem::path(SCTTS_SOURCE_DIR) / "tools" / "defaults.json";
  REQUIRE(std::filesystem::exists(path));
  CHECK(load_run_config(path) == RunConfig{});
  CHECK(testutil::read_text(path) == dump_run_config(RunConfig{}));
}

}  // TEST_SUITE

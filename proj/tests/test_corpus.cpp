#include <doctest.h>

#include <cmath>

#include "sctts/corpus.hpp"
#include "sctts/error.hpp"
#include "sctts/numkit/optim.hpp"
#include "test_util.hpp"

using namespace sctts;

namespace {

const CorpusModel& default_model() {
  static const CorpusModel model(7, CorpusDims{});
  return model;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("speakers are deterministic and distinct") {
  const CorpusModel& m = default_model();
  CHECK(m.generate_speaker(3) == m.generate_speaker(3));
  CHECK(m.generate_speaker(0).factors != m.generate_speaker(1).factors);
  for (std::uint32_t id = 0; id < 50; ++id) {
    const SpeakerProfile p = m.generate_speaker(id);
    CHECK(p.factors.size() == 8);
    for (double v : p.factors) CHECK(std::abs(v) <= 1.0);
  }
  CorpusDims small;
  small.d_s = 3;
  CHECK(CorpusModel(7, small).generate_speaker(0).factors.size() == 3);
}

TEST_CASE("mixing matrix is well conditioned") {
  CHECK(default_model().mixing_condition() < CorpusModel::kMaxCondition);
  CHECK(default_model().mixing().rows() == 64);
  CHECK(default_model().mixing().cols() == 32 + 1 + 8);
}

TEST_CASE("tokenize") {
  CorpusDims dims;
  dims.vocab = 16;
  const CorpusModel m(7, dims);
  const std::vector<std::uint32_t> zero{0};
  const TokenVector t0 = m.tokenize(zero);
  CHECK(t0.embedded.size() == 32);
  for (double v : t0.embedded) CHECK(v == 0.0);
  const std::vector<std::uint32_t> top{15};
  CHECK(m.tokenize(top).embedded[0] == 1.0);

  const std::vector<std::uint32_t> ids{3, 7, 2};
  const TokenVector t = m.tokenize(ids);
  CHECK(t.ids == ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(std::lround(t.embedded[i] * 15.0) == ids[i]);
  }

  const std::vector<std::uint32_t> bad{16};
  CHECK_THROWS_AS(m.tokenize(bad), ContractError);
  const std::vector<std::uint32_t> longer(33, 1);
  CHECK_THROWS_AS(m.tokenize(longer), ContractError);
}

TEST_CASE("utterance synthesis") {
  const CorpusModel& m = default_model();
  SeededRng rng(1);
  const SpeakerProfile a = m.generate_speaker(0);
  const SpeakerProfile b = m.generate_speaker(1);
  const TokenVector t = m.tokenize(m.random_token_ids(rng));

  const Utterance ua = m.synthesize_utterance(a, t);
  CHECK(ua == m.synthesize_utterance(a, t));
  const Utterance ub = m.synthesize_utterance(b, t);
  CHECK(ua.truth.durations == ub.truth.durations);
  CHECK(ua.truth.pitch != ub.truth.pitch);
  CHECK(ua.truth.frames != ub.truth.frames);
  CHECK(ua.w.size() == 64);

  for (int k = 0; k < 100; ++k) {
    const auto ids = m.random_token_ids(rng);
    CHECK(ids.size() >= 4);
    CHECK(ids.size() <= 10);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      CHECK(ids[i] >= 1);
      CHECK(ids[i] < 32);
      if (i > 0) CHECK(ids[i] != ids[i - 1]);
    }
    const Utterance u = m.synthesize_utterance(m.generate_speaker(k % 5), m.tokenize(ids));
    std::size_t f = 0;
    for (auto d : u.truth.durations) {
      CHECK(d >= 1);
      CHECK(d <= 4);
      f += d;
    }
    CHECK(u.truth.frame_count() == f);
    CHECK(u.truth.pitch.size() == f);
    CHECK(u.w == m.demonstration_feature(u.truth.frames));
  }
}

TEST_CASE("recognizer inverts synthesis") {
  const CorpusModel& m = default_model();
  SeededRng rng(2);
  for (int k = 0; k < 200; ++k) {
    const auto ids = m.random_token_ids(rng);
    const Utterance u = m.synthesize_utterance(m.generate_speaker(k), m.tokenize(ids));
    CHECK(m.oracle_recognize(u.truth.frames) == ids);

    Mat64 noisy = u.truth.frames;
    for (double& v : noisy.flat()) v += 1e-6 * rng.normal();
    CHECK(m.oracle_recognize(noisy) == ids);
  }
}

TEST_CASE("recognizer on an all-zero feature") {
  const CorpusModel& m = default_model();
  const Mat64 zeros(3, 64);
  std::vector<std::uint32_t> out;
  CHECK_NOTHROW(out = m.oracle_recognize(zeros));
  CHECK(out.size() <= 3);
  for (auto id : out) CHECK(id < 32);
}

TEST_CASE("speaker oracle") {
  const CorpusModel& m = default_model();
  SeededRng rng(3);
  for (std::uint32_t s = 0; s < 50; ++s) {
    const SpeakerProfile p = m.generate_speaker(s);
    const Utterance u1 = m.synthesize_utterance(p, m.tokenize(m.random_token_ids(rng)));
    const Utterance u2 = m.synthesize_utterance(p, m.tokenize(m.random_token_ids(rng)));
    const Vec64 e1 = m.oracle_speaker_embed(u1.truth.frames);
    for (std::size_t i = 0; i < e1.size(); ++i) CHECK(std::abs(e1[i] - p.factors[i]) < 1e-9);
    CHECK(cosine_similarity(e1, p.factors) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(cosine_similarity(e1, m.oracle_speaker_embed(u2.truth.frames)) > 0.999);
  }

  // Random speaker pairs rarely look alike.
  std::size_t close = 0;
  double mean = 0.0;
  for (std::uint32_t k = 0; k < 1000; ++k) {
    const double c = cosine_similarity(m.generate_speaker(2 * k + 100).factors,
                                       m.generate_speaker(2 * k + 101).factors);
    mean += c / 1000.0;
    if (c >= 0.9) ++close;
  }
  CHECK(mean < 0.9);
  CHECK(close < 10);
}

TEST_CASE("corpus generation is deterministic and round trips") {
  const Corpus a = generate_corpus(7, CorpusDims{}, 3, 4);
  const Corpus b = generate_corpus(7, CorpusDims{}, 3, 4);
  CHECK(a.utterances.size() == 12);
  CHECK(a.utterances == b.utterances);
  CHECK(generate_corpus(8, CorpusDims{}, 3, 4).utterances != a.utterances);

  testutil::TempDir dir("corpus");
  save_corpus(a, dir / "c.sctc");
  save_corpus(b, dir / "d.sctc");
  CHECK(testutil::read_bytes(dir / "c.sctc") == testutil::read_bytes(dir / "d.sctc"));
  const Corpus back = load_corpus(dir / "c.sctc");
  CHECK(back.utterances == a.utterances);
  CHECK(back.speakers == 3);
  CHECK(back.model.mixing() == a.model.mixing());

  write_corpus_manifest(a, dir / "c.sctc", dir / "c.json");
  const std::string manifest = testutil::read_text(dir / "c.json");
  CHECK(manifest.find("12") != std::string::npos);

  auto bytes = testutil::read_bytes(dir / "c.sctc");
  bytes[0] = 'X';
  testutil::write_bytes(dir / "bad.sctc", bytes);
  CHECK_THROWS_AS(load_corpus(dir / "bad.sctc"), FormatError);

  bytes = testutil::read_bytes(dir / "c.sctc");
  bytes.resize(bytes.size() / 2);
  testutil::write_bytes(dir / "short.sctc", bytes);
  CHECK_THROWS_AS(load_corpus(dir / "short.sctc"), FormatError);
}

}  // TEST_SUITE

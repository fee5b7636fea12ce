#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include <json.hpp>

#include "sctts/numkit/binio.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"({
  "corpus": {"speakers": 3, "utterances_per_speaker": 4},
  "stage1": {"steps": 40, "batch": 4, "stages": 2, "codes": 8, "hidden": 16, "stage_hidden": 8},
  "stage2": {"epochs": 2, "batch": 4, "residual_hidden": 8, "codec_hidden": 16,
             "synth": {"d_h": 8, "text_hidden": 8, "pitch_hidden": 8, "score_hidden": 8}},
  "sweep": {"snr_db": [0, 10], "budgets": [256, 1536], "trials": 2, "inference_steps": 10}
})";

// Runs the CLI with stdout and stderr sent to files in `dir`; returns the exit status.
int run(const testutil::TempDir& dir, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" SCTTS_CLI_PATH "' " +
                          args + " > stdout.txt 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string out_text(const testutil::TempDir& dir) { return testutil::read_text(dir / "stdout.txt"); }

void write_config(const testutil::TempDir& dir) {
  std::ofstream(dir / "small.json") << kSmallConfig;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with status 2") {
  testutil::TempDir dir("cli_usage");
  CHECK(run(dir, "bogus") == 2);
  CHECK(run(dir, "train --stage 3") == 2);
  CHECK(run(dir, "train --stage 2") == 2);  // no stage-1 checkpoint given
  std::ofstream(dir / "bad.json") << R"({"stage1": {"stepz": 1}})";
  CHECK(run(dir, "-c bad.json gen-corpus") == 2);
  CHECK(testutil::read_text(dir / "stderr.txt").find("stepz") != std::string::npos);
  CHECK(run(dir, "--help") == 0);
}

TEST_CASE("printed defaults parse back") {
  testutil::TempDir dir("cli_defaults");
  REQUIRE(run(dir, "--print-defaults") == 0);
  const auto j = nlohmann::json::parse(out_text(dir));
  CHECK(j["stage1"]["codes"] == 64);
  CHECK(j["sweep"]["budgets"][0] == 1536);
}

TEST_CASE("corpus generation is byte-identical and honours the output precedence") {
  testutil::TempDir dir("cli_corpus");
  write_config(dir);
  REQUIRE(run(dir, "-c small.json --out a gen-corpus") == 0);
  REQUIRE(run(dir, "-c small.json gen-corpus", "SCTTS_OUT_DIR=b") == 0);
  CHECK(fs::exists(dir / "a/corpus.sctc"));
  CHECK(fs::exists(dir / "b/corpus.sctc"));
  CHECK(sctts::file_hash(dir / "a/corpus.sctc") == sctts::file_hash(dir / "b/corpus.sctc"));
  const auto manifest = nlohmann::json::parse(testutil::read_text(dir / "a/corpus.json"));
  CHECK(manifest.dump().find("12") != std::string::npos);

  // --out wins over the environment.
  REQUIRE(run(dir, "-c small.json --out c gen-corpus", "SCTTS_OUT_DIR=b") == 0);
  CHECK(fs::exists(dir / "c/corpus.sctc"));

  auto bytes = testutil::read_bytes(dir / "a/corpus.sctc");
  bytes[0] = 'Q';
  testutil::write_bytes(dir / "a/corpus.sctc", bytes);
  CHECK(run(dir, "-c small.json --out a train --stage 1") == 1);
  CHECK(testutil::read_text(dir / "stderr.txt").size() > 0);
}

TEST_CASE("train, simulate and sweep on a small configuration") {
  testutil::TempDir dir("cli_flow");
  write_config(dir);
  const std::string base = "-c small.json --out o ";
  REQUIRE(run(dir, base + "gen-corpus") == 0);
  REQUIRE(run(dir, base + "train --stage 1") == 0);
  const std::string first = sctts::file_hash(dir / "o/stage1.scck");
  REQUIRE(run(dir, base + "train --stage 1") == 0);
  CHECK(sctts::file_hash(dir / "o/stage1.scck") == first);
  const auto loss = nlohmann::json::parse(testutil::read_text(dir / "o/stage1_loss.json"));
  CHECK(loss["loss"].size() == 40);

  REQUIRE(run(dir, base + "train --stage 2 --stage1 o/stage1.scck") == 0);
  CHECK(fs::exists(dir / "o/stage2_b256.scck"));
  CHECK(fs::exists(dir / "o/stage2_b1536.scck"));
  CHECK(run(dir, base + "train --stage 2 --stage1 o/stage1.scck --budget 100") == 2);

  REQUIRE(run(dir, base + "simulate --scheme semantic --channel rayleigh --snr 5 --budget 256") == 0);
  const auto rec = nlohmann::json::parse(out_text(dir));
  CHECK(rec["scheme"] == "semantic-rayleigh");
  CHECK(rec["budget_bits"] == 256);
  REQUIRE(run(dir, base + "simulate --scheme baseline --budget 256") == 0);
  CHECK(nlohmann::json::parse(out_text(dir))["outage"] == 2);

  REQUIRE(run(dir, base + "sweep -j 1") == 0);
  const std::string trials = testutil::read_text(dir / "o/trials.csv");
  const std::string summary = testutil::read_text(dir / "o/summary.csv");
  std::size_t lines = 0;
  for (char c : trials) lines += c == '\n';
  CHECK(lines == 1 + 2 * 2 * 2 * 2 * 2);
  REQUIRE(run(dir, base + "sweep -j 3") == 0);
  CHECK(testutil::read_text(dir / "o/trials.csv") == trials);
  CHECK(testutil::read_text(dir / "o/summary.csv") == summary);
}

TEST_CASE("verify reports every check") {
  testutil::TempDir dir("cli_verify");
  CHECK(run(dir, "verify --instances 2") == 0);
  CHECK(out_text(dir).find("15 of 15 checks passed") != std::string::npos);
  CHECK(run(dir, "verify --instances 2 --inject noise-per-real") == 1);
  CHECK(out_text(dir).find("13 of 15 checks passed") != std::string::npos);
}

}  // TEST_SUITE

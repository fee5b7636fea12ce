// sctts: corpus generation, two-stage training, single trials, sweeps and
// the self-check suite.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sctts/config.hpp"
#include "sctts/error.hpp"
#include "sctts/metrics.hpp"
#include "sctts/pipeline.hpp"
#include "sctts/train.hpp"
#include "sctts/verify.hpp"

namespace fs = std::filesystem;
using namespace sctts;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

constexpr const char* kOutEnv = "SCTTS_OUT_DIR";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::string out_dir;
  bool print_defaults = false;
};

struct Session {
  RunConfig cfg;
  std::string snapshot;  // configuration as loaded, before any override
  fs::path out;

  fs::path corpus_path() const { return out / "corpus.sctc"; }
  fs::path stage1_path() const { return out / "stage1.scck"; }
  fs::path stage2_path(const fs::path& dir, std::size_t budget) const {
    return dir / ("stage2_b" + std::to_string(budget) + ".scck");
  }
};

// --out, then the environment, then the configuration file.
Session open_session(const Globals& g) {
  Session s;
  if (!g.config_path.empty()) s.cfg = load_run_config(g.config_path);
  s.snapshot = dump_run_config(s.cfg);
  if (!g.out_dir.empty()) {
    s.out = g.out_dir;
  } else if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') {
    s.out = env;
  } else {
    s.out = s.cfg.output_dir;
  }
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Corpus open_corpus(const Session& s, const std::string& override_path) {
  const fs::path path = override_path.empty() ? s.corpus_path() : fs::path(override_path);
  if (!fs::exists(path)) {
    throw std::runtime_error("corpus " + path.string() + " not found; run gen-corpus first");
  }
  Corpus corpus = load_corpus(path);
  const CorpusSettings& want = s.cfg.corpus;
  if (corpus.model.seed() != want.seed || !(corpus.model.dims() == want.dims) ||
      corpus.speakers != want.speakers ||
      corpus.utterances.size() != std::size_t{want.speakers} * want.utterances_per_speaker) {
    throw std::runtime_error("corpus " + path.string() +
                             " was generated from a different corpus configuration");
  }
  return corpus;
}

// ---------------------------------------------------------------- gen-corpus

int cmd_gen_corpus(const Session& s) {
  const CorpusSettings& c = s.cfg.corpus;
  const Corpus corpus = generate_corpus(c.seed, c.dims, c.speakers, c.utterances_per_speaker);
  fs::create_directories(s.out);
  save_corpus(corpus, s.corpus_path());
  const fs::path manifest = s.out / "corpus.json";
  write_corpus_manifest(corpus, s.corpus_path(), manifest);
  std::printf("wrote %s (%zu utterances, %u speakers) and %s\n", s.corpus_path().c_str(),
              corpus.utterances.size(), corpus.speakers, manifest.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  int stage = 0;
  std::string corpus;
  std::string stage1;
  std::optional<std::size_t> budget;
};

int train_stage_one(const Session& s, const Corpus& corpus) {
  const Stage1Config cfg = s.cfg.stage1_for_corpus();
  std::fprintf(stderr, "stage 1: %zu steps, N=%zu, M=%zu\n", cfg.steps, cfg.kb.stages,
               cfg.kb.codes);
  Stage1Result r = train_stage1(corpus, cfg);
  Checkpoint ck;
  ck.stage = 1;
  ck.model.layout = PacketLayout{corpus.model.dims().d_t, s.cfg.stage2.d_r, cfg.kb.stages,
                                 cfg.kb.codes};
  ck.model.kb = r.kb;
  ck.steps = r.loss_history.size();
  ck.stage1_loss = r.loss_history;
  ck.config_json = s.snapshot;
  save_checkpoint(ck, s.stage1_path());
  write_loss_history(r.loss_history, s.out / "stage1_loss.json");
  std::printf("stage 1: final loss %.6f, relative MSE %.6f -> %s\n",
              r.loss_history.empty() ? 0.0 : r.loss_history.back(),
              kb_relative_mse(r.kb, corpus), s.stage1_path().c_str());
  return kExitOk;
}

int train_stage_two(const Session& s, const Corpus& corpus, const TrainArgs& a) {
  if (!fs::exists(a.stage1)) throw std::runtime_error("stage-1 checkpoint " + a.stage1 + " not found");
  const Checkpoint base = load_checkpoint(a.stage1);

  std::vector<std::size_t> budgets = s.cfg.sweep.grid.budgets;
  if (a.budget) {
    RunConfig probe = s.cfg;
    probe.sweep.grid.budgets = {*a.budget};
    validate_run_config(probe);
    budgets = {*a.budget};
  }
  for (const std::size_t budget : budgets) {
    const Stage2Config cfg = s.cfg.stage2_for_budget(budget);
    std::fprintf(stderr, "stage 2: budget %zu bits (d_x=%zu), %zu steps\n", budget, cfg.d_x,
                 stage2_steps(corpus.utterances.size(), cfg));
    Stage2Result r = train_stage2(corpus, base.model.kb, cfg);
    Checkpoint ck;
    ck.stage = 2;
    ck.model = r.model;
    ck.steps = r.steps;
    ck.stage1_loss = base.stage1_loss;
    ck.stage2_loss = r.loss_history;
    ck.config_json = s.snapshot;
    const fs::path path = s.stage2_path(s.out, budget);
    save_checkpoint(ck, path);
    write_loss_history(r.loss_history,
                       s.out / ("stage2_b" + std::to_string(budget) + "_loss.json"));
    const LossParts& last = r.part_history.back();
    std::printf("stage 2, budget %zu: final loss %.6f (channel %.6f, prior %.6f, score %.6f) -> %s\n",
                budget, r.loss_history.back(), last.ed, last.prior, last.diff, path.c_str());
  }
  return kExitOk;
}

int cmd_train(const Session& s, const TrainArgs& a) {
  if (a.stage == 2 && a.stage1.empty()) throw UsageError("train --stage 2 requires --stage1 <checkpoint>");
  const Corpus corpus = open_corpus(s, a.corpus);
  fs::create_directories(s.out);
  return a.stage == 1 ? train_stage_one(s, corpus) : train_stage_two(s, corpus, a);
}

// ---------------------------------------------------------------- simulate / sweep

struct Evaluation {
  Corpus corpus;
  std::vector<SpeakerProfile> speakers;
  BaselineCodec baseline;
  ModelSet models;

  Evaluation(Corpus c, const BaselineConfig& bc)
      : corpus(std::move(c)), speakers(corpus_speakers(corpus)), baseline(bc) {}

  TrialContext context(const SweepSettings& sw) const {
    TrialContext ctx;
    ctx.world = &corpus.model;
    ctx.speakers = &speakers;
    ctx.baseline = &baseline;
    ctx.inference_steps = sw.inference_steps;
    ctx.noise = sw.noise;
    return ctx;
  }
};

void load_models(const Session& s, const fs::path& dir, const std::vector<std::size_t>& budgets,
                 ModelSet& models) {
  for (const std::size_t b : budgets) {
    const fs::path path = s.stage2_path(dir, b);
    if (!fs::exists(path)) {
      throw std::runtime_error("missing checkpoint " + path.string() +
                               "; run train --stage 2 --budget " + std::to_string(b));
    }
    Checkpoint ck = load_checkpoint(path);
    if (ck.stage != 2) throw FormatError(path.string() + " is not a stage-2 checkpoint");
    models.emplace(b / kBitsPerAnalogReal, std::move(ck.model));
  }
}

struct SimulateArgs {
  std::string corpus;
  std::string models;
  std::string scheme = "semantic";
  std::string channel = "awgn";
  double snr_db = 5.0;
  std::optional<std::size_t> budget;
  std::size_t trial = 0;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const Session& s, const SimulateArgs& a) {
  TrialSpec spec;
  try {
    spec.scheme = parse_scheme(a.scheme);
    spec.channel = parse_channel(a.channel);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const auto& budgets = s.cfg.sweep.grid.budgets;
  spec.budget_bits = a.budget.value_or(*std::max_element(budgets.begin(), budgets.end()));
  spec.snr_db = a.snr_db;
  spec.trial = a.trial;
  spec.master_seed = a.seed.value_or(s.cfg.sweep.grid.master_seed);

  Evaluation ev(open_corpus(s, a.corpus), s.cfg.baseline);
  const fs::path dir = a.models.empty() ? s.out : fs::path(a.models);
  // The baseline always decodes with the model of the largest configured budget.
  std::vector<std::size_t> need{*std::max_element(budgets.begin(), budgets.end())};
  if (spec.scheme == Scheme::Semantic && spec.budget_bits != need[0]) need.push_back(spec.budget_bits);
  load_models(s, dir, need, ev.models);
  const SemanticModel& model = spec.scheme == Scheme::Baseline
                                   ? ev.models.rbegin()->second
                                   : ev.models.at(spec.budget_bits / kBitsPerAnalogReal);
  const TrialRecord r = run_trial(model, ev.context(s.cfg.sweep), spec);

  nlohmann::ordered_json j;
  j["scheme"] = r.scheme;
  j["snr_db"] = r.snr_db;
  j["budget_bits"] = r.budget_bits;
  j["seed"] = r.seed;
  j["trial"] = r.trial;
  j["wer_token"] = r.wer_token;
  j["wer_synth"] = r.wer_synth;
  j["spk"] = r.spk;
  j["outage"] = static_cast<int>(r.outage);
  j["h"] = {r.h.real(), r.h.imag()};
  j["bits_used"] = r.bits_used;
  std::printf("%s\n", j.dump(2).c_str());
  return kExitOk;
}

struct SweepArgs {
  std::string corpus;
  std::string models;
  std::optional<std::size_t> jobs;
  std::optional<std::size_t> trials;
};

int cmd_sweep(const Session& s, const SweepArgs& a) {
  SweepSettings sw = s.cfg.sweep;
  if (a.jobs) sw.grid.jobs = *a.jobs;
  if (a.trials) sw.grid.trials = *a.trials;
  if (sw.grid.jobs == 0) throw UsageError("--jobs must be positive");

  Evaluation ev(open_corpus(s, a.corpus), s.cfg.baseline);
  load_models(s, a.models.empty() ? s.out : fs::path(a.models), sw.grid.budgets, ev.models);
  std::fprintf(stderr, "sweep: %zu schemes x %zu channels x %zu SNRs x %zu budgets x %zu trials\n",
               sw.grid.schemes.size(), sw.grid.channels.size(), sw.grid.snr_db.size(),
               sw.grid.budgets.size(), sw.grid.trials);
  const std::vector<TrialRecord> records = run_sweep(ev.models, ev.context(sw), sw.grid);
  write_text(s.out / "trials.csv", trial_csv(records));
  write_text(s.out / "summary.csv", summary_csv(summarize(records)));
  std::printf("wrote %zu trial rows to %s and the per-point summary to %s\n", records.size(),
              (s.out / "trials.csv").c_str(), (s.out / "summary.csv").c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  std::string inject = "none";
  bool full = false;
  std::optional<std::size_t> instances;
  std::uint64_t seed = 1;
};

int cmd_verify(const VerifyArgs& a) {
  VerifyOptions o;
  o.seed = a.seed;
  o.include_training = a.full;
  if (a.instances) o.grad_instances = *a.instances;
  if (a.inject == "noise-per-real") {
    o.noise = NoiseConvention::PerReal;
  } else if (a.inject != "none") {
    throw UsageError("unknown fault '" + a.inject + "' (known: none, noise-per-real)");
  }
  std::size_t failed = 0;
  run_checks(o, [&](const CheckResult& r) {
    if (!r.passed) ++failed;
    std::printf("%-26s %s %7.1fs  %s\n", r.name.c_str(), r.passed ? "pass" : "FAIL", r.seconds,
                r.detail.c_str());
    std::fflush(stdout);
  });
  std::printf("%zu of %zu checks passed\n", check_names(o).size() - failed, check_names(o).size());
  return failed == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic text-to-speech link simulator"};
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "JSON run configuration (defaults when omitted)");
  app.add_option("-o,--out", g.out_dir,
                 std::string("output directory; overrides ") + kOutEnv + " and the configuration");
  app.add_flag("--print-defaults", g.print_defaults, "print the default configuration and exit");

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus and its manifest");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", ta.stage, "1: knowledge bases, 2: end-to-end")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--corpus", ta.corpus, "corpus file (default <out>/corpus.sctc)");
  train->add_option("--stage1", ta.stage1, "stage-1 checkpoint (stage 2 only)");
  train->add_option("--budget", ta.budget, "train only the model for this budget in bits");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "run one trial and print its record");
  sim->add_option("--corpus", sa.corpus, "corpus file (default <out>/corpus.sctc)");
  sim->add_option("--models", sa.models, "directory holding stage2_b<B>.scck (default <out>)");
  sim->add_option("--scheme", sa.scheme, "semantic or baseline")->capture_default_str();
  sim->add_option("--channel", sa.channel, "awgn or rayleigh")->capture_default_str();
  sim->add_option("--snr", sa.snr_db, "SNR in dB")->capture_default_str();
  sim->add_option("--budget", sa.budget, "budget in bits (default: largest configured)");
  sim->add_option("--trial", sa.trial, "trial index")->capture_default_str();
  sim->add_option("--seed", sa.seed, "master seed (default: configured)");

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "run the configured grid; writes trials.csv and summary.csv");
  sweep->add_option("--corpus", wa.corpus, "corpus file (default <out>/corpus.sctc)");
  sweep->add_option("--models", wa.models, "directory holding stage2_b<B>.scck (default <out>)");
  sweep->add_option("-j,--jobs", wa.jobs, "worker threads (output does not depend on it)");
  sweep->add_option("--trials", wa.trials, "trials per grid point");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "run the self-check suite");
  verify->add_option("--inject", va.inject, "deliberate fault: none or noise-per-real")
      ->capture_default_str();
  verify->add_flag("--full", va.full, "include the knowledge-base training check");
  verify->add_option("--instances", va.instances, "random instances per gradient check");
  verify->add_option("--seed", va.seed, "seed of the random instances")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g.print_defaults) {
      std::fputs(dump_run_config(RunConfig{}).c_str(), stdout);
      return kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return kExitUsage;
    }
    if (*verify) return cmd_verify(va);
    const Session s = open_session(g);
    if (*gen) return cmd_gen_corpus(s);
    if (*train) return cmd_train(s, ta);
    if (*sim) return cmd_simulate(s, sa);
    if (*sweep) return cmd_sweep(s, wa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

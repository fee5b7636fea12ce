// End-to-end acceptance run. Criteria 1-7 and 11 call the self-checks in
// process; 8-10 drive the sctts binary through a full training and sweep
// cycle in a work directory. One line per criterion, exit status 0 only
// when every selected criterion passes.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sctts/config.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/verify.hpp"

namespace fs = std::filesystem;
using namespace sctts;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- in-process

Outcome gradients() {
  const std::uint64_t seed = 101;
  const std::size_t n = 20;
  std::vector<CheckResult> rs{check_grad_mlp(seed, n), check_grad_skip_mlp(seed, n),
                              check_grad_residual_stage(seed, n), check_grad_kb(seed, n)};
  for (auto m : {Stage2Module::Residual, Stage2Module::Encoder, Stage2Module::Decoder,
                 Stage2Module::Prior, Stage2Module::Score}) {
    rs.push_back(check_grad_stage2(m, seed, n));
  }
  Outcome o{true, ""};
  for (const auto& r : rs) {
    if (!r.passed) {
      o.passed = false;
      o.detail += r.name + " failed (" + r.detail + "); ";
    }
  }
  o.detail += std::to_string(rs.size()) + " modules x " + std::to_string(n) + " instances";
  return o;
}

Outcome from_check(const CheckResult& r) { return {r.passed, r.detail}; }

Outcome kb_fidelity() {
  const RunConfig cfg;
  const Corpus corpus = generate_corpus(cfg.corpus.seed, cfg.corpus.dims, cfg.corpus.speakers,
                                        cfg.corpus.utterances_per_speaker);
  return from_check(check_kb_fidelity(corpus, cfg.stage1_for_corpus()));
}

// ---------------------------------------------------------------- CLI driven

class Workspace {
 public:
  Workspace(fs::path cli, fs::path dir) : cli_(std::move(cli)), dir_(std::move(dir)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  void write_config(const std::string& name, const RunConfig& cfg) const {
    std::ofstream(dir_ / name) << dump_run_config(cfg);
  }

  // Throws with the command's stderr tail on a non-zero exit.
  void run(const std::string& args) {
    const std::string log = "cmd" + std::to_string(++count_) + ".log";
    const std::string cmd = "cd '" + dir_.string() + "' && '" + cli_.string() + "' " + args +
                            " > " + log + " 2>&1";
    std::fprintf(stderr, "  $ sctts %s\n", args.c_str());
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      std::ifstream in(dir_ / log);
      std::stringstream ss;
      ss << in.rdbuf();
      throw std::runtime_error("'sctts " + args + "' failed: " + ss.str());
    }
  }

 private:
  fs::path cli_;
  fs::path dir_;
  int count_ = 0;
};

struct Point {
  double wer = 0.0, wer_se = 0.0, spk = 0.0, spk_se = 0.0;
};
// (scheme tag, snr, budget) -> summary row
using Summary = std::map<std::tuple<std::string, double, std::size_t>, Point>;

Summary read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  std::string line;
  std::getline(in, line);
  Summary out;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 10) continue;
    Point p{std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9])};
    out[{f[0], std::stod(f[1]), std::stoul(f[2])}] = p;
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<double> kSnrGrid{-5, 0, 5, 10, 15};
const std::vector<std::size_t> kBudgets{256, 512, 1024, 1536};

Outcome snr_trend(const Summary& s) {
  Outcome o{true, ""};
  for (const char* ch : {"awgn", "rayleigh"}) {
    std::vector<double> wer, wer_se, spk, spk_se;
    for (double snr : kSnrGrid) {
      const Point& p = s.at({std::string("semantic-") + ch, snr, 1536});
      wer.push_back(p.wer);
      wer_se.push_back(p.wer_se);
      spk.push_back(p.spk);
      spk_se.push_back(p.spk_se);
    }
    std::string why;
    if (!trend_holds(wer, wer_se, false, &why)) {
      o.passed = false;
      o.detail += std::string(ch) + " wer: " + why + "; ";
    }
    if (!trend_holds(spk, spk_se, true, &why)) {
      o.passed = false;
      o.detail += std::string(ch) + " spk: " + why + "; ";
    }
    for (double snr : {-5.0, 0.0}) {
      const double sem = s.at({std::string("semantic-") + ch, snr, 1536}).spk;
      const double base = s.at({std::string("baseline-") + ch, snr, 1536}).spk;
      if (sem < base) {
        o.passed = false;
        o.detail += std::string(ch) + fmt(" spk below baseline at %g dB; ", snr);
      }
    }
    o.detail += std::string(ch) + " wer " + fmt("%.3f", wer.front()) + "->" +
                fmt("%.3f", wer.back()) + " spk " + fmt("%.3f", spk.front()) + "->" +
                fmt("%.3f", spk.back()) + "; ";
  }
  return o;
}

Outcome budget_gap(const Summary& s) {
  Outcome o{true, ""};
  for (const char* ch : {"awgn", "rayleigh"}) {
    auto gap = [&](std::size_t b) {
      return s.at({std::string("baseline-") + ch, 5.0, b}).wer -
             s.at({std::string("semantic-") + ch, 5.0, b}).wer;
    };
    const double small = gap(kBudgets.front());
    const double large = gap(kBudgets.back());
    if (!(small >= large)) o.passed = false;
    o.detail += std::string(ch) + " gap " + fmt("%.3f", small) + " at 256 vs " +
                fmt("%.3f", large) + " at 1536; ";
  }
  return o;
}

struct EndToEnd {
  Outcome trend, budget, determinism;
  double trend_seconds = 0.0, budget_seconds = 0.0, determinism_seconds = 0.0;
};

EndToEnd end_to_end(const fs::path& cli, const fs::path& work, std::size_t trials) {
  EndToEnd e;
  Workspace ws(cli, work);
  RunConfig train;
  train.sweep.grid.budgets = kBudgets;
  train.sweep.grid.trials = trials;
  ws.write_config("train.json", train);
  RunConfig snr = train;
  snr.sweep.grid.budgets = {1536};
  ws.write_config("snr.json", snr);
  RunConfig budget = train;
  budget.sweep.grid.snr_db = {5};
  ws.write_config("budget.json", budget);

  auto t0 = std::chrono::steady_clock::now();
  ws.run("-c train.json --out run gen-corpus");
  ws.run("-c train.json --out run train --stage 1");
  ws.run("-c train.json --out run train --stage 2 --stage1 run/stage1.scck --budget 1536");
  ws.run("-c snr.json --out snr sweep --models run --corpus run/corpus.sctc -j 1");
  e.trend = snr_trend(read_summary(work / "snr" / "summary.csv"));
  e.trend_seconds = seconds_since(t0);

  for (std::size_t b : {256, 512, 1024}) {
    ws.run("-c train.json --out run train --stage 2 --stage1 run/stage1.scck --budget " +
           std::to_string(b));
  }
  t0 = std::chrono::steady_clock::now();
  ws.run("-c budget.json --out budget_a sweep --models run --corpus run/corpus.sctc -j 1");
  e.budget_seconds = seconds_since(t0);
  e.budget = budget_gap(read_summary(work / "budget_a" / "summary.csv"));

  t0 = std::chrono::steady_clock::now();
  ws.run("-c budget.json --out budget_b sweep --models run --corpus run/corpus.sctc -j 1");
  ws.run("-c train.json --out rerun gen-corpus");
  ws.run("-c train.json --out rerun train --stage 1");
  ws.run("-c train.json --out rerun train --stage 2 --stage1 run/stage1.scck --budget 256");
  e.determinism_seconds = seconds_since(t0);
  std::vector<std::string> diffs;
  for (const char* f : {"trials.csv", "summary.csv"}) {
    if (read_file(work / "budget_a" / f) != read_file(work / "budget_b" / f)) diffs.push_back(f);
  }
  for (const char* f : {"corpus.sctc", "stage1.scck", "stage2_b256.scck"}) {
    if (file_hash(work / "run" / f) != file_hash(work / "rerun" / f)) diffs.push_back(f);
  }
  e.determinism.passed = diffs.empty();
  e.determinism.detail = diffs.empty() ? "sweep CSVs byte-identical; corpus, stage-1 and stage-2 "
                                         "checkpoint hashes identical (" +
                                             file_hash(work / "run" / "stage2_b256.scck") + ")"
                                       : "differs:";
  for (const auto& d : diffs) e.determinism.detail += " " + d;
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string cli_path;
  std::string work = "acceptance_work";
  std::size_t trials = 100;
  std::vector<int> only;
  app.add_option("--cli", cli_path, "path to the sctts binary")->required();
  app.add_option("--work", work, "scratch directory for the end-to-end criteria");
  app.add_option("--trials", trials, "trials per sweep point");
  app.add_option("criteria", only, "run only these criteria (default: all)");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}
                                              : std::set<int>(only.begin(), only.end());
  std::size_t failures = 0;
  auto report = [&](int n, const char* title, const Outcome& o, double secs, double limit) {
    const bool in_time = limit <= 0.0 || secs < limit;
    const bool ok = o.passed && in_time;
    if (!ok) ++failures;
    std::string detail = o.detail;
    if (!in_time) detail += fmt(" [over the %.0f s budget]", limit);
    std::printf("criterion %2d %-24s %s  (%.1f s)  %s\n", n, title, ok ? "PASS" : "FAIL", secs,
                detail.c_str());
    std::fflush(stdout);
  };
  auto timed = [&](int n, const char* title, double limit, const std::function<Outcome()>& f) {
    if (!selected.count(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    report(n, title, o, seconds_since(t0), limit);
  };

  const std::uint64_t seed = 2024;
  timed(1, "gradient-suite", 60, gradients);
  timed(2, "rvq-fidelity", 300, kb_fidelity);
  timed(3, "quantizer-oracle", 60, [&] { return from_check(check_nearest_code(seed, 10000)); });
  timed(4, "channel-calibration", 60, [&] {
    return from_check(check_channel_calibration(seed, NoiseConvention::PerComplex, 100000));
  });
  timed(5, "sde-forward-moments", 60, [&] { return from_check(check_forward_moments(seed, 10000)); });
  timed(6, "sde-backward-oracle", 60,
        [&] { return from_check(check_backward_oracle(seed, 100000, 1000)); });
  timed(7, "ldpc-coding-gain", 120, [&] {
    return from_check(check_ldpc_gain(seed, NoiseConvention::PerComplex, 100000));
  });

  if (selected.count(8) || selected.count(9) || selected.count(10)) {
    try {
      const EndToEnd e = end_to_end(fs::absolute(cli_path), fs::absolute(work), trials);
      if (selected.count(8)) report(8, "end-to-end-snr-trend", e.trend, e.trend_seconds, 1800);
      if (selected.count(9)) report(9, "budget-trend", e.budget, e.budget_seconds, 600);
      if (selected.count(10)) {
        report(10, "determinism", e.determinism, e.determinism_seconds, 0);
      }
    } catch (const std::exception& ex) {
      const Outcome o{false, std::string("error: ") + ex.what()};
      for (int n : {8, 9, 10}) {
        if (selected.count(n)) report(n, "end-to-end", o, 0.0, 0);
      }
    }
  }

  timed(11, "loss-plumbing", 60, [&] { return from_check(check_loss_plumbing(seed)); });

  std::printf("%zu of %zu criteria passed\n", selected.size() - failures, selected.size());
  return failures == 0 ? 0 : 1;
}

#include "sctts/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sctts/error.hpp"
#include "sctts/metrics.hpp"

namespace sctts {

using ojson = nlohmann::ordered_json;

namespace {

// Reads the members of one JSON object, remembering which keys were used so
// that anything left over can be reported.
class Section {
 public:
  Section(const ojson& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    const auto it = node_.find(key);
    if (it == node_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string name;
    if (node_.find(key) == node_.end()) return;
    get(key, name);
    try {
      out = parse(name);
    } catch (const ContractError& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum_list(const char* key, std::vector<T>& out, Parse parse) {
    std::vector<std::string> names;
    if (node_.find(key) == node_.end()) return;
    get(key, names);
    out.clear();
    for (const auto& n : names) {
      try {
        out.push_back(parse(n));
      } catch (const ContractError& e) {
        throw ConfigError(path_ + "." + key + ": " + e.what());
      }
    }
  }

  // Nested object; absent means "all defaults".
  template <typename Fn>
  void child(const char* key, Fn&& fn) {
    const auto it = node_.find(key);
    if (it == node_.end()) return;
    seen_.insert(key);
    Section sub(*it, path_ + "." + key);
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (seen_.count(item.key()) == 0) {
        throw ConfigError("unknown key " + path_ + "." + item.key());
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "configuration" : path_; }

  const ojson& node_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* bp_name(BpAlgorithm a) { return a == BpAlgorithm::MinSum ? "min_sum" : "sum_product"; }
BpAlgorithm parse_bp(const std::string& s) {
  if (s == "sum_product") return BpAlgorithm::SumProduct;
  if (s == "min_sum") return BpAlgorithm::MinSum;
  throw ContractError("expected sum_product or min_sum, got '" + s + "'");
}

const char* noise_name(NoiseConvention n) {
  return n == NoiseConvention::PerReal ? "per_real" : "per_complex";
}
NoiseConvention parse_noise(const std::string& s) {
  if (s == "per_complex") return NoiseConvention::PerComplex;
  if (s == "per_real") return NoiseConvention::PerReal;
  throw ContractError("expected per_complex or per_real, got '" + s + "'");
}

std::vector<std::string> channel_names(const std::vector<ChannelModel>& v) {
  std::vector<std::string> out;
  for (const auto c : v) out.emplace_back(channel_name(c));
  return out;
}

void read_synth(Section& s, SynthConfig& c) {
  s.get("d_h", c.d_h);
  s.get("text_hidden", c.text_hidden);
  s.get("pitch_hidden", c.pitch_hidden);
  s.get("score_hidden", c.score_hidden);
  s.get("score_context", c.score_context);
  s.get("score_prior_var", c.score_prior_var);
  s.get("d_audio", c.d_audio);
  s.get("inference_steps", c.inference_steps);
  s.get("vocoder_seed", c.vocoder_seed);
  s.child("schedule", [&](Section& d) {
    d.get("beta0", c.schedule.beta0);
    d.get("beta1", c.schedule.beta1);
    d.get("t_max", c.schedule.t_max);
    d.get("t_min", c.schedule.t_min);
  });
}

ojson write_synth(const SynthConfig& c) {
  return ojson{{"d_h", c.d_h},
               {"text_hidden", c.text_hidden},
               {"pitch_hidden", c.pitch_hidden},
               {"score_hidden", c.score_hidden},
               {"score_context", c.score_context},
               {"score_prior_var", c.score_prior_var},
               {"d_audio", c.d_audio},
               {"inference_steps", c.inference_steps},
               {"vocoder_seed", c.vocoder_seed},
               {"schedule",
                {{"beta0", c.schedule.beta0},
                 {"beta1", c.schedule.beta1},
                 {"t_max", c.schedule.t_max},
                 {"t_min", c.schedule.t_min}}}};
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

Stage1Config RunConfig::stage1_for_corpus() const {
  Stage1Config c = stage1;
  c.kb.d_w = corpus.dims.d_w;
  return c;
}

Stage2Config RunConfig::stage2_for_budget(std::size_t budget_bits) const {
  Stage2Config c = stage2;
  c.d_x = budget_bits / kBitsPerAnalogReal;
  return c;
}

RunConfig parse_run_config(const std::string& json_text) {
  ojson root;
  try {
    root = ojson::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section top(root, "");
  top.get("output_dir", cfg.output_dir);
  top.child("corpus", [&](Section& s) {
    CorpusSettings& c = cfg.corpus;
    s.get("seed", c.seed);
    s.get("speakers", c.speakers);
    s.get("utterances_per_speaker", c.utterances_per_speaker);
    s.get("vocab", c.dims.vocab);
    s.get("d_t", c.dims.d_t);
    s.get("d_s", c.dims.d_s);
    s.get("d_ss", c.dims.d_ss);
    s.get("d_w", c.dims.d_w);
    s.get("min_len", c.dims.min_len);
    s.get("max_len", c.dims.max_len);
    s.get("max_duration", c.dims.max_duration);
  });
  top.child("stage1", [&](Section& s) {
    Stage1Config& c = cfg.stage1;
    s.get("stages", c.kb.stages);
    s.get("codes", c.kb.codes);
    s.get("hidden", c.kb.hidden);
    s.get("stage_hidden", c.kb.stage_hidden);
    s.child("weights", [&](Section& w) {
      w.get("recon", c.weights.recon);
      w.get("embed", c.weights.embed);
      w.get("commit", c.weights.commit);
    });
    s.get("steps", c.steps);
    s.get("batch", c.batch);
    s.get("lr", c.lr);
    s.get("codebook_lr", c.codebook_lr);
    s.get("dead_code_steps", c.dead_code_steps);
    s.get("clip_norm", c.clip_norm);
    s.get("divergence_limit", c.divergence_limit);
    s.get("seed", c.seed);
  });
  top.child("stage2", [&](Section& s) {
    Stage2Config& c = cfg.stage2;
    s.get("d_r", c.d_r);
    s.get("residual_hidden", c.residual_hidden);
    s.get("codec_hidden", c.codec_hidden);
    s.child("synth", [&](Section& y) { read_synth(y, c.synth); });
    s.get("epochs", c.epochs);
    s.get("batch", c.batch);
    s.get("lr_residual", c.lr_residual);
    s.get("lr_codec", c.lr_codec);
    s.get("lr_prior", c.lr_prior);
    s.get("lr_diff", c.lr_diff);
    s.get("lr_final_fraction", c.lr_final_fraction);
    s.get("clip_norm", c.clip_norm);
    s.get("snr_min_db", c.snr_min_db);
    s.get("snr_max_db", c.snr_max_db);
    s.get_enum_list("channels", c.channels, parse_channel);
    s.get("divergence_limit", c.divergence_limit);
    s.get("seed", c.seed);
  });
  top.child("baseline", [&](Section& s) {
    BaselineConfig& c = cfg.baseline;
    s.get("pcm_bits", c.pcm.bits);
    s.get("n", c.n);
    s.get("k", c.k);
    s.get("col_weight", c.col_weight);
    s.get("max_iterations", c.max_iterations);
    s.get_enum("algorithm", c.algorithm, parse_bp);
    s.get("code_seed", c.code_seed);
  });
  top.child("sweep", [&](Section& s) {
    SweepSettings& c = cfg.sweep;
    s.get_enum_list("schemes", c.grid.schemes, parse_scheme);
    s.get_enum_list("channels", c.grid.channels, parse_channel);
    s.get("snr_db", c.grid.snr_db);
    s.get("budgets", c.grid.budgets);
    s.get("trials", c.grid.trials);
    s.get("master_seed", c.grid.master_seed);
    s.get("jobs", c.grid.jobs);
    s.get("inference_steps", c.inference_steps);
    s.get_enum("noise", c.noise, parse_noise);
  });
  top.finish();
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  const CorpusSettings& co = cfg.corpus;
  const Stage1Config& s1 = cfg.stage1;
  const Stage2Config& s2 = cfg.stage2;
  const BaselineConfig& b = cfg.baseline;
  const SweepSettings& sw = cfg.sweep;
  std::vector<std::string> schemes;
  for (const auto s : sw.grid.schemes) schemes.emplace_back(scheme_name(s));
  ojson root{
      {"output_dir", cfg.output_dir},
      {"corpus",
       {{"seed", co.seed},
        {"speakers", co.speakers},
        {"utterances_per_speaker", co.utterances_per_speaker},
        {"vocab", co.dims.vocab},
        {"d_t", co.dims.d_t},
        {"d_s", co.dims.d_s},
        {"d_ss", co.dims.d_ss},
        {"d_w", co.dims.d_w},
        {"min_len", co.dims.min_len},
        {"max_len", co.dims.max_len},
        {"max_duration", co.dims.max_duration}}},
      {"stage1",
       {{"stages", s1.kb.stages},
        {"codes", s1.kb.codes},
        {"hidden", s1.kb.hidden},
        {"stage_hidden", s1.kb.stage_hidden},
        {"weights",
         {{"recon", s1.weights.recon},
          {"embed", s1.weights.embed},
          {"commit", s1.weights.commit}}},
        {"steps", s1.steps},
        {"batch", s1.batch},
        {"lr", s1.lr},
        {"codebook_lr", s1.codebook_lr},
        {"dead_code_steps", s1.dead_code_steps},
        {"clip_norm", s1.clip_norm},
        {"divergence_limit", s1.divergence_limit},
        {"seed", s1.seed}}},
      {"stage2",
       {{"d_r", s2.d_r},
        {"residual_hidden", s2.residual_hidden},
        {"codec_hidden", s2.codec_hidden},
        {"synth", write_synth(s2.synth)},
        {"epochs", s2.epochs},
        {"batch", s2.batch},
        {"lr_residual", s2.lr_residual},
        {"lr_codec", s2.lr_codec},
        {"lr_prior", s2.lr_prior},
        {"lr_diff", s2.lr_diff},
        {"lr_final_fraction", s2.lr_final_fraction},
        {"clip_norm", s2.clip_norm},
        {"snr_min_db", s2.snr_min_db},
        {"snr_max_db", s2.snr_max_db},
        {"channels", channel_names(s2.channels)},
        {"divergence_limit", s2.divergence_limit},
        {"seed", s2.seed}}},
      {"baseline",
       {{"pcm_bits", b.pcm.bits},
        {"n", b.n},
        {"k", b.k},
        {"col_weight", b.col_weight},
        {"max_iterations", b.max_iterations},
        {"algorithm", bp_name(b.algorithm)},
        {"code_seed", b.code_seed}}},
      {"sweep",
       {{"schemes", schemes},
        {"channels", channel_names(sw.grid.channels)},
        {"snr_db", sw.grid.snr_db},
        {"budgets", sw.grid.budgets},
        {"trials", sw.grid.trials},
        {"master_seed", sw.grid.master_seed},
        {"jobs", sw.grid.jobs},
        {"inference_steps", sw.inference_steps},
        {"noise", noise_name(sw.noise)}}}};
  return root.dump(2) + "\n";
}

void validate_run_config(const RunConfig& cfg) {
  const CorpusDims& d = cfg.corpus.dims;
  check(d.vocab >= 2, "corpus.vocab must be at least 2");
  check(d.min_len >= 1 && d.min_len <= d.max_len, "corpus.min_len must lie in [1, max_len]");
  check(d.max_len <= d.d_t, "corpus.max_len must not exceed d_t");
  check(d.max_duration >= 1, "corpus.max_duration must be positive");
  check(d.d_ss >= d.mixing_cols(),
        "corpus.d_ss must be at least vocab + 1 + d_s for a full-rank mixing matrix");
  check(cfg.corpus.speakers >= 1 && cfg.corpus.utterances_per_speaker >= 1,
        "corpus needs at least one speaker and one utterance");

  const Stage1Config& s1 = cfg.stage1;
  check(s1.kb.stages >= 1 && s1.kb.codes >= 2, "stage1 needs stages >= 1 and codes >= 2");
  check(s1.batch >= 1, "stage1.batch must be positive");
  check(s1.lr > 0.0 && s1.codebook_lr > 0.0, "stage1 learning rates must be positive");
  check(s1.clip_norm >= 0.0, "stage1.clip_norm must be non-negative");

  const Stage2Config& s2 = cfg.stage2;
  check(s2.batch >= 1, "stage2.batch must be positive");
  check(s2.lr_residual > 0.0 && s2.lr_codec > 0.0 && s2.lr_prior > 0.0 && s2.lr_diff > 0.0,
        "stage2 learning rates must be positive");
  check(s2.lr_final_fraction >= 0.0 && s2.lr_final_fraction <= 1.0,
        "stage2.lr_final_fraction must lie in [0, 1]");
  check(s2.clip_norm >= 0.0, "stage2.clip_norm must be non-negative");
  check(s2.snr_min_db <= s2.snr_max_db, "stage2.snr_min_db exceeds snr_max_db");
  check(!s2.channels.empty(), "stage2.channels must not be empty");
  check(s2.synth.score_prior_var >= 0.0, "stage2.synth.score_prior_var must be non-negative");
  const DiffusionSchedule& sch = s2.synth.schedule;
  check(sch.beta0 > 0.0 && sch.beta1 >= sch.beta0, "schedule needs 0 < beta0 <= beta1");
  check(sch.t_min > 0.0 && sch.t_min < sch.t_max && sch.t_max <= 1.0,
        "schedule needs 0 < t_min < t_max <= 1");

  const BaselineConfig& b = cfg.baseline;
  check(b.pcm.bits >= 1 && b.pcm.bits <= 24, "baseline.pcm_bits must lie in [1, 24]");
  check(b.k >= 1 && b.k < b.n, "baseline needs 1 <= k < n");

  const SweepGrid& g = cfg.sweep.grid;
  check(!g.schemes.empty() && !g.channels.empty() && !g.snr_db.empty() && !g.budgets.empty(),
        "sweep grid axes must not be empty");
  check(g.trials >= 1 && g.jobs >= 1, "sweep needs trials >= 1 and jobs >= 1");
  check(cfg.sweep.inference_steps >= 1, "sweep.inference_steps must be positive");
  const PacketLayout layout{d.d_t, s2.d_r, s1.kb.stages, s1.kb.codes};
  for (const std::size_t budget : g.budgets) {
    const std::string at = "sweep budget " + std::to_string(budget) + ": ";
    check(budget % kBitsPerAnalogReal == 0, at + "must be a multiple of 16 bits");
    const std::size_t d_x = budget / kBitsPerAnalogReal;
    check(d_x >= 2 && d_x % 2 == 0, at + "d_x = budget / 16 must be even and positive");
    check(d_x <= layout.d_f(), at + "d_x may not exceed the packet length d_f");
  }
}

}  // namespace sctts

#pragma once

// Run configuration: every module's settings in one JSON document.
//
// Derived sizes are not configurable: the KB and synthesizer take d_w, d_ss
// and the vocabulary from the corpus section, and each stage-two model takes
// d_x = budget / 16 from the budget grid.

#include <cstdint>
#include <filesystem>
#include <string>

#include "sctts/baseline.hpp"
#include "sctts/corpus.hpp"
#include "sctts/link.hpp"
#include "sctts/pipeline.hpp"
#include "sctts/train.hpp"

namespace sctts {

struct CorpusSettings {
  std::uint64_t seed = 7;
  CorpusDims dims;
  std::uint32_t speakers = 20;
  std::uint32_t utterances_per_speaker = 10;
  bool operator==(const CorpusSettings&) const = default;
};

struct SweepSettings {
  SweepGrid grid;
  std::size_t inference_steps = 200;
  NoiseConvention noise = NoiseConvention::PerComplex;
  bool operator==(const SweepSettings&) const = default;
};

struct RunConfig {
  CorpusSettings corpus;
  Stage1Config stage1;
  Stage2Config stage2;
  BaselineConfig baseline;
  SweepSettings sweep;
  std::string output_dir = "out";

  // Stage-one settings with the corpus-derived sizes filled in.
  Stage1Config stage1_for_corpus() const;
  // Stage-two settings for the model serving `budget_bits`.
  Stage2Config stage2_for_budget(std::size_t budget_bits) const;

  bool operator==(const RunConfig&) const = default;
};

// Throws ConfigError on unknown keys, wrong types and invalid values.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Pretty-printed JSON holding every key; parse_run_config inverts it.
std::string dump_run_config(const RunConfig& cfg);
// Cross-field checks (budget grid against the packet layout, ranges).
void validate_run_config(const RunConfig& cfg);

}  // namespace sctts

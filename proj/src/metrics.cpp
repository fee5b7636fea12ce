#include "sctts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "sctts/error.hpp"
#include "sctts/numkit/optim.hpp"

namespace sctts {

std::size_t levenshtein(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(std::span<const std::uint32_t> reference, std::span<const std::uint32_t> hypothesis) {
  require(!reference.empty(), "wer: empty reference");
  return static_cast<double>(levenshtein(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

SpkScore spk(const CorpusModel& world, const Mat64& frames, std::span<const double> v_spk) {
  SpkScore s;
  if (frames.rows() == 0) {
    s.degenerate = true;
    return s;
  }
  const Vec64 e = world.oracle_speaker_embed(frames);
  if (l2_norm(e.span()) == 0.0 || l2_norm(v_spk) == 0.0) {
    s.degenerate = true;
    return s;
  }
  s.value = cosine_similarity(e.span(), v_spk);
  return s;
}

std::size_t analog_bits_used(std::size_t d_x) noexcept { return d_x * kBitsPerAnalogReal; }

namespace {

auto sort_key(const TrialRecord& r) {
  return std::tie(r.scheme, r.snr_db, r.budget_bits, r.seed, r.trial);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_snr(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void mean_se(const std::vector<double>& v, double& mean, double& se) {
  mean = 0.0;
  se = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

void sort_records(std::vector<TrialRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const TrialRecord& a, const TrialRecord& b) { return sort_key(a) < sort_key(b); });
}

std::string trial_csv(std::vector<TrialRecord> records) {
  sort_records(records);
  std::string out = std::string(kTrialCsvHeader) + "\n";
  for (const auto& r : records) {
    out += r.scheme + "," + fmt_snr(r.snr_db) + "," + std::to_string(r.budget_bits) + "," +
           std::to_string(r.seed) + "," + std::to_string(r.trial) + "," + fmt(r.wer_token) + "," +
           fmt(r.wer_synth) + "," + fmt(r.spk) + "," +
           std::to_string(static_cast<int>(r.outage)) + "\n";
  }
  return out;
}

std::vector<PointSummary> summarize(std::vector<TrialRecord> records) {
  sort_records(records);
  std::vector<PointSummary> out;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    const auto& r0 = records[i];
    std::vector<double> wt, ws, sp;
    PointSummary p{r0.scheme, r0.snr_db, r0.budget_bits};
    while (j < records.size() && records[j].scheme == r0.scheme &&
           records[j].snr_db == r0.snr_db && records[j].budget_bits == r0.budget_bits) {
      wt.push_back(records[j].wer_token);
      ws.push_back(records[j].wer_synth);
      sp.push_back(records[j].spk);
      if (records[j].outage == Outage::Faded) ++p.outages;
      if (records[j].outage == Outage::Infeasible) ++p.infeasible;
      ++j;
    }
    p.trials = j - i;
    mean_se(wt, p.wer_token, p.wer_token_se);
    mean_se(ws, p.wer_synth, p.wer_synth_se);
    mean_se(sp, p.spk, p.spk_se);
    out.push_back(p);
    i = j;
  }
  return out;
}

std::string summary_csv(const std::vector<PointSummary>& points) {
  std::string out =
      "scheme,snr_db,budget_bits,trials,wer_token,wer_token_se,wer_synth,wer_synth_se,spk,spk_se,"
      "outages,infeasible\n";
  for (const auto& p : points) {
    out += p.scheme + "," + fmt_snr(p.snr_db) + "," + std::to_string(p.budget_bits) + "," +
           std::to_string(p.trials) + "," + fmt(p.wer_token) + "," + fmt(p.wer_token_se) + "," +
           fmt(p.wer_synth) + "," + fmt(p.wer_synth_se) + "," + fmt(p.spk) + "," +
           fmt(p.spk_se) + "," + std::to_string(p.outages) + "," + std::to_string(p.infeasible) +
           "\n";
  }
  return out;
}

}  // namespace sctts

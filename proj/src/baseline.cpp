#include "sctts/baseline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "sctts/error.hpp"

namespace sctts {

// ---------------------------------------------------------------- PCM

Bits pcm_encode(std::span<const double> v, const PcmConfig& cfg) {
  require(cfg.bits >= 1 && cfg.bits <= 30, "pcm: bits per sample must be in 1..30");
  const double levels = std::ldexp(1.0, static_cast<int>(cfg.bits));
  const auto top = static_cast<std::uint32_t>(levels) - 1;
  Bits out;
  out.reserve(v.size() * cfg.bits);
  for (double x : v) {
    const double c = std::clamp(x, -1.0, 1.0);
    const double qf = std::floor((c + 1.0) / 2.0 * levels);
    const std::uint32_t q = std::isnan(x) ? 0 : std::min(top, static_cast<std::uint32_t>(qf));
    for (unsigned b = cfg.bits; b-- > 0;) out.push_back(static_cast<std::uint8_t>((q >> b) & 1u));
  }
  return out;
}

Vec64 pcm_decode(std::span<const std::uint8_t> bits, const PcmConfig& cfg) {
  require(cfg.bits >= 1 && cfg.bits <= 30, "pcm: bits per sample must be in 1..30");
  if (bits.size() % cfg.bits != 0) {
    throw DecodeError("pcm_decode: " + std::to_string(bits.size()) +
                      " bits is not a whole number of samples");
  }
  const double levels = std::ldexp(1.0, static_cast<int>(cfg.bits));
  Vec64 out(bits.size() / cfg.bits);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t q = 0;
    for (unsigned b = 0; b < cfg.bits; ++b) q = (q << 1) | (bits[i * cfg.bits + b] & 1u);
    out[i] = (static_cast<double>(q) + 0.5) / levels * 2.0 - 1.0;
  }
  return out;
}

// ---------------------------------------------------------------- LDPC

namespace {

using Words = std::vector<std::uint64_t>;

bool get_bit(const Words& w, std::size_t i) { return (w[i / 64] >> (i % 64)) & 1u; }
void flip_bit(Words& w, std::size_t i) { w[i / 64] ^= std::uint64_t{1} << (i % 64); }

// Edge list as (variable, check) pairs from a socket permutation.
std::vector<std::pair<std::uint32_t, std::uint32_t>> draw_edges(std::size_t n, std::size_t wc,
                                                                std::size_t wr, SeededRng& rng) {
  std::vector<std::uint32_t> sockets(n * wc);
  for (std::size_t i = 0; i < sockets.size(); ++i) sockets[i] = static_cast<std::uint32_t>(i / wr);
  for (std::size_t i = sockets.size(); i > 1; --i) std::swap(sockets[i - 1], sockets[rng.below(i)]);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges(sockets.size());
  for (std::size_t e = 0; e < sockets.size(); ++e) {
    edges[e] = {static_cast<std::uint32_t>(e / wc), sockets[e]};
  }
  return edges;
}

struct Adjacency {
  std::vector<std::vector<std::uint32_t>> var_checks;
  std::vector<std::vector<std::uint32_t>> check_vars;
};

Adjacency adjacency(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                    std::size_t n, std::size_t m) {
  Adjacency a{std::vector<std::vector<std::uint32_t>>(n), std::vector<std::vector<std::uint32_t>>(m)};
  for (const auto& [v, c] : edges) {
    a.var_checks[v].push_back(c);
    a.check_vars[c].push_back(v);
  }
  for (auto& l : a.var_checks) std::sort(l.begin(), l.end());
  for (auto& l : a.check_vars) std::sort(l.begin(), l.end());
  return a;
}

// Edges that are parallel (same pair twice) or close a 4-cycle.
std::vector<std::size_t> bad_edges(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
                                   std::size_t n, std::size_t m) {
  const Adjacency a = adjacency(edges, n, m);
  std::vector<std::size_t> bad;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [v, c] = edges[e];
    const auto& vc = a.var_checks[v];
    if (std::count(vc.begin(), vc.end(), c) > 1) {
      bad.push_back(e);
      continue;
    }
    bool cycle = false;
    for (const auto u : a.check_vars[c]) {
      if (u == v) continue;
      int shared = 0;
      const auto& uc = a.var_checks[u];
      for (const auto c2 : vc) {
        if (std::binary_search(uc.begin(), uc.end(), c2)) ++shared;
      }
      if (shared >= 2) {
        cycle = true;
        break;
      }
    }
    if (cycle) bad.push_back(e);
  }
  return bad;
}

}  // namespace

std::size_t LdpcCode::four_cycles() const {
  std::size_t count = 0;
  for (std::size_t a = 0; a < checks_.size(); ++a) {
    for (std::size_t b = a + 1; b < checks_.size(); ++b) {
      std::size_t shared = 0;
      for (const auto v : checks_[a]) {
        if (std::binary_search(checks_[b].begin(), checks_[b].end(), v)) ++shared;
      }
      count += shared * (shared - 1) / 2;
    }
  }
  return count;
}

LdpcCode ldpc_build(std::uint64_t seed, std::size_t n, std::size_t k, std::size_t col_weight) {
  require(k > 0 && k < n, "ldpc_build: need 0 < k < n");
  require(col_weight >= 2, "ldpc_build: column weight must be at least 2");
  const std::size_t m = n - k;
  require((n * col_weight) % m == 0, "ldpc_build: n * col_weight must be divisible by n - k");
  const std::size_t row_weight = n * col_weight / m;
  require(row_weight <= n, "ldpc_build: row weight exceeds n");

  constexpr std::uint32_t kMaxAttempts = 64;
  const SeededRng root = SeededRng(seed).child("ldpc");
  for (std::uint32_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    SeededRng rng = root.child(attempt);
    auto edges = draw_edges(n, col_weight, row_weight, rng);

    // Swap the check ends of offending edges with random partners; a swap is
    // kept only if it does not increase the offender count.
    auto bad = bad_edges(edges, n, m);
    for (int pass = 0; pass < 200 && !bad.empty(); ++pass) {
      for (const auto e : bad) {
        const std::size_t other = rng.below(edges.size());
        std::swap(edges[e].second, edges[other].second);
      }
      auto next = bad_edges(edges, n, m);
      bad = std::move(next);
    }
    // Parallel edges are fatal; leftover 4-cycles are tolerated.
    const Adjacency adj = adjacency(edges, n, m);
    bool parallel = false;
    for (const auto& vc : adj.var_checks) {
      if (std::adjacent_find(vc.begin(), vc.end()) != vc.end()) parallel = true;
    }
    if (parallel) continue;

    // Reduced row echelon form of H over GF(2).
    const std::size_t words = (n + 63) / 64;
    std::vector<Words> rows(m, Words(words));
    for (std::size_t c = 0; c < m; ++c) {
      for (const auto v : adj.check_vars[c]) flip_bit(rows[c], v);
    }
    std::vector<std::uint32_t> pivots;
    std::size_t r = 0;
    for (std::size_t col = 0; col < n && r < m; ++col) {
      std::size_t p = r;
      while (p < m && !get_bit(rows[p], col)) ++p;
      if (p == m) continue;
      std::swap(rows[p], rows[r]);
      for (std::size_t i = 0; i < m; ++i) {
        if (i != r && get_bit(rows[i], col)) {
          for (std::size_t w = 0; w < words; ++w) rows[i][w] ^= rows[r][w];
        }
      }
      pivots.push_back(static_cast<std::uint32_t>(col));
      ++r;
    }
    if (r < m) continue;  // rank deficient

    LdpcCode code;
    code.n_ = n;
    code.k_ = k;
    code.checks_ = adj.check_vars;
    code.vars_ = adj.var_checks;
    code.parity_pos_ = pivots;
    std::vector<bool> is_pivot(n, false);
    for (const auto p : pivots) is_pivot[p] = true;
    for (std::uint32_t v = 0; v < n; ++v) {
      if (!is_pivot[v]) code.info_pos_.push_back(v);
    }
    const std::size_t info_words = (k + 63) / 64;
    code.parity_rows_.assign(m, Words(info_words));
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (get_bit(rows[i], code.info_pos_[j])) flip_bit(code.parity_rows_[i], j);
      }
    }
    code.attempts_ = attempt + 1;
    return code;
  }
  throw ContractError("ldpc_build: no full-rank parity-check matrix after " +
                      std::to_string(kMaxAttempts) + " attempts");
}

Bits LdpcCode::encode(std::span<const std::uint8_t> info) const {
  require(info.size() == k_, "ldpc encode: expected k information bits");
  Words packed((k_ + 63) / 64);
  for (std::size_t j = 0; j < k_; ++j) {
    if (info[j] & 1u) flip_bit(packed, j);
  }
  Bits word(n_, 0);
  for (std::size_t j = 0; j < k_; ++j) word[info_pos_[j]] = info[j] & 1u;
  for (std::size_t i = 0; i < parity_rows_.size(); ++i) {
    std::uint64_t acc = 0;
    for (std::size_t w = 0; w < packed.size(); ++w) acc ^= packed[w] & parity_rows_[i][w];
    word[parity_pos_[i]] = static_cast<std::uint8_t>(std::popcount(acc) & 1);
  }
  return word;
}

bool LdpcCode::is_codeword(std::span<const std::uint8_t> word) const {
  require(word.size() == n_, "ldpc syndrome: expected n bits");
  for (const auto& check : checks_) {
    unsigned parity = 0;
    for (const auto v : check) parity ^= word[v] & 1u;
    if (parity != 0) return false;
  }
  return true;
}

Bits LdpcCode::extract_info(std::span<const std::uint8_t> word) const {
  require(word.size() == n_, "ldpc extract: expected n bits");
  Bits info(k_);
  for (std::size_t j = 0; j < k_; ++j) info[j] = word[info_pos_[j]];
  return info;
}

LdpcDecodeResult ldpc_decode(std::span<const double> llr, const LdpcCode& code,
                             std::size_t max_iterations, BpAlgorithm algorithm) {
  require(llr.size() == code.n(), "ldpc_decode: expected n LLRs");
  require(max_iterations >= 1, "ldpc_decode: need at least one iteration");
  const auto& checks = code.check_vars();
  const auto& vars = code.var_checks();

  // Edge e belongs to check c at slot s; messages indexed by edge.
  std::vector<std::size_t> check_start(checks.size() + 1, 0);
  for (std::size_t c = 0; c < checks.size(); ++c) check_start[c + 1] = check_start[c] + checks[c].size();
  const std::size_t edges = check_start.back();
  std::vector<std::uint32_t> edge_var(edges);
  for (std::size_t c = 0; c < checks.size(); ++c) {
    for (std::size_t s = 0; s < checks[c].size(); ++s) edge_var[check_start[c] + s] = checks[c][s];
  }
  // Per-variable list of its edges.
  std::vector<std::vector<std::size_t>> var_edges(vars.size());
  for (std::size_t e = 0; e < edges; ++e) var_edges[edge_var[e]].push_back(e);

  std::vector<double> v2c(edges), c2v(edges, 0.0);
  for (std::size_t e = 0; e < edges; ++e) v2c[e] = llr[edge_var[e]];

  constexpr double kClamp = 1.0 - 1e-15;
  LdpcDecodeResult out;
  out.word.assign(code.n(), 0);
  std::vector<double> t;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    for (std::size_t c = 0; c < checks.size(); ++c) {
      const std::size_t b = check_start[c];
      const std::size_t deg = checks[c].size();
      if (algorithm == BpAlgorithm::SumProduct) {
        t.resize(deg);
        for (std::size_t s = 0; s < deg; ++s) t[s] = std::tanh(0.5 * v2c[b + s]);
        for (std::size_t s = 0; s < deg; ++s) {
          double prod = 1.0;
          for (std::size_t q = 0; q < deg; ++q) {
            if (q != s) prod *= t[q];
          }
          prod = std::clamp(prod, -kClamp, kClamp);
          c2v[b + s] = 2.0 * std::atanh(prod);
        }
      } else {
        for (std::size_t s = 0; s < deg; ++s) {
          double sign = 1.0;
          double mag = std::numeric_limits<double>::infinity();
          for (std::size_t q = 0; q < deg; ++q) {
            if (q == s) continue;
            if (v2c[b + q] < 0.0) sign = -sign;
            mag = std::min(mag, std::abs(v2c[b + q]));
          }
          c2v[b + s] = sign * mag;
        }
      }
    }
    for (std::size_t v = 0; v < vars.size(); ++v) {
      double total = llr[v];
      for (const auto e : var_edges[v]) total += c2v[e];
      out.word[v] = total < 0.0 ? 1 : 0;
      for (const auto e : var_edges[v]) v2c[e] = total - c2v[e];
    }
    out.iterations = it;
    if (code.is_codeword(out.word)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

Vec64 bpsk_modulate(std::span<const std::uint8_t> bits) {
  Vec64 s(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = (bits[i] & 1u) ? -1.0 : 1.0;
  return s;
}

Vec64 bpsk_llr(std::span<const double> y, double sigma2) {
  require(sigma2 > 0.0, "bpsk_llr: noise variance must be positive");
  Vec64 l(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) l[i] = 2.0 * y[i] / sigma2;
  return l;
}

// ---------------------------------------------------------------- chain

BaselineCodec::BaselineCodec(BaselineConfig cfg)
    : cfg_(cfg), code_(ldpc_build(cfg.code_seed, cfg.n, cfg.k, cfg.col_weight)) {
  require(cfg_.n % 2 == 0, "baseline: n must be even (two coded bits per complex symbol)");
}

BaselinePlan BaselineCodec::plan(std::size_t budget_bits, std::size_t d_t, std::size_t d_r,
                                 std::size_t d_w) const {
  BaselinePlan p;
  const std::size_t b = cfg_.pcm.bits;
  const std::size_t max_cw = budget_bits / cfg_.n;
  const std::size_t max_samples = max_cw * cfg_.k / b;
  if (max_samples < d_t) return p;
  p.feasible = true;
  p.t_samples = d_t;
  p.r_samples = std::min(d_r, max_samples - d_t);
  p.w_samples = std::min(d_w, max_samples - d_t - p.r_samples);
  p.source_bits = (p.t_samples + p.r_samples + p.w_samples) * b;
  p.codewords = (p.source_bits + cfg_.k - 1) / cfg_.k;
  p.channel_bits = p.codewords * cfg_.n;
  return p;
}

BaselineReceived BaselineCodec::transmit(const BaselineSource& src, std::size_t budget_bits,
                                         const ChannelRealization& channel, SeededRng& rng,
                                         NoiseConvention convention) const {
  BaselineReceived out;
  out.plan = plan(budget_bits, src.t.size(), src.r.size(), src.w.size());
  out.fields = {Vec64(src.t.size()), Vec64(src.r.size()), Vec64(src.w.size())};
  if (!out.plan.feasible) return out;
  const BaselinePlan& p = out.plan;

  std::vector<double> samples;
  samples.insert(samples.end(), src.t.begin(), src.t.end());
  samples.insert(samples.end(), src.r.begin(), src.r.begin() + static_cast<std::ptrdiff_t>(p.r_samples));
  samples.insert(samples.end(), src.w.begin(), src.w.begin() + static_cast<std::ptrdiff_t>(p.w_samples));
  Bits info = pcm_encode(samples, cfg_.pcm);
  info.resize(p.codewords * cfg_.k, 0);

  Bits coded;
  coded.reserve(p.channel_bits);
  for (std::size_t c = 0; c < p.codewords; ++c) {
    const auto word = code_.encode(std::span<const std::uint8_t>(info).subspan(c * cfg_.k, cfg_.k));
    coded.insert(coded.end(), word.begin(), word.end());
  }
  // Unit-energy complex symbols: each coded bit rides one real axis at 1/sqrt(2).
  Vec64 x = bpsk_modulate(coded);
  const double a = std::sqrt(0.5);
  for (double& v : x) v *= a;
  const Vec64 y = apply_channel(x.span(), channel, rng, convention);
  const Equalized eq = equalize(y.span(), channel);
  if (eq.outage) {
    out.outage = true;
    return out;
  }
  // After scaling back by sqrt(2), per-real noise is sigma^2 / |h|^2.
  const double gain2 = channel.model == ChannelModel::Awgn ? 1.0 : std::norm(channel.h);
  const double eff = channel.sigma2 / gain2;
  Vec64 llr(eq.y.size());
  for (std::size_t i = 0; i < llr.size(); ++i) {
    const double yi = eq.y[i] / a;
    llr[i] = eff > 0.0 ? 2.0 * yi / eff : (yi < 0.0 ? -1e3 : 1e3);
  }

  Bits decoded;
  decoded.reserve(info.size());
  for (std::size_t c = 0; c < p.codewords; ++c) {
    const auto r = ldpc_decode(llr.span().subspan(c * cfg_.n, cfg_.n), code_, cfg_.max_iterations,
                               cfg_.algorithm);
    if (!r.converged) ++out.codewords_failed;
    const Bits part = code_.extract_info(r.word);
    decoded.insert(decoded.end(), part.begin(), part.end());
  }
  decoded.resize(p.source_bits);
  const Vec64 v = pcm_decode(decoded, cfg_.pcm);
  std::size_t i = 0;
  for (std::size_t j = 0; j < p.t_samples; ++j) out.fields.t[j] = v[i++];
  for (std::size_t j = 0; j < p.r_samples; ++j) out.fields.r[j] = v[i++];
  for (std::size_t j = 0; j < p.w_samples; ++j) out.fields.w[j] = v[i++];
  return out;
}

}  // namespace sctts

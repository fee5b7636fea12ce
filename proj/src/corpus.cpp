#include "sctts/corpus.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "sctts/error.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/numkit/kernels.hpp"

namespace sctts {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> view(const Mat64& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

Mat64 from_eigen(const RowMatrix& m) {
  Mat64 out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  Eigen::Map<RowMatrix>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

constexpr std::uint32_t kMaxMixingDraws = 16;

}  // namespace

CorpusModel::CorpusModel(std::uint64_t seed, CorpusDims dims) : seed_(seed), dims_(dims) {
  require(dims_.vocab >= 3, "corpus: vocabulary too small");
  require(dims_.min_len >= 1 && dims_.min_len <= dims_.max_len, "corpus: bad length range");
  require(dims_.max_len <= dims_.d_t, "corpus: sentences must fit the token vector");
  require(dims_.max_duration >= 1, "corpus: max_duration must be positive");
  const std::size_t cols = dims_.mixing_cols();
  if (dims_.d_ss < cols) {
    throw ContractError("corpus: d_ss must be at least V + 1 + d_s for a full-column-rank mixing");
  }

  const SeededRng root(seed_);
  for (std::uint32_t attempt = 0;; ++attempt) {
    if (attempt == kMaxMixingDraws) {
      throw ContractError("corpus: could not draw a well-conditioned mixing matrix");
    }
    SeededRng rng = root.child("mixing").child(attempt);
    Mat64 g(dims_.d_ss, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims_.d_ss));
    for (double& v : g.flat()) v = scale * rng.normal();
    const RowMatrix gram = view(g).transpose() * view(g);
    Eigen::SelfAdjointEigenSolver<RowMatrix> eig(gram);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    const double cond = lo > 0.0 ? std::sqrt(hi / lo) : INFINITY;
    if (!(cond <= kMaxCondition)) continue;
    mixing_ = std::move(g);
    condition_ = cond;
    redraws_ = attempt;
    // Normal-equation solve: (G^T G) X = G^T.
    const RowMatrix gt = view(mixing_).transpose();
    unmixing_ = from_eigen(gram.ldlt().solve(gt));
    break;
  }

  SeededRng fm = root.child("feature_map");
  feature_map_ = Mat64(dims_.d_w, dims_.d_ss);
  const double fscale = 1.0 / std::sqrt(static_cast<double>(dims_.d_ss));
  for (double& v : feature_map_.flat()) v = fscale * fm.normal();

  SeededRng dur = root.child("durations");
  SeededRng pit = root.child("pitch_offsets");
  durations_.resize(dims_.vocab);
  pitch_offsets_.resize(dims_.vocab);
  for (std::size_t id = 0; id < dims_.vocab; ++id) {
    durations_[id] = 1 + static_cast<std::uint32_t>(dur.below(dims_.max_duration));
    pitch_offsets_[id] = pit.uniform(-0.5, 0.5);
  }
}

SpeakerProfile CorpusModel::generate_speaker(std::uint32_t speaker_id) const {
  SeededRng rng = SeededRng(seed_).child("speaker").child(speaker_id);
  SpeakerProfile p{speaker_id, Vec64(dims_.d_s)};
  for (double& v : p.factors) v = rng.uniform(-1.0, 1.0);
  return p;
}

TokenVector CorpusModel::tokenize(std::span<const std::uint32_t> ids) const {
  require(ids.size() <= dims_.d_t, "tokenize: sentence longer than d_t");
  TokenVector t{Vec64(dims_.d_t), std::vector<std::uint32_t>(ids.begin(), ids.end())};
  const double denom = static_cast<double>(dims_.vocab - 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < dims_.vocab, "tokenize: token id outside the vocabulary");
    t.embedded[i] = static_cast<double>(ids[i]) / denom;
  }
  return t;
}

std::vector<std::uint32_t> CorpusModel::random_token_ids(SeededRng& rng) const {
  const std::size_t len = dims_.min_len + rng.below(dims_.max_len - dims_.min_len + 1);
  std::vector<std::uint32_t> ids;
  ids.reserve(len);
  while (ids.size() < len) {
    const auto id = static_cast<std::uint32_t>(1 + rng.below(dims_.vocab - 1));
    if (!ids.empty() && ids.back() == id) continue;
    ids.push_back(id);
  }
  return ids;
}

double CorpusModel::base_pitch(std::span<const double> factors) const {
  return 0.5 * factors[0];
}

Vec64 CorpusModel::mix_frame(std::uint32_t id, double pitch,
                             std::span<const double> factors) const {
  Vec64 out(dims_.d_ss);
  for (std::size_t r = 0; r < dims_.d_ss; ++r) {
    const auto g = mixing_.row(r);
    double v = g[id] + g[dims_.vocab] * pitch;
    for (std::size_t k = 0; k < dims_.d_s; ++k) v += g[dims_.vocab + 1 + k] * factors[k];
    out[r] = v;
  }
  return out;
}

Vec64 CorpusModel::demonstration_feature(const Mat64& frames) const {
  require(frames.cols() == dims_.d_ss && frames.rows() > 0, "demonstration_feature: bad frames");
  Vec64 mean(dims_.d_ss);
  for (std::size_t f = 0; f < frames.rows(); ++f) {
    kernels::axpy(1.0, frames.row(f), mean.span());
  }
  for (double& v : mean) v /= static_cast<double>(frames.rows());
  Vec64 w(dims_.d_w);
  for (std::size_t r = 0; r < dims_.d_w; ++r) w[r] = kernels::dot(feature_map_.row(r), mean.span());
  return w;
}

Utterance CorpusModel::synthesize_utterance(const SpeakerProfile& speaker,
                                            const TokenVector& tokens) const {
  require(speaker.factors.size() == dims_.d_s, "synthesize_utterance: bad speaker profile");
  require(!tokens.ids.empty(), "synthesize_utterance: empty sentence");
  Utterance u{speaker, tokens, Vec64(), GroundTruth{}};
  std::size_t frames = 0;
  for (const auto id : tokens.ids) {
    require(id < dims_.vocab, "synthesize_utterance: token id outside the vocabulary");
    u.truth.durations.push_back(durations_[id]);
    frames += durations_[id];
  }
  u.truth.pitch = Vec64(frames);
  u.truth.frames = Mat64(frames, dims_.d_ss);
  const double base = base_pitch(speaker.factors);
  std::size_t f = 0;
  for (std::size_t l = 0; l < tokens.ids.size(); ++l) {
    const auto id = tokens.ids[l];
    for (std::uint32_t k = 0; k < u.truth.durations[l]; ++k, ++f) {
      const double p = base + pitch_offsets_[id];
      u.truth.pitch[f] = p;
      const Vec64 frame = mix_frame(id, p, speaker.factors);
      std::copy(frame.begin(), frame.end(), u.truth.frames.row(f).begin());
    }
  }
  u.w = demonstration_feature(u.truth.frames);
  return u;
}

Vec64 CorpusModel::unmix_frame(std::span<const double> frame) const {
  require(frame.size() == dims_.d_ss, "unmix_frame: frame dimension mismatch");
  Vec64 coeffs(unmixing_.rows());
  for (std::size_t r = 0; r < unmixing_.rows(); ++r) coeffs[r] = kernels::dot(unmixing_.row(r), frame);
  return coeffs;
}

std::vector<std::uint32_t> CorpusModel::frame_tokens(const Mat64& frames) const {
  require(frames.cols() == dims_.d_ss, "recognize: frame dimension mismatch");
  std::vector<std::uint32_t> out;
  out.reserve(frames.rows());
  for (std::size_t f = 0; f < frames.rows(); ++f) {
    const Vec64 c = unmix_frame(frames.row(f));
    std::uint32_t best = 0;
    for (std::uint32_t id = 1; id < dims_.vocab; ++id) {
      if (c[id] > c[best]) best = id;
    }
    out.push_back(best);
  }
  return out;
}

std::vector<std::uint32_t> CorpusModel::oracle_recognize(const Mat64& frames) const {
  std::vector<std::uint32_t> seq;
  for (const auto id : frame_tokens(frames)) {
    if (seq.empty() || seq.back() != id) seq.push_back(id);
  }
  return seq;
}

Vec64 CorpusModel::oracle_speaker_embed(const Mat64& frames) const {
  require(frames.rows() >= 1, "oracle_speaker_embed: needs at least one frame");
  require(frames.cols() == dims_.d_ss, "oracle_speaker_embed: frame dimension mismatch");
  Vec64 v(dims_.d_s);
  for (std::size_t f = 0; f < frames.rows(); ++f) {
    const Vec64 c = unmix_frame(frames.row(f));
    for (std::size_t k = 0; k < dims_.d_s; ++k) v[k] += c[dims_.vocab + 1 + k];
  }
  for (double& x : v) x /= static_cast<double>(frames.rows());
  return v;
}

Corpus generate_corpus(std::uint64_t seed, const CorpusDims& dims, std::uint32_t speakers,
                       std::uint32_t utterances_per_speaker) {
  require(speakers >= 1 && utterances_per_speaker >= 1, "generate_corpus: empty corpus");
  Corpus corpus{CorpusModel(seed, dims), speakers, {}};
  const SeededRng sentences = SeededRng(seed).child("sentences");
  for (std::uint32_t s = 0; s < speakers; ++s) {
    const SpeakerProfile speaker = corpus.model.generate_speaker(s);
    for (std::uint32_t j = 0; j < utterances_per_speaker; ++j) {
      SeededRng rng = sentences.child(std::uint64_t{s} * utterances_per_speaker + j);
      const auto ids = corpus.model.random_token_ids(rng);
      corpus.utterances.push_back(
          corpus.model.synthesize_utterance(speaker, corpus.model.tokenize(ids)));
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  const CorpusDims& d = corpus.model.dims();
  ByteWriter out;
  out.magic("SCTC");
  out.u16(kCorpusVersion);
  out.u64(corpus.model.seed());
  for (const auto v : {d.vocab, d.d_t, d.d_s, d.d_ss, d.d_w, d.min_len, d.max_len, d.max_duration}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.u32(corpus.speakers);
  out.u64(corpus.utterances.size());
  for (const auto& u : corpus.utterances) {
    out.u32(u.speaker.id);
    out.f64s(u.speaker.factors);
    out.u32_array(u.tokens.ids);
    out.u32_array(u.truth.durations);
    out.f64_array(u.truth.pitch);
    out.f64_array(u.truth.frames.flat());
    out.f64s(u.w);
  }
  out.save(path);
}

Corpus load_corpus(const std::filesystem::path& path) {
  ByteReader in = ByteReader::load(path);
  in.expect_magic("SCTC");
  const auto version = in.u16();
  if (version != kCorpusVersion) throw FormatError("unsupported corpus version");
  const std::uint64_t seed = in.u64();
  CorpusDims d;
  for (std::size_t* field : {&d.vocab, &d.d_t, &d.d_s, &d.d_ss, &d.d_w, &d.min_len, &d.max_len,
                             &d.max_duration}) {
    *field = in.u32();
  }
  if (d.vocab > 4096 || d.d_ss > 4096 || d.d_w > 4096 || d.d_s > 4096 || d.d_t > 4096) {
    throw FormatError("implausible corpus dimensions");
  }
  Corpus corpus{CorpusModel(seed, d), in.u32(), {}};
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    Utterance u;
    u.speaker.id = in.u32();
    u.speaker.factors = Vec64(d.d_s);
    in.f64s(u.speaker.factors.span());
    const auto ids = in.u32_array();
    for (const auto id : ids) {
      if (id >= d.vocab) throw FormatError("token id outside the vocabulary");
    }
    if (ids.size() > d.d_t) throw FormatError("sentence longer than d_t");
    u.tokens = corpus.model.tokenize(ids);
    u.truth.durations = in.u32_array();
    const auto pitch = in.f64_array();
    u.truth.pitch = Vec64(std::span<const double>(pitch));
    const auto frames = in.f64_array();
    if (frames.size() != pitch.size() * d.d_ss) throw FormatError("frame block size mismatch");
    u.truth.frames = Mat64(pitch.size(), d.d_ss);
    std::copy(frames.begin(), frames.end(), u.truth.frames.data());
    u.w = Vec64(d.d_w);
    in.f64s(u.w.span());
    corpus.utterances.push_back(std::move(u));
  }
  in.expect_end();
  return corpus;
}

void write_corpus_manifest(const Corpus& corpus, const std::filesystem::path& corpus_path,
                           const std::filesystem::path& manifest_path) {
  const CorpusDims& d = corpus.model.dims();
  std::size_t frames = 0;
  for (const auto& u : corpus.utterances) frames += u.truth.frame_count();
  nlohmann::ordered_json j;
  j["format"] = "SCTC";
  j["version"] = kCorpusVersion;
  j["file"] = corpus_path.filename().string();
  j["seed"] = corpus.model.seed();
  j["dims"] = {{"vocab", d.vocab},     {"d_t", d.d_t},         {"d_s", d.d_s},
               {"d_ss", d.d_ss},       {"d_w", d.d_w},         {"min_len", d.min_len},
               {"max_len", d.max_len}, {"max_duration", d.max_duration}};
  j["speakers"] = corpus.speakers;
  j["utterances"] = corpus.utterances.size();
  j["frames"] = frames;
  j["mixing_condition"] = corpus.model.mixing_condition();
  if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path);
  out << j.dump(2) << '\n';
}

}  // namespace sctts

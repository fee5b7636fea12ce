#include "sctts/kb.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "sctts/error.hpp"
#include "sctts/numkit/binio.hpp"
#include "sctts/numkit/kernels.hpp"

namespace sctts {

// ---------------------------------------------------------------- stages

ResidualStage::ResidualStage(Mlp proj, Mlp res, Order order)
    : proj_(std::move(proj)), res_(std::move(res)), order_(order) {
  require(proj_.input_size() == proj_.output_size(), "ResidualStage: projection must be square");
  require(res_.input_size() == proj_.input_size() && res_.output_size() == proj_.input_size(),
          "ResidualStage: residual block dimension mismatch");
}

ResidualStage ResidualStage::random(std::size_t dim, std::size_t hidden, Order order,
                                    SeededRng rng) {
  return ResidualStage(Mlp::identity(dim),
                       Mlp::random({dim, hidden, dim}, {Activation::Tanh, Activation::Identity},
                                   rng.child("res")),
                       order);
}

ResidualStage ResidualStage::identity(std::size_t dim, std::size_t hidden, Order order) {
  return ResidualStage(Mlp::identity(dim),
                       Mlp({dim, hidden, dim}, {Activation::Tanh, Activation::Identity}), order);
}

Vec64 ResidualStage::apply(std::span<const double> x) const {
  Tape scratch;
  return forward(x, scratch);
}

Vec64 ResidualStage::forward(std::span<const double> x, Tape& tape) const {
  if (order_ == Order::ProjectFirst) {
    Vec64 u = proj_.forward(x, tape.proj);
    const Vec64 r = res_.forward(u.span(), tape.res);
    kernels::axpy(1.0, r.span(), u.span());
    return u;
  }
  Vec64 v(x);
  const Vec64 r = res_.forward(x, tape.res);
  kernels::axpy(1.0, r.span(), v.span());
  return proj_.forward(v.span(), tape.proj);
}

Vec64 ResidualStage::backward(const Tape& tape, std::span<const double> upstream,
                              std::span<double> grads) const {
  require(grads.size() == param_count(), "ResidualStage backward: gradient buffer size mismatch");
  auto g_proj = grads.first(proj_.param_count());
  auto g_res = grads.subspan(proj_.param_count());
  if (order_ == Order::ProjectFirst) {
    Vec64 g_u(upstream);
    const Vec64 via_res = res_.backward(tape.res, upstream, g_res);
    kernels::axpy(1.0, via_res.span(), g_u.span());
    return proj_.backward(tape.proj, g_u.span(), g_proj);
  }
  Vec64 g_v = proj_.backward(tape.proj, upstream, g_proj);
  const Vec64 via_res = res_.backward(tape.res, g_v.span(), g_res);
  kernels::axpy(1.0, via_res.span(), g_v.span());
  return g_v;
}

// ---------------------------------------------------------------- model

KbModel KbModel::random(const KbConfig& cfg, SeededRng rng) {
  require(cfg.stages >= 1 && cfg.codes >= 1 && cfg.d_w >= 1, "KbModel: empty configuration");
  KbModel m;
  m.config = cfg;
  const std::size_t d = cfg.d_w;
  m.tx.source = ResidualStage::random(d, cfg.hidden, ResidualStage::Order::ProjectFirst,
                                      rng.child("source"));
  m.rx.reconstruct = ResidualStage::random(d, cfg.hidden, ResidualStage::Order::ResidualFirst,
                                           rng.child("reconstruct"));
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    m.tx.encoders.push_back(ResidualStage::random(d, cfg.stage_hidden,
                                                  ResidualStage::Order::ProjectFirst,
                                                  rng.child("encoder").child(i)));
    m.rx.decoders.push_back(ResidualStage::random(d, cfg.stage_hidden,
                                                  ResidualStage::Order::ResidualFirst,
                                                  rng.child("decoder").child(i)));
    m.tx.codebooks.emplace_back(cfg.codes, d);
  }
  m.rx.codebooks = m.tx.codebooks;
  return m;
}

KbModel KbModel::identity(const KbConfig& cfg) {
  KbModel m;
  m.config = cfg;
  m.tx.source =
      ResidualStage::identity(cfg.d_w, cfg.hidden, ResidualStage::Order::ProjectFirst);
  m.rx.reconstruct =
      ResidualStage::identity(cfg.d_w, cfg.hidden, ResidualStage::Order::ResidualFirst);
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    m.tx.encoders.push_back(
        ResidualStage::identity(cfg.d_w, cfg.stage_hidden, ResidualStage::Order::ProjectFirst));
    m.rx.decoders.push_back(
        ResidualStage::identity(cfg.d_w, cfg.stage_hidden, ResidualStage::Order::ResidualFirst));
    m.tx.codebooks.emplace_back(cfg.codes, cfg.d_w);
  }
  m.rx.codebooks = m.tx.codebooks;
  return m;
}

Vec64 KbEncoding::code_sum() const {
  require(!codes.empty(), "KbEncoding: no codes");
  Vec64 s(codes.front().size());
  for (const auto& c : codes) kernels::axpy(1.0, c.span(), s.span());
  return s;
}

KbGrads KbGrads::zeros_like(const KbModel& model) {
  KbGrads g;
  g.source = Vec64(model.tx.source.param_count());
  for (const auto& e : model.tx.encoders) g.encoders.emplace_back(e.param_count());
  for (const auto& c : model.tx.codebooks) g.codebooks.emplace_back(c.rows(), c.cols());
  for (const auto& d : model.rx.decoders) g.decoders.emplace_back(d.param_count());
  g.reconstruct = Vec64(model.rx.reconstruct.param_count());
  return g;
}

std::vector<std::span<double>> KbGrads::blocks() {
  std::vector<std::span<double>> out{source.span()};
  for (auto& e : encoders) out.push_back(e.span());
  for (auto& c : codebooks) out.push_back(c.flat());
  for (auto& d : decoders) out.push_back(d.span());
  out.push_back(reconstruct.span());
  return out;
}

bool KbGrads::all_zero() const {
  auto zero = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
  };
  if (!zero(source.span()) || !zero(reconstruct.span())) return false;
  for (const auto& e : encoders) {
    if (!zero(e.span())) return false;
  }
  for (const auto& c : codebooks) {
    if (!zero(c.flat())) return false;
  }
  for (const auto& d : decoders) {
    if (!zero(d.span())) return false;
  }
  return true;
}

KbBlocks kb_param_blocks(KbModel& model) {
  KbBlocks out;
  auto stage = [&out](ResidualStage& s) {
    out.networks.push_back(s.projection().params());
    out.networks.push_back(s.residual().params());
  };
  stage(model.tx.source);
  for (auto& e : model.tx.encoders) stage(e);
  for (auto& d : model.rx.decoders) stage(d);
  stage(model.rx.reconstruct);
  for (std::size_t i = 0; i < model.tx.codebooks.size(); ++i) {
    out.codebooks.push_back(model.tx.codebooks[i].flat());
    out.codebooks.push_back(model.rx.codebooks[i].flat());
  }
  return out;
}

KbBlocks kb_grad_blocks_for_update(KbGrads& grads) {
  KbBlocks out;
  // Projection blocks are square d x d plus bias.
  const std::size_t d = grads.codebooks.empty() ? 0 : grads.codebooks.front().cols();
  const std::size_t proj_count = d * d + d;
  auto stage = [&out, proj_count](Vec64& g) {
    out.networks.push_back(g.span().first(proj_count));
    out.networks.push_back(g.span().subspan(proj_count));
  };
  stage(grads.source);
  for (auto& e : grads.encoders) stage(e);
  for (auto& dg : grads.decoders) stage(dg);
  stage(grads.reconstruct);
  for (auto& c : grads.codebooks) {
    out.codebooks.push_back(c.flat());
    out.codebooks.push_back(c.flat());
  }
  return out;
}

// ---------------------------------------------------------------- inference

Vec64 kb_source(const TransmitterKb& tx, std::span<const double> w) { return tx.source.apply(w); }

NearestCode nearest_code(std::span<const double> z, const Mat64& codebook) {
  require(codebook.rows() > 0, "nearest_code: empty codebook");
  require(codebook.cols() == z.size(), "nearest_code: dimension mismatch");
  NearestCode best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t m = 0; m < codebook.rows(); ++m) {
    const double d = kernels::sq_dist(codebook.row(m), z);
    if (d < best.sq_distance) best = {static_cast<std::uint32_t>(m), d};
  }
  return best;
}

KbEncoding rvq_encode(const TransmitterKb& tx, std::span<const double> w) {
  require(!tx.encoders.empty(), "rvq_encode: no stages");
  require(tx.encoders.size() == tx.codebooks.size(), "rvq_encode: stage/codebook count mismatch");
  KbEncoding enc;
  enc.source = kb_source(tx, w);
  Vec64 z = enc.source;
  for (std::size_t i = 0; i < tx.encoders.size(); ++i) {
    enc.inputs.push_back(z);
    Vec64 ze = tx.encoders[i].apply(z.span());
    const NearestCode nc = nearest_code(ze.span(), tx.codebooks[i]);
    Vec64 code(tx.codebooks[i].row(nc.index));
    z = ze;
    kernels::axpy(-1.0, code.span(), z.span());
    enc.indices.push_back(nc.index);
    enc.codes.push_back(std::move(code));
    enc.pre_quant.push_back(std::move(ze));
  }
  enc.inputs.push_back(std::move(z));
  return enc;
}

Vec64 rvq_decode(const ReceiverKb& rx, std::span<const std::uint32_t> indices) {
  if (indices.size() != rx.codebooks.size()) {
    throw DecodeError("rvq_decode: expected " + std::to_string(rx.codebooks.size()) +
                      " indices, got " + std::to_string(indices.size()));
  }
  const std::size_t d = rx.reconstruct.dim();
  Vec64 sum(d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rx.codebooks[i].rows()) {
      throw DecodeError("rvq_decode: index " + std::to_string(indices[i]) + " out of range");
    }
    const Vec64 latent = rx.decoders[i].apply(rx.codebooks[i].row(indices[i]));
    kernels::axpy(1.0, latent.span(), sum.span());
  }
  return rx.reconstruct.apply(sum.span());
}

KbLoss kb_loss(std::span<const double> w, std::span<const double> w_rec, const KbEncoding& enc,
               const KbWeights& weights) {
  require(weights.recon >= 0.0 && weights.embed >= 0.0 && weights.commit >= 0.0,
          "kb_loss: weights must be non-negative");
  KbLoss loss;
  loss.recon = kernels::sq_dist(w, w_rec);
  for (std::size_t i = 0; i < enc.codes.size(); ++i) {
    // Both terms share a value; they differ only in where gradients flow.
    const double d = kernels::sq_dist(enc.pre_quant[i].span(), enc.codes[i].span());
    loss.embed += d;
    loss.commit += d;
  }
  loss.total = weights.recon * loss.recon + weights.embed * loss.embed +
               weights.commit * loss.commit;
  return loss;
}

KbLoss kb_loss_and_grad(const KbModel& model, std::span<const double> w,
                        const KbWeights& weights, KbGrads& grads, double scale,
                        KbEncoding* encoding_out) {
  const auto& tx = model.tx;
  const auto& rx = model.rx;
  const std::size_t n = tx.encoders.size();

  ResidualStage::Tape source_tape;
  std::vector<ResidualStage::Tape> enc_tapes(n), dec_tapes(n);
  ResidualStage::Tape recon_tape;

  KbEncoding enc;
  enc.source = tx.source.forward(w, source_tape);
  Vec64 z = enc.source;
  for (std::size_t i = 0; i < n; ++i) {
    enc.inputs.push_back(z);
    Vec64 ze = tx.encoders[i].forward(z.span(), enc_tapes[i]);
    const NearestCode nc = nearest_code(ze.span(), tx.codebooks[i]);
    Vec64 code(tx.codebooks[i].row(nc.index));
    z = ze;
    kernels::axpy(-1.0, code.span(), z.span());
    enc.indices.push_back(nc.index);
    enc.codes.push_back(std::move(code));
    enc.pre_quant.push_back(std::move(ze));
  }
  enc.inputs.push_back(z);

  Vec64 sum(model.config.d_w);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec64 latent = rx.decoders[i].forward(rx.codebooks[i].row(enc.indices[i]), dec_tapes[i]);
    kernels::axpy(1.0, latent.span(), sum.span());
  }
  const Vec64 w_rec = rx.reconstruct.forward(sum.span(), recon_tape);
  const KbLoss loss = kb_loss(w, w_rec.span(), enc, weights);

  // Backward.
  Vec64 g_rec(w_rec.size());
  for (std::size_t k = 0; k < w_rec.size(); ++k) {
    g_rec[k] = scale * weights.recon * 2.0 * (w_rec[k] - w[k]);
  }
  const Vec64 g_sum = rx.reconstruct.backward(recon_tape, g_rec.span(), grads.reconstruct.span());

  std::vector<Vec64> g_quant(n);
  for (std::size_t i = 0; i < n; ++i) {
    g_quant[i] = rx.decoders[i].backward(dec_tapes[i], g_sum.span(), grads.decoders[i].span());
    auto g_code = grads.codebooks[i].row(enc.indices[i]);
    for (std::size_t k = 0; k < g_code.size(); ++k) {
      g_code[k] += scale * weights.embed * 2.0 * (enc.codes[i][k] - enc.pre_quant[i][k]);
    }
  }

  Vec64 g_next(model.config.d_w);
  for (std::size_t i = n; i-- > 0;) {
    // Straight-through: the decoder-input gradient lands on z_i^e.
    Vec64 g_ze = g_quant[i];
    kernels::axpy(1.0, g_next.span(), g_ze.span());
    for (std::size_t k = 0; k < g_ze.size(); ++k) {
      g_ze[k] += scale * weights.commit * 2.0 * (enc.pre_quant[i][k] - enc.codes[i][k]);
    }
    g_next = tx.encoders[i].backward(enc_tapes[i], g_ze.span(), grads.encoders[i].span());
  }
  tx.source.backward(source_tape, g_next.span(), grads.source.span());

  if (encoding_out != nullptr) *encoding_out = std::move(enc);
  return loss;
}

// ---------------------------------------------------------------- seeding

namespace {

void kmeans_pp(Mat64& codebook, const std::vector<Vec64>& points, SeededRng& rng) {
  const std::size_t m_codes = codebook.rows();
  std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(points.size());
  for (std::size_t m = 0; m < m_codes; ++m) {
    std::copy(points[pick].begin(), points[pick].end(), codebook.row(m).begin());
    double total = 0.0;
    for (std::size_t p = 0; p < points.size(); ++p) {
      d2[p] = std::min(d2[p], kernels::sq_dist(points[p].span(), codebook.row(m)));
      total += d2[p];
    }
    if (total <= 0.0) {
      pick = rng.below(points.size());
      continue;
    }
    double target = rng.uniform() * total;
    pick = points.size() - 1;
    for (std::size_t p = 0; p < points.size(); ++p) {
      target -= d2[p];
      if (target < 0.0) {
        pick = p;
        break;
      }
    }
  }
}

}  // namespace

void seed_codebooks(KbModel& model, std::span<const Vec64> samples, SeededRng rng) {
  require(!samples.empty(), "seed_codebooks: no samples");
  std::vector<Vec64> z;
  z.reserve(samples.size());
  for (const auto& w : samples) z.push_back(kb_source(model.tx, w.span()));
  for (std::size_t i = 0; i < model.tx.encoders.size(); ++i) {
    std::vector<Vec64> ze;
    ze.reserve(z.size());
    for (const auto& zi : z) ze.push_back(model.tx.encoders[i].apply(zi.span()));
    SeededRng stage_rng = rng.child(i);
    kmeans_pp(model.tx.codebooks[i], ze, stage_rng);
    model.rx.codebooks[i] = model.tx.codebooks[i];
    for (std::size_t p = 0; p < z.size(); ++p) {
      const NearestCode nc = nearest_code(ze[p].span(), model.tx.codebooks[i]);
      z[p] = ze[p];
      kernels::axpy(-1.0, model.tx.codebooks[i].row(nc.index), z[p].span());
    }
  }
}

// ---------------------------------------------------------------- files

void write_kb(ByteWriter& out, const KbModel& model) {
  const KbConfig& c = model.config;
  out.magic("SCKB");
  out.u16(kKbVersion);
  out.u32(static_cast<std::uint32_t>(c.stages));
  out.u32(static_cast<std::uint32_t>(c.codes));
  out.u32(static_cast<std::uint32_t>(c.d_w));
  for (const auto& cb : model.tx.codebooks) out.f64s(cb.flat());
  out.u32(static_cast<std::uint32_t>(c.hidden));
  out.u32(static_cast<std::uint32_t>(c.stage_hidden));
  write_mlp(out, model.tx.source.projection());
  write_mlp(out, model.tx.source.residual());
  for (const auto& e : model.tx.encoders) {
    write_mlp(out, e.projection());
    write_mlp(out, e.residual());
  }
  for (const auto& d : model.rx.decoders) {
    write_mlp(out, d.projection());
    write_mlp(out, d.residual());
  }
  write_mlp(out, model.rx.reconstruct.projection());
  write_mlp(out, model.rx.reconstruct.residual());
}

namespace {

ResidualStage read_stage(ByteReader& in, ResidualStage::Order order) {
  Mlp proj = read_mlp(in);
  Mlp res = read_mlp(in);
  try {
    return ResidualStage(std::move(proj), std::move(res), order);
  } catch (const ContractError& e) {
    throw FormatError(std::string("knowledge-base stage: ") + e.what());
  }
}

}  // namespace

KbModel read_kb(ByteReader& in) {
  in.expect_magic("SCKB");
  if (in.u16() != kKbVersion) throw FormatError("unsupported knowledge-base version");
  KbModel m;
  m.config.stages = in.u32();
  m.config.codes = in.u32();
  m.config.d_w = in.u32();
  if (m.config.stages == 0 || m.config.stages > 64 || m.config.codes == 0 ||
      m.config.codes > (1u << 16) || m.config.d_w == 0 || m.config.d_w > 4096) {
    throw FormatError("implausible knowledge-base dimensions");
  }
  for (std::size_t i = 0; i < m.config.stages; ++i) {
    Mat64 cb(m.config.codes, m.config.d_w);
    in.f64s(cb.flat());
    m.tx.codebooks.push_back(std::move(cb));
  }
  // Both sides are built from the same bytes.
  m.rx.codebooks = m.tx.codebooks;
  m.config.hidden = in.u32();
  m.config.stage_hidden = in.u32();
  m.tx.source = read_stage(in, ResidualStage::Order::ProjectFirst);
  for (std::size_t i = 0; i < m.config.stages; ++i) {
    m.tx.encoders.push_back(read_stage(in, ResidualStage::Order::ProjectFirst));
  }
  for (std::size_t i = 0; i < m.config.stages; ++i) {
    m.rx.decoders.push_back(read_stage(in, ResidualStage::Order::ResidualFirst));
  }
  m.rx.reconstruct = read_stage(in, ResidualStage::Order::ResidualFirst);
  if (m.tx.source.dim() != m.config.d_w || m.rx.reconstruct.dim() != m.config.d_w) {
    throw FormatError("knowledge-base network dimensions disagree with header");
  }
  return m;
}

void save_kb(const KbModel& model, const std::filesystem::path& path) {
  ByteWriter out;
  write_kb(out, model);
  out.save(path);
}

KbModel load_kb(const std::filesystem::path& path) {
  ByteReader in = ByteReader::load(path);
  KbModel m = read_kb(in);
  in.expect_end();
  return m;
}

}  // namespace sctts

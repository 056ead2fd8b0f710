#include "retro/encoder.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace retro {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void layer_norm(const DenseMatrix& x, std::span<const double> gain, std::span<const double> bias, double eps,
                DenseMatrix& out, Vector& mean, Vector& rstd) {
  const std::size_t t = x.rows(), d = x.cols();
  out = DenseMatrix(t, d);
  mean.assign(t, 0.0);
  rstd.assign(t, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    const auto row = x.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = (row[c] - mu) * rs * gain[c] + bias[c];
  }
}

// dx += layer-norm backward of dy; gain/bias gradients accumulated.
void layer_norm_backward(const DenseMatrix& x, const Vector& mean, const Vector& rstd, std::span<const double> gain,
                         const DenseMatrix& dy, DenseMatrix& dx, double* dgain, double* dbias) {
  const std::size_t t = x.rows(), d = x.cols();
  Vector xhat(d), dxhat(d);
  for (std::size_t r = 0; r < t; ++r) {
    const auto xr = x.row(r);
    const auto dyr = dy.row(r);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      xhat[c] = (xr[c] - mean[r]) * rstd[r];
      dxhat[c] = dyr[c] * gain[c];
      dgain[c] += dyr[c] * xhat[c];
      dbias[c] += dyr[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xhat[c];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    auto dxr = dx.row(r);
    for (std::size_t c = 0; c < d; ++c) dxr[c] += rstd[r] * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
  }
}

void add_bias(DenseMatrix& m, std::span<const double> bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias[c];
  }
}

void accumulate_colsum(const DenseMatrix& m, double* out) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c];
  }
}

DenseMatrix linear(const DenseMatrix& x, ConstMatrixView w, std::span<const double> b) {
  DenseMatrix y(x.rows(), w.cols);
  gemm_nn(x.view(), w, y.view(), false);
  add_bias(y, b);
  return y;
}

void check_finite(const DenseMatrix& m, const char* what) {
  if (!all_finite(m.data())) throw NumericError(std::string("forward: non-finite activation in ") + what);
}

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

}  // namespace

ParamLayout ParamLayout::make(const EncoderConfig& cfg) {
  if (cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw std::invalid_argument("encoder: dim must be a positive multiple of heads");
  }
  if (cfg.max_len_extended < cfg.max_len) throw std::invalid_argument("encoder: max_len_extended < max_len");
  ParamLayout l;
  std::size_t at = 0;
  auto take = [&](std::size_t n) {
    const std::size_t o = at;
    at += n;
    return o;
  };
  const std::size_t d = cfg.dim, f = cfg.mlp_dim;
  l.embedding = take(cfg.vocab_size * d);
  l.positional = take(cfg.max_len_extended * d);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    LayerOffsets o{};
    o.begin = at;
    o.ln1_gain = take(d);
    o.ln1_bias = take(d);
    o.wq = take(d * d);
    o.bq = take(d);
    o.wk = take(d * d);
    o.bk = take(d);
    o.wv = take(d * d);
    o.bv = take(d);
    o.wo = take(d * d);
    o.bo = take(d);
    o.ln2_gain = take(d);
    o.ln2_bias = take(d);
    o.w1 = take(d * f);
    o.b1 = take(f);
    o.w2 = take(f * d);
    o.b2 = take(d);
    o.end = at;
    l.layers.push_back(o);
  }
  l.final_gain = take(d);
  l.final_bias = take(d);
  l.total = at;
  return l;
}

EncoderParams::EncoderParams(const EncoderConfig& cfg)
    : config_(cfg), layout_(ParamLayout::make(cfg)), values_(layout_.total, 0.0) {}

EncoderParams EncoderParams::initialized(const EncoderConfig& cfg, std::uint64_t seed) {
  EncoderParams p(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, cfg.init_std);
  auto fill_normal = [&](std::size_t offset, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p.values_[offset + i] = normal(rng);
  };
  auto fill_const = [&](std::size_t offset, std::size_t n, double v) {
    std::fill_n(p.values_.begin() + static_cast<std::ptrdiff_t>(offset), n, v);
  };
  const std::size_t d = cfg.dim, f = cfg.mlp_dim;
  fill_normal(p.layout_.embedding, cfg.vocab_size * d);
  fill_normal(p.layout_.positional, cfg.max_len_extended * d);
  for (const auto& o : p.layout_.layers) {
    fill_const(o.ln1_gain, d, 1.0);
    fill_const(o.ln2_gain, d, 1.0);
    fill_normal(o.wq, d * d);
    fill_normal(o.wk, d * d);
    fill_normal(o.wv, d * d);
    fill_normal(o.wo, d * d);
    fill_normal(o.w1, d * f);
    fill_normal(o.w2, f * d);
  }
  fill_const(p.layout_.final_gain, d, 1.0);
  return p;
}

std::uint64_t EncoderParams::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values_.data());
  for (std::size_t i = 0; i < values_.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

void EncoderParams::save(const std::filesystem::path& path) const {
  std::ostringstream buf;
  buf.write("RPEP", 4);
  write_u64(buf, 1);
  for (std::size_t v : {config_.vocab_size, config_.dim, config_.heads, config_.layers, config_.mlp_dim,
                        config_.max_len, config_.max_len_extended}) {
    write_u64(buf, v);
  }
  write_f64(buf, config_.init_std);
  write_f64(buf, config_.ln_eps);
  write_u64(buf, values_.size());
  buf.write(reinterpret_cast<const char*>(values_.data()), static_cast<std::streamsize>(values_.size() * sizeof(double)));
  std::string bytes = buf.str();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write parameter file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
}

EncoderParams EncoderParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read parameter file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 || bytes.compare(0, 4, "RPEP") != 0) throw FormatError(path.string() + ": not a parameter file");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
  if (crc != stored_crc) throw FormatError(path.string() + ": checksum mismatch");
  std::size_t at = 4;
  auto read_u64 = [&] {
    if (at + 8 > bytes.size() - 4) throw FormatError(path.string() + ": truncated");
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + at, 8);
    at += 8;
    return v;
  };
  auto read_f64 = [&] {
    const std::uint64_t raw = read_u64();
    double v;
    std::memcpy(&v, &raw, 8);
    return v;
  };
  if (read_u64() != 1) throw FormatError(path.string() + ": unsupported version");
  EncoderConfig cfg;
  cfg.vocab_size = read_u64();
  cfg.dim = read_u64();
  cfg.heads = read_u64();
  cfg.layers = read_u64();
  cfg.mlp_dim = read_u64();
  cfg.max_len = read_u64();
  cfg.max_len_extended = read_u64();
  cfg.init_std = read_f64();
  cfg.ln_eps = read_f64();
  EncoderParams p(cfg);
  const std::uint64_t n = read_u64();
  if (n != p.values_.size() || at + n * 8 != bytes.size() - 4) throw FormatError(path.string() + ": size mismatch");
  std::memcpy(p.values_.data(), bytes.data() + at, n * 8);
  return p;
}

EmbeddedInput embed(std::span<const TokenId> ids, std::size_t mask_position, const EncoderParams& params) {
  const auto& cfg = params.config();
  if (ids.size() > cfg.max_len) {
    throw std::invalid_argument("embed: sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
  }
  if (!ids.empty() && mask_position >= ids.size()) throw std::invalid_argument("embed: mask position out of range");
  EmbeddedInput out;
  out.rows = DenseMatrix(ids.size(), cfg.dim);
  out.mask_position = mask_position;
  const auto emb = params.embedding();
  const auto pos = params.positional();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= cfg.vocab_size) {
      throw std::out_of_range("embed: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                              std::to_string(cfg.vocab_size));
    }
    auto row = out.rows.row(i);
    const auto e = emb.row(ids[i]);
    const auto p = pos.row(i);
    for (std::size_t c = 0; c < cfg.dim; ++c) row[c] = e[c] + p[c];
    out.positions.push_back(i);
    out.row_tokens.push_back(static_cast<std::int64_t>(ids[i]));
  }
  return out;
}

EncodeOutput forward(const EmbeddedInput& input, const EncoderParams& params, ForwardCache* cache) {
  const auto& cfg = params.config();
  const std::size_t t = input.length(), d = cfg.dim, f = cfg.mlp_dim;
  const std::size_t heads = cfg.heads, dh = d / heads;
  if (t == 0) throw std::invalid_argument("forward: empty input");
  check_same_dim(input.rows.cols(), d, "forward input width");
  if (input.mask_position >= t) throw std::invalid_argument("forward: mask position out of range");
  if (input.positions.size() != t || input.row_tokens.size() != t) throw std::invalid_argument("forward: malformed input");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  DenseMatrix x = input.rows;
  std::vector<LayerCache> layers;
  layers.reserve(cfg.layers);
  for (const auto& o : params.layout().layers) {
    LayerCache lc;
    lc.input = x;
    layer_norm(x, params.vec(o.ln1_gain, d), params.vec(o.ln1_bias, d), cfg.ln_eps, lc.ln1_out, lc.ln1_mean,
               lc.ln1_rstd);
    lc.q = linear(lc.ln1_out, params.matrix(o.wq, d, d), params.vec(o.bq, d));
    lc.k = linear(lc.ln1_out, params.matrix(o.wk, d, d), params.vec(o.bk, d));
    lc.v = linear(lc.ln1_out, params.matrix(o.wv, d, d), params.vec(o.bv, d));
    lc.attn_out = DenseMatrix(t, d);
    lc.attn.assign(heads, DenseMatrix(t, t));
    Vector scores(t);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      auto& p = lc.attn[h];
      for (std::size_t i = 0; i < t; ++i) {
        const double* qi = &lc.q(i, c0);
        for (std::size_t j = 0; j < t; ++j) {
          const double* kj = &lc.k(j, c0);
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * scale;
        }
        const Vector probs = stable_softmax(scores);
        double* oi = &lc.attn_out(i, c0);
        for (std::size_t j = 0; j < t; ++j) {
          p(i, j) = probs[j];
          const double* vj = &lc.v(j, c0);
          for (std::size_t c = 0; c < dh; ++c) oi[c] += probs[j] * vj[c];
        }
      }
    }
    const DenseMatrix proj = linear(lc.attn_out, params.matrix(o.wo, d, d), params.vec(o.bo, d));
    axpy(1.0, proj.data(), x.data());
    lc.mid = x;
    layer_norm(x, params.vec(o.ln2_gain, d), params.vec(o.ln2_bias, d), cfg.ln_eps, lc.ln2_out, lc.ln2_mean,
               lc.ln2_rstd);
    lc.mlp_pre = linear(lc.ln2_out, params.matrix(o.w1, d, f), params.vec(o.b1, f));
    lc.mlp_act = DenseMatrix(t, f);
    for (std::size_t i = 0; i < lc.mlp_pre.data().size(); ++i) lc.mlp_act.data()[i] = gelu(lc.mlp_pre.data()[i]);
    const DenseMatrix mlp_out = linear(lc.mlp_act, params.matrix(o.w2, f, d), params.vec(o.b2, d));
    axpy(1.0, mlp_out.data(), x.data());
    check_finite(x, "encoder layer");
    if (cache) layers.push_back(std::move(lc));
  }

  EncodeOutput out;
  Vector fmean, frstd;
  layer_norm(x, params.vec(params.layout().final_gain, d), params.vec(params.layout().final_bias, d), cfg.ln_eps,
             out.hidden_states, fmean, frstd);
  check_finite(out.hidden_states, "final layer norm");
  const auto mh = out.hidden_states.row(input.mask_position);
  out.mask_hidden.assign(mh.begin(), mh.end());
  out.vocab_logits = matvec(params.embedding(), out.mask_hidden);
  if (!all_finite(out.vocab_logits)) throw NumericError("forward: non-finite vocabulary logits");

  if (cache) {
    cache->valid = true;
    cache->mask_position = input.mask_position;
    cache->positions = input.positions;
    cache->row_tokens = input.row_tokens;
    cache->layers = std::move(layers);
    cache->final_input = std::move(x);
    cache->final_mean = std::move(fmean);
    cache->final_rstd = std::move(frstd);
    cache->hidden = out.hidden_states;
  }
  return out;
}

void backward(std::span<const double> dlogits, const DenseMatrix* dhidden, const ForwardCache& cache,
              const EncoderParams& params, std::span<double> grad, DenseMatrix* input_grad) {
  if (!cache.valid) throw std::logic_error("backward: forward was not run with an activation cache");
  const auto& cfg = params.config();
  const auto& layout = params.layout();
  check_same_dim(grad.size(), params.size(), "backward gradient buffer");
  const std::size_t t = cache.hidden.rows(), d = cfg.dim, f = cfg.mlp_dim;
  const std::size_t heads = cfg.heads, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double* g = grad.data();

  DenseMatrix dh_final(t, d);
  if (dhidden) {
    if (dhidden->rows() != t || dhidden->cols() != d) throw DimensionError("backward: dhidden shape mismatch");
    dh_final = *dhidden;
  }
  if (!dlogits.empty()) {
    check_same_dim(dlogits.size(), cfg.vocab_size, "backward logits");
    const auto emb = params.embedding();
    const auto mh = cache.hidden.row(cache.mask_position);
    auto dmask = dh_final.row(cache.mask_position);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      const double gv = dlogits[v];
      if (gv == 0.0) continue;
      double* ge = g + layout.embedding + v * d;
      const auto ev = emb.row(v);
      for (std::size_t c = 0; c < d; ++c) {
        ge[c] += gv * mh[c];
        dmask[c] += gv * ev[c];
      }
    }
  }

  DenseMatrix dx(t, d);
  layer_norm_backward(cache.final_input, cache.final_mean, cache.final_rstd, params.vec(layout.final_gain, d),
                      dh_final, dx, g + layout.final_gain, g + layout.final_bias);

  for (std::size_t li = layout.layers.size(); li-- > 0;) {
    const auto& o = layout.layers[li];
    const auto& lc = cache.layers[li];

    // MLP block: out = mid + W2 gelu(W1 ln2(mid) + b1) + b2
    accumulate_colsum(dx, g + o.b2);
    gemm_tn(lc.mlp_act.view(), dx.view(), MatrixView{g + o.w2, f, d}, true);
    DenseMatrix dact(t, f);
    gemm_nt(dx.view(), params.matrix(o.w2, f, d), dact.view(), false);
    for (std::size_t i = 0; i < dact.data().size(); ++i) dact.data()[i] *= gelu_grad(lc.mlp_pre.data()[i]);
    accumulate_colsum(dact, g + o.b1);
    gemm_tn(lc.ln2_out.view(), dact.view(), MatrixView{g + o.w1, d, f}, true);
    DenseMatrix dln2(t, d);
    gemm_nt(dact.view(), params.matrix(o.w1, d, f), dln2.view(), false);
    DenseMatrix dmid = dx;
    layer_norm_backward(lc.mid, lc.ln2_mean, lc.ln2_rstd, params.vec(o.ln2_gain, d), dln2, dmid, g + o.ln2_gain,
                        g + o.ln2_bias);

    // Attention block: mid = input + Wo attn(ln1(input)) + bo
    accumulate_colsum(dmid, g + o.bo);
    gemm_tn(lc.attn_out.view(), dmid.view(), MatrixView{g + o.wo, d, d}, true);
    DenseMatrix dattn(t, d);
    gemm_nt(dmid.view(), params.matrix(o.wo, d, d), dattn.view(), false);

    DenseMatrix dq(t, d), dk(t, d), dv(t, d);
    Vector dp(t);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      const auto& p = lc.attn[h];
      for (std::size_t i = 0; i < t; ++i) {
        const double* doi = &dattn(i, c0);
        double rowdot = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          const double* vj = &lc.v(j, c0);
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
          dp[j] = s;
          rowdot += s * p(i, j);
          double* dvj = &dv(j, c0);
          for (std::size_t c = 0; c < dh; ++c) dvj[c] += p(i, j) * doi[c];
        }
        double* dqi = &dq(i, c0);
        const double* qi = &lc.q(i, c0);
        for (std::size_t j = 0; j < t; ++j) {
          const double ds = p(i, j) * (dp[j] - rowdot) * scale;
          if (ds == 0.0) continue;
          const double* kj = &lc.k(j, c0);
          double* dkj = &dk(j, c0);
          for (std::size_t c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
    DenseMatrix dln1(t, d);
    const std::pair<const DenseMatrix*, std::pair<std::size_t, std::size_t>> projections[] = {
        {&dq, {o.wq, o.bq}}, {&dk, {o.wk, o.bk}}, {&dv, {o.wv, o.bv}}};
    for (const auto& [dproj, off] : projections) {
      accumulate_colsum(*dproj, g + off.second);
      gemm_tn(lc.ln1_out.view(), dproj->view(), MatrixView{g + off.first, d, d}, true);
      gemm_nt(dproj->view(), params.matrix(off.first, d, d), dln1.view(), true);
    }
    dx = dmid;
    layer_norm_backward(lc.input, lc.ln1_mean, lc.ln1_rstd, params.vec(o.ln1_gain, d), dln1, dx, g + o.ln1_gain,
                        g + o.ln1_bias);
  }

  for (std::size_t r = 0; r < t; ++r) {
    const auto dr = dx.row(r);
    double* gp = g + layout.positional + cache.positions[r] * d;
    for (std::size_t c = 0; c < d; ++c) gp[c] += dr[c];
    if (cache.row_tokens[r] != kExternalRow) {
      double* ge = g + layout.embedding + static_cast<std::size_t>(cache.row_tokens[r]) * d;
      for (std::size_t c = 0; c < d; ++c) ge[c] += dr[c];
    }
  }
  if (input_grad) *input_grad = std::move(dx);
}

Vector class_probs(std::span<const double> vocab_logits, const Verbalizer& verbalizer) {
  Vector label_logits;
  label_logits.reserve(verbalizer.num_classes());
  for (TokenId w : verbalizer.words()) {
    if (w >= vocab_logits.size()) throw DimensionError("class_probs: label word outside logits");
    label_logits.push_back(vocab_logits[w]);
  }
  return stable_softmax(label_logits);
}

std::size_t DemoSlots::active() const {
  std::size_t n = 0;
  for (const auto& s : slots) n += s.empty ? 0 : 1;
  return n;
}

EmbeddedInput concat_demonstrations(const EmbeddedInput& input, const DemoSlots& slots, const EncoderParams& params) {
  const auto& cfg = params.config();
  const std::size_t extra = 2 * slots.active();
  if (extra == 0) return input;
  const std::size_t t = input.length(), d = cfg.dim;
  if (t + extra > cfg.max_len_extended) {
    throw std::invalid_argument("concat_demonstrations: " + std::to_string(t + extra) +
                                " rows exceed the extended cap " + std::to_string(cfg.max_len_extended));
  }
  EmbeddedInput out;
  out.rows = DenseMatrix(t + extra, d);
  std::copy(input.rows.data().begin(), input.rows.data().end(), out.rows.data().begin());
  out.mask_position = input.mask_position;
  out.positions = input.positions;
  out.row_tokens = input.row_tokens;
  std::size_t next_pos = input.positions.empty() ? 0 : input.positions.back() + 1;
  std::size_t r = t;
  const auto emb = params.embedding();
  const auto pos = params.positional();
  for (const auto& slot : slots.slots) {
    if (slot.empty) continue;
    check_same_dim(slot.aggregated.size(), d, "concat_demonstrations slot");
    if (slot.label_word >= cfg.vocab_size) throw std::out_of_range("concat_demonstrations: label word outside vocabulary");
    auto agg_row = out.rows.row(r);
    for (std::size_t c = 0; c < d; ++c) agg_row[c] = slot.aggregated[c] + pos(next_pos, c);
    out.positions.push_back(next_pos++);
    out.row_tokens.push_back(kExternalRow);
    ++r;
    auto word_row = out.rows.row(r);
    for (std::size_t c = 0; c < d; ++c) word_row[c] = emb(slot.label_word, c) + pos(next_pos, c);
    out.positions.push_back(next_pos++);
    out.row_tokens.push_back(static_cast<std::int64_t>(slot.label_word));
    ++r;
  }
  return out;
}

WrappedInput Prompting::wrap(const Example& ex) const {
  std::vector<std::vector<TokenId>> inputs;
  inputs.reserve(ex.texts.size());
  for (const auto& text : ex.texts) inputs.push_back(tokenize(text, vocab));
  return apply_template(tmpl, inputs, vocab, max_len);
}

}  // namespace retro

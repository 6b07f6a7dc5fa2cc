#include "tjplan/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tjplan/errors.hpp"

namespace tjplan::nn {

namespace {

using Pad = std::vector<std::uint8_t>;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void xavier(MatrixXd& w, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = a * (2.0 * uniform01(rng) - 1.0);
}

void add_bias(MatrixXd& m, const MatrixXd& b) { m.rowwise() += b.row(0); }

void check_finite(const MatrixXd& m, const std::string& where) {
  if (!m.allFinite()) throw NumericalBreakdown("non-finite activation in " + where);
}

// ----- attention ------------------------------------------------------------

struct AttnCache {
  MatrixXd xq, xkv, q, k, v, concat;
  std::vector<MatrixXd> probs;
};

MatrixXd attention_forward(const Attention& a, const MatrixXd& xq, const MatrixXd& xkv, const Pad& pad,
                           int heads, AttnCache* c) {
  const Eigen::Index D = a.wq.rows();
  const Eigen::Index dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MatrixXd q = xq * a.wq;
  add_bias(q, a.bq);
  MatrixXd k = xkv * a.wk;
  add_bias(k, a.bk);
  MatrixXd v = xkv * a.wv;
  add_bias(v, a.bv);
  // Zeroed padding rows keep padding values out of every real output bit.
  std::vector<Eigen::Index> visible;
  for (Eigen::Index j = 0; j < xkv.rows(); ++j) {
    if (pad[static_cast<std::size_t>(j)]) {
      v.row(j).setZero();
    } else {
      visible.push_back(j);
    }
  }
  MatrixXd concat = MatrixXd::Zero(xq.rows(), D);
  if (c) c->probs.assign(static_cast<std::size_t>(heads), MatrixXd());
  for (int h = 0; h < heads; ++h) {
    const MatrixXd s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    MatrixXd p = MatrixXd::Zero(s.rows(), s.cols());
    if (!visible.empty()) {
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        double m = s(i, visible.front());
        for (auto j : visible) m = std::max(m, s(i, j));
        double sum = 0.0;
        for (auto j : visible) {
          p(i, j) = std::exp(s(i, j) - m);
          sum += p(i, j);
        }
        for (auto j : visible) p(i, j) /= sum;
      }
    }
    concat.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
    if (c) c->probs[static_cast<std::size_t>(h)] = std::move(p);
  }
  MatrixXd out = concat * a.wo;
  add_bias(out, a.bo);
  if (c) {
    c->xq = xq;
    c->xkv = xkv;
    c->q = std::move(q);
    c->k = std::move(k);
    c->v = std::move(v);
    c->concat = std::move(concat);
  }
  return out;
}

/// Accumulates input gradients into dxq and dxkv.
void attention_backward(const Attention& a, const AttnCache& c, const MatrixXd& dy, int heads,
                        Attention& g, MatrixXd& dxq, MatrixXd& dxkv) {
  const Eigen::Index D = a.wq.rows();
  const Eigen::Index dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  g.wo.noalias() += c.concat.transpose() * dy;
  g.bo += dy.colwise().sum();
  const MatrixXd dconcat = dy * a.wo.transpose();
  MatrixXd dq(c.q.rows(), D), dk(c.k.rows(), D), dv(c.v.rows(), D);
  for (int h = 0; h < heads; ++h) {
    const MatrixXd& p = c.probs[static_cast<std::size_t>(h)];
    const auto dch = dconcat.middleCols(h * dh, dh);
    const MatrixXd dp = dch * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dch;
    const Eigen::VectorXd row = (dp.cwiseProduct(p)).rowwise().sum();
    const MatrixXd ds = p.cwiseProduct(dp.colwise() - row) * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  // Padding columns of p are exactly zero, so padding rows of dv are too.
  g.wq.noalias() += c.xq.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk.noalias() += c.xkv.transpose() * dk;
  g.bk += dk.colwise().sum();
  g.wv.noalias() += c.xkv.transpose() * dv;
  g.bv += dv.colwise().sum();
  dxq.noalias() += dq * a.wq.transpose();
  dxkv.noalias() += dk * a.wk.transpose();
  dxkv.noalias() += dv * a.wv.transpose();
}

// ----- layer norm -----------------------------------------------------------

struct NormCache {
  MatrixXd xhat;
  Eigen::VectorXd rstd;
};

MatrixXd norm_forward(const MatrixXd& x, const Norm& n, NormCache* c) {
  const double d = static_cast<double>(x.cols());
  MatrixXd xhat(x.rows(), x.cols());
  Eigen::VectorXd rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / d;
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kNormEpsilon);
    xhat.row(i) = centered * rstd(i);
  }
  MatrixXd y = xhat.array().rowwise() * n.gain.row(0).array();
  add_bias(y, n.bias);
  if (c) {
    c->xhat = std::move(xhat);
    c->rstd = std::move(rstd);
  }
  return y;
}

MatrixXd norm_backward(const Norm& n, const NormCache& c, const MatrixXd& dy, Norm& g) {
  g.gain += dy.cwiseProduct(c.xhat).colwise().sum();
  g.bias += dy.colwise().sum();
  const MatrixXd dxhat = dy.array().rowwise() * n.gain.row(0).array();
  const double d = static_cast<double>(dy.cols());
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() / d;
    const double m2 = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

// ----- feed-forward ---------------------------------------------------------

struct FfnCache {
  MatrixXd x, pre;
};

template <class Net>
MatrixXd ffn_forward(const Net& f, const MatrixXd& x, FfnCache* c) {
  MatrixXd pre = x * f.w1;
  add_bias(pre, f.b1);
  MatrixXd y = pre.cwiseMax(0.0) * f.w2;
  add_bias(y, f.b2);
  if (c) {
    c->x = x;
    c->pre = std::move(pre);
  }
  return y;
}

template <class Net>
MatrixXd ffn_backward(const Net& f, const FfnCache& c, const MatrixXd& dy, Net& g) {
  const MatrixXd h = c.pre.cwiseMax(0.0);
  g.w2.noalias() += h.transpose() * dy;
  g.b2 += dy.colwise().sum();
  MatrixXd dpre = dy * f.w2.transpose();
  dpre = (c.pre.array() > 0.0).select(dpre, 0.0);
  g.w1.noalias() += c.x.transpose() * dpre;
  g.b1 += dpre.colwise().sum();
  return dpre * f.w1.transpose();
}

// ----- dropout --------------------------------------------------------------

/// Empty mask when off.
MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64* rng) {
  if (!rng || rate <= 0.0) return {};
  MatrixXd m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform01(*rng) < rate ? 0.0 : keep;
  return m;
}

void apply_mask(MatrixXd& x, const MatrixXd& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

MatrixXd masked(const MatrixXd& dy, const MatrixXd& mask) {
  if (mask.size() == 0) return dy;
  return dy.cwiseProduct(mask);
}

// ----- layers ---------------------------------------------------------------

struct ContextCache {
  AttnCache att;
  MatrixXd drop1, drop2;
  NormCache n1, n2;
  FfnCache ffn;
};

struct SourceCache {
  AttnCache self, cross;
  MatrixXd drop1, drop2, drop3;
  NormCache n1, n2, n3;
  FfnCache ffn;
};

MatrixXd context_layer(const ContextLayer& p, const MatrixXd& x, const Pad& pad, const ModelConfig& cfg,
                       std::mt19937_64* rng, ContextCache* c) {
  MatrixXd z = attention_forward(p.self, x, x, pad, cfg.heads, c ? &c->att : nullptr);
  const MatrixXd m1 = dropout_mask(z.rows(), z.cols(), cfg.dropout, rng);
  apply_mask(z, m1);
  const MatrixXd o = norm_forward(z + x, p.norm1, c ? &c->n1 : nullptr);
  MatrixXd f = ffn_forward(p.ffn, o, c ? &c->ffn : nullptr);
  const MatrixXd m2 = dropout_mask(f.rows(), f.cols(), cfg.dropout, rng);
  apply_mask(f, m2);
  MatrixXd out = norm_forward(f + o, p.norm2, c ? &c->n2 : nullptr);
  if (c) {
    c->drop1 = m1;
    c->drop2 = m2;
  }
  return out;
}

MatrixXd source_layer(const SourceLayer& p, const MatrixXd& x, const MatrixXd& memory, const Pad& src_pad,
                      const Pad& ctx_pad, const ModelConfig& cfg, std::mt19937_64* rng, SourceCache* c) {
  MatrixXd z = attention_forward(p.self, x, x, src_pad, cfg.heads, c ? &c->self : nullptr);
  const MatrixXd m1 = dropout_mask(z.rows(), z.cols(), cfg.dropout, rng);
  apply_mask(z, m1);
  const MatrixXd o1 = norm_forward(z + x, p.norm1, c ? &c->n1 : nullptr);
  MatrixXd g = attention_forward(p.cross, o1, memory, ctx_pad, cfg.heads, c ? &c->cross : nullptr);
  const MatrixXd m2 = dropout_mask(g.rows(), g.cols(), cfg.dropout, rng);
  apply_mask(g, m2);
  const MatrixXd o2 = norm_forward(g + o1, p.norm2, c ? &c->n2 : nullptr);
  MatrixXd f = ffn_forward(p.ffn, o2, c ? &c->ffn : nullptr);
  const MatrixXd m3 = dropout_mask(f.rows(), f.cols(), cfg.dropout, rng);
  apply_mask(f, m3);
  MatrixXd out = norm_forward(f + o2, p.norm3, c ? &c->n3 : nullptr);
  if (c) {
    c->drop1 = m1;
    c->drop2 = m2;
    c->drop3 = m3;
  }
  return out;
}

MatrixXd pool(const MatrixXd& s, const Pad& pad) {
  MatrixXd sum = MatrixXd::Zero(1, s.cols());
  int n = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (pad[static_cast<std::size_t>(i)]) continue;
    sum += s.row(i);
    ++n;
  }
  if (n == 0) throw ParameterError("output heads: no unmasked source position");
  return sum / static_cast<double>(n);
}

Head zero_head(int dim, int hidden, int out) {
  return {MatrixXd::Zero(dim, hidden), MatrixXd::Zero(1, hidden), MatrixXd::Zero(hidden, out),
          MatrixXd::Zero(1, out)};
}

Attention zero_attention(int dim) {
  const MatrixXd w = MatrixXd::Zero(dim, dim);
  const MatrixXd b = MatrixXd::Zero(1, dim);
  return {w, w, w, w, b, b, b, b};
}

Norm unit_norm(int dim) { return {MatrixXd::Ones(1, dim), MatrixXd::Zero(1, dim)}; }

}  // namespace

// ----- config and parameters -------------------------------------------------

void ModelConfig::validate() const {
  if (joints < 2) throw ParameterError("model needs at least two joints (one source, one context)");
  if (max_waypoints < 2) throw ParameterError("max_waypoints must be at least 2");
  if (dim < 1 || heads < 1 || dim % heads != 0) throw ParameterError("dim must be a positive multiple of heads");
  if (context_layers < 0 || source_layers < 0 || ffn_dim < 0) throw ParameterError("negative layer count");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must lie in [0, 1)");
}

MatrixXd sinusoidal_encoding(int length, int dim) {
  MatrixXd pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / dim);
      pe(pos, i) = i % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return pe;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  const int D = cfg.dim;
  const int F = cfg.hidden();
  p.embed_weight = MatrixXd::Zero(1, D);
  p.embed_bias = MatrixXd::Zero(1, D);
  p.pad_token = MatrixXd::Zero(1, D);
  p.positional = sinusoidal_encoding(cfg.seq_len(), D);
  const Ffn ffn{MatrixXd::Zero(D, F), MatrixXd::Zero(1, F), MatrixXd::Zero(F, D), MatrixXd::Zero(1, D)};
  p.context.assign(static_cast<std::size_t>(cfg.context_layers),
                   ContextLayer{zero_attention(D), unit_norm(D), ffn, unit_norm(D)});
  p.source.assign(static_cast<std::size_t>(cfg.source_layers),
                  SourceLayer{zero_attention(D), unit_norm(D), zero_attention(D), unit_norm(D), ffn, unit_norm(D)});
  p.coef_head = zero_head(D, F, cfg.coef_len());
  p.knot_head = zero_head(D, F, cfg.knot_len());
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = zeros(cfg);
  std::mt19937_64 rng(seed);
  p.for_each([&](const std::string& name, MatrixXd& t) {
    const bool weight = name.ends_with(".weight") || name.ends_with(".pad") || name.ends_with(".wq") ||
                        name.ends_with(".wk") || name.ends_with(".wv") || name.ends_with(".wo") ||
                        name.ends_with(".w1") || name.ends_with(".w2");
    if (weight) xavier(t, rng);
  });
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const MatrixXd& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const MatrixXd& t) { ok = ok && t.allFinite(); });
  return ok;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  z.for_each([](const std::string&, MatrixXd& t) { t.setZero(); });
  return z;
}

// ----- forward ---------------------------------------------------------------

EncodedInput embed_and_encode(const VectorXd& source, const MatrixXd& context, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  const auto I = static_cast<int>(source.size());
  if (I > cfg.max_waypoints)
    throw UnsupportedLength("path has " + std::to_string(I) + " waypoints, model supports at most " +
                            std::to_string(cfg.max_waypoints));
  if (I < 1) throw ParameterError("empty source sequence");
  if (context.rows() != cfg.joints - 1 || context.cols() != I)
    throw ParameterError("context must be (K-1) x I");
  if (!source.allFinite() || !context.allFinite()) throw ParameterError("non-finite joint values");
  const int L = cfg.seq_len();
  EncodedInput e;
  e.waypoints = I;
  e.src.resize(L, cfg.dim);
  e.ctx.resize(L, cfg.dim);
  e.src_pad.assign(static_cast<std::size_t>(L), 1);
  e.ctx_pad.assign(static_cast<std::size_t>(L), 1);
  for (int r = 0; r < L; ++r) {
    if (r < I) {
      e.src.row(r) = source(r) * params.embed_weight + params.embed_bias + params.positional.row(r);
      e.src_pad[static_cast<std::size_t>(r)] = 0;
    } else {
      e.src.row(r) = params.pad_token;
    }
  }
  const int real_ctx = (cfg.joints - 1) * I;
  for (int r = 0; r < L; ++r) {
    if (r < real_ctx) {
      e.ctx.row(r) = context(r / I, r % I) * params.embed_weight + params.embed_bias + params.positional.row(r);
      e.ctx_pad[static_cast<std::size_t>(r)] = 0;
    } else {
      e.ctx.row(r) = params.pad_token;
    }
  }
  return e;
}

MatrixXd multi_head_attention(const MatrixXd& queries, const MatrixXd& keys_values, const Pad& key_pad,
                              const Attention& a, int heads) {
  if (static_cast<Eigen::Index>(key_pad.size()) != keys_values.rows())
    throw ParameterError("attention mask length differs from key count");
  if (queries.cols() != a.wq.rows() || keys_values.cols() != a.wk.rows() || a.wq.rows() % heads != 0)
    throw ParameterError("attention shape mismatch");
  return attention_forward(a, queries, keys_values, key_pad, heads, nullptr);
}

MatrixXd layer_norm(const MatrixXd& x, const Norm& n) { return norm_forward(x, n, nullptr); }

MatrixXd context_encoder(const EncodedInput& in, const ModelParams& params) {
  MatrixXd c = in.ctx;
  for (const auto& layer : params.context) c = context_layer(layer, c, in.ctx_pad, params.config, nullptr, nullptr);
  return c;
}

MatrixXd source_encoder(const EncodedInput& in, const MatrixXd& memory, const ModelParams& params) {
  if (memory.rows() != in.src.rows() || memory.cols() != in.src.cols())
    throw ParameterError("context memory shape differs from the source");
  MatrixXd s = in.src;
  for (const auto& layer : params.source)
    s = source_layer(layer, s, memory, in.src_pad, in.ctx_pad, params.config, nullptr, nullptr);
  return s;
}

ModelOutput output_heads(const MatrixXd& s, const Pad& src_pad, const ModelParams& params) {
  const MatrixXd pooled = pool(s, src_pad);
  ModelOutput out;
  out.coefficients = ffn_forward(params.coef_head, pooled, nullptr).row(0).transpose();
  out.knots = ffn_forward(params.knot_head, pooled, nullptr).row(0).transpose();
  return out;
}

ModelOutput forward(const ModelParams& params, const EncodedInput& in) {
  const MatrixXd memory = context_encoder(in, params);
  return output_heads(source_encoder(in, memory, params), in.src_pad, params);
}

// ----- loss ------------------------------------------------------------------

double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

namespace {
void check_lengths(const ModelOutput& pred, const ModelOutput& target, int coef_len, int knot_len,
                   const LossWeights& w) {
  if (coef_len < 1 || knot_len < 1 || coef_len > pred.coefficients.size() || coef_len > target.coefficients.size() ||
      knot_len > pred.knots.size() || knot_len > target.knots.size())
    throw ParameterError("loss: valid length exceeds output length");
  if (!(w.coef >= 0.0) || !(w.knot >= 0.0)) throw ParameterError("loss weights must be non-negative");
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
}  // namespace

double composite_loss(const ModelOutput& pred, const ModelOutput& target, int coef_len, int knot_len,
                      const LossWeights& w) {
  check_lengths(pred, target, coef_len, knot_len, w);
  double lc = 0.0;
  for (int i = 0; i < coef_len; ++i) lc += smooth_l1(pred.coefficients(i) - target.coefficients(i));
  double lk = 0.0;
  for (int i = 0; i < knot_len; ++i) lk += std::abs(pred.knots(i) - target.knots(i));
  return w.coef * (lc / coef_len) + w.knot * (lk / knot_len);
}

ModelOutput composite_loss_gradient(const ModelOutput& pred, const ModelOutput& target, int coef_len,
                                    int knot_len, const LossWeights& w) {
  check_lengths(pred, target, coef_len, knot_len, w);
  ModelOutput g{VectorXd::Zero(pred.coefficients.size()), VectorXd::Zero(pred.knots.size())};
  for (int i = 0; i < coef_len; ++i) {
    const double x = pred.coefficients(i) - target.coefficients(i);
    g.coefficients(i) = w.coef * (std::abs(x) < 1.0 ? x : sign(x)) / coef_len;
  }
  for (int i = 0; i < knot_len; ++i) g.knots(i) = w.knot * sign(pred.knots(i) - target.knots(i)) / knot_len;
  return g;
}

// ----- tape ------------------------------------------------------------------

struct Tape::Impl {
  VectorXd source;
  MatrixXd context;
  EncodedInput in;
  std::vector<ContextCache> ctx;
  std::vector<SourceCache> src;
  MatrixXd memory;
  MatrixXd top;  // source encoder output
  MatrixXd pooled;
  FfnCache coef, knot;
};

Tape::Tape() : impl_(std::make_unique<Impl>()) {}
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

ModelOutput Tape::forward(const ModelParams& params, const VectorXd& source, const MatrixXd& context,
                          std::mt19937_64* rng) {
  Impl& t = *impl_;
  const ModelConfig& cfg = params.config;
  t.source = source;
  t.context = context;
  t.in = embed_and_encode(source, context, params);
  t.ctx.assign(params.context.size(), {});
  t.src.assign(params.source.size(), {});
  MatrixXd c = t.in.ctx;
  for (std::size_t l = 0; l < params.context.size(); ++l) {
    c = context_layer(params.context[l], c, t.in.ctx_pad, cfg, rng, &t.ctx[l]);
    check_finite(c, "context layer " + std::to_string(l));
  }
  t.memory = c;
  MatrixXd s = t.in.src;
  for (std::size_t l = 0; l < params.source.size(); ++l) {
    s = source_layer(params.source[l], s, t.memory, t.in.src_pad, t.in.ctx_pad, cfg, rng, &t.src[l]);
    check_finite(s, "source layer " + std::to_string(l));
  }
  t.top = s;
  t.pooled = pool(s, t.in.src_pad);
  ModelOutput out;
  out.coefficients = ffn_forward(params.coef_head, t.pooled, &t.coef).row(0).transpose();
  out.knots = ffn_forward(params.knot_head, t.pooled, &t.knot).row(0).transpose();
  if (!out.coefficients.allFinite() || !out.knots.allFinite())
    throw NumericalBreakdown("non-finite activation in output heads");
  return out;
}

void Tape::backward(const ModelParams& params, const ModelOutput& d_out, ModelParams& g) const {
  const Impl& t = *impl_;
  const int heads = params.config.heads;
  MatrixXd dpooled = ffn_backward(params.coef_head, t.coef, d_out.coefficients.transpose(), g.coef_head);
  dpooled += ffn_backward(params.knot_head, t.knot, d_out.knots.transpose(), g.knot_head);

  const int I = t.in.waypoints;
  MatrixXd ds = MatrixXd::Zero(t.top.rows(), t.top.cols());
  for (Eigen::Index i = 0; i < ds.rows(); ++i)
    if (!t.in.src_pad[static_cast<std::size_t>(i)]) ds.row(i) = dpooled / static_cast<double>(I);

  MatrixXd dmemory = MatrixXd::Zero(t.memory.rows(), t.memory.cols());
  for (std::size_t l = params.source.size(); l-- > 0;) {
    const SourceLayer& p = params.source[l];
    SourceLayer& gl = g.source[l];
    const SourceCache& c = t.src[l];
    const MatrixXd dsum3 = norm_backward(p.norm3, c.n3, ds, gl.norm3);
    MatrixXd do2 = dsum3 + ffn_backward(p.ffn, c.ffn, masked(dsum3, c.drop3), gl.ffn);
    const MatrixXd dsum2 = norm_backward(p.norm2, c.n2, do2, gl.norm2);
    MatrixXd do1 = dsum2;
    attention_backward(p.cross, c.cross, masked(dsum2, c.drop2), heads, gl.cross, do1, dmemory);
    const MatrixXd dsum1 = norm_backward(p.norm1, c.n1, do1, gl.norm1);
    MatrixXd dx = dsum1;
    MatrixXd dkv = MatrixXd::Zero(dx.rows(), dx.cols());
    attention_backward(p.self, c.self, masked(dsum1, c.drop1), heads, gl.self, dx, dkv);
    ds = dx + dkv;
  }

  MatrixXd dc = dmemory;
  for (std::size_t l = params.context.size(); l-- > 0;) {
    const ContextLayer& p = params.context[l];
    ContextLayer& gl = g.context[l];
    const ContextCache& c = t.ctx[l];
    const MatrixXd dsum2 = norm_backward(p.norm2, c.n2, dc, gl.norm2);
    MatrixXd dox = dsum2 + ffn_backward(p.ffn, c.ffn, masked(dsum2, c.drop2), gl.ffn);
    const MatrixXd dsum1 = norm_backward(p.norm1, c.n1, dox, gl.norm1);
    MatrixXd dx = dsum1;
    MatrixXd dkv = MatrixXd::Zero(dx.rows(), dx.cols());
    attention_backward(p.self, c.att, masked(dsum1, c.drop1), heads, gl.self, dx, dkv);
    dc = dx + dkv;
  }

  auto embed_back = [&](const MatrixXd& dtok, const Pad& pad, auto value_of) {
    for (Eigen::Index r = 0; r < dtok.rows(); ++r) {
      if (pad[static_cast<std::size_t>(r)]) {
        g.pad_token += dtok.row(r);
      } else {
        g.embed_weight += value_of(r) * dtok.row(r);
        g.embed_bias += dtok.row(r);
      }
    }
  };
  embed_back(ds, t.in.src_pad, [&](Eigen::Index r) { return t.source(r); });
  embed_back(dc, t.in.ctx_pad, [&](Eigen::Index r) { return t.context(r / I, r % I); });
}

// ----- batches ---------------------------------------------------------------

EncodedInput encode_example(const Example& e, const ModelParams& params) {
  return embed_and_encode(e.source, e.context, params);
}

ModelOutput target_of(const Example& e, const ModelConfig& cfg) {
  if (e.coef_target.size() > cfg.coef_len() || e.knot_target.size() > cfg.knot_len())
    throw UnsupportedLength("target longer than the model outputs");
  ModelOutput t{VectorXd::Zero(cfg.coef_len()), VectorXd::Zero(cfg.knot_len())};
  t.coefficients.head(e.coef_target.size()) = e.coef_target;
  t.knots.head(e.knot_target.size()) = e.knot_target;
  return t;
}

BatchGradient batch_gradient(const ModelParams& params, const std::vector<Example>& batch, const LossWeights& w,
                             std::mt19937_64* rng) {
  if (batch.empty()) throw ParameterError("empty batch");
  BatchGradient out{0.0, zeros_like(params)};
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tape tape;
  for (const Example& e : batch) {
    const ModelOutput pred = tape.forward(params, e.source, e.context, rng);
    const ModelOutput target = target_of(e, params.config);
    const auto cl = static_cast<int>(e.coef_target.size());
    const auto kl = static_cast<int>(e.knot_target.size());
    out.loss += inv * composite_loss(pred, target, cl, kl, w);
    ModelOutput d = composite_loss_gradient(pred, target, cl, kl, w);
    d.coefficients *= inv;
    d.knots *= inv;
    tape.backward(params, d, out.grad);
  }
  return out;
}

double evaluate_loss(const ModelParams& params, const std::vector<Example>& examples, const LossWeights& w) {
  if (examples.empty()) throw ParameterError("no examples to evaluate");
  double total = 0.0;
  for (const Example& e : examples) {
    const ModelOutput pred = forward(params, encode_example(e, params));
    total += composite_loss(pred, target_of(e, params.config), static_cast<int>(e.coef_target.size()),
                            static_cast<int>(e.knot_target.size()), w);
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace tjplan::nn

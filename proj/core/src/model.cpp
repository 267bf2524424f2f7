#include "codemix/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "codemix/masking.hpp"
#include "codemix/random.hpp"

namespace codemix {

std::string_view to_string(Head head) noexcept {
  switch (head) {
    case Head::Mlm: return "mlm";
    case Head::Classify: return "classify";
    case Head::Span: return "span";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || max_len < 3 || num_labels < 1) {
    throw std::invalid_argument("model dimensions must be >= 1 (max_len >= 3)");
  }
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw std::invalid_argument("vocab_size must exceed the number of special tokens");
  }
  if (d_model % heads != 0) throw std::invalid_argument("d_model must be divisible by heads");
  if (!(init_std > 0.0)) throw std::invalid_argument("init_std must be positive");
}

namespace {

constexpr double kNormEps = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

std::string layer_name(std::size_t layer, std::string_view suffix) {
  return "layers." + std::to_string(layer) + "." + std::string(suffix);
}

// ---- parameter layout ----

struct LayerSlots {
  std::size_t q_w, q_b, k_w, v_w, v_b, o_w, o_b, attn_g, attn_b, in_w, in_b, out_w, out_b, ffn_g, ffn_b;
};

struct Slots {
  std::size_t tok, pos, seg, emb_g, emb_b;
  std::vector<LayerSlots> layers;
  std::size_t mlm_w, mlm_b, mlm_g, mlm_nb, dec_w, dec_b;
  std::size_t pool_w, pool_b, cls_w, cls_b;
  std::size_t span_w, span_b;
};

std::size_t slot(const TensorSet& set, const std::string& name, const std::vector<std::size_t>& shape) {
  const auto i = set.find(name);
  if (!i) throw std::invalid_argument("parameters lack tensor '" + name + "'");
  if (set[*i].shape != shape) throw std::invalid_argument("tensor '" + name + "' has the wrong shape");
  return *i;
}

Slots resolve(const TensorSet& p, const ModelConfig& c) {
  const std::size_t D = c.d_model, F = c.d_ff, V = c.vocab_size, L = c.max_len, C = c.num_labels;
  Slots s{};
  s.tok = slot(p, "embeddings.token", {V, D});
  s.pos = slot(p, "embeddings.position", {L, D});
  s.seg = slot(p, "embeddings.segment", {2, D});
  s.emb_g = slot(p, "embeddings.norm.gain", {D});
  s.emb_b = slot(p, "embeddings.norm.bias", {D});
  for (std::size_t l = 0; l < c.layers; ++l) {
    LayerSlots ls{};
    ls.q_w = slot(p, layer_name(l, "attn.query.weight"), {D, D});
    ls.q_b = slot(p, layer_name(l, "attn.query.bias"), {D});
    ls.k_w = slot(p, layer_name(l, "attn.key.weight"), {D, D});
    ls.v_w = slot(p, layer_name(l, "attn.value.weight"), {D, D});
    ls.v_b = slot(p, layer_name(l, "attn.value.bias"), {D});
    ls.o_w = slot(p, layer_name(l, "attn.output.weight"), {D, D});
    ls.o_b = slot(p, layer_name(l, "attn.output.bias"), {D});
    ls.attn_g = slot(p, layer_name(l, "attn_norm.gain"), {D});
    ls.attn_b = slot(p, layer_name(l, "attn_norm.bias"), {D});
    ls.in_w = slot(p, layer_name(l, "ffn.in.weight"), {D, F});
    ls.in_b = slot(p, layer_name(l, "ffn.in.bias"), {F});
    ls.out_w = slot(p, layer_name(l, "ffn.out.weight"), {F, D});
    ls.out_b = slot(p, layer_name(l, "ffn.out.bias"), {D});
    ls.ffn_g = slot(p, layer_name(l, "ffn_norm.gain"), {D});
    ls.ffn_b = slot(p, layer_name(l, "ffn_norm.bias"), {D});
    s.layers.push_back(ls);
  }
  s.mlm_w = slot(p, "mlm.transform.weight", {D, D});
  s.mlm_b = slot(p, "mlm.transform.bias", {D});
  s.mlm_g = slot(p, "mlm.norm.gain", {D});
  s.mlm_nb = slot(p, "mlm.norm.bias", {D});
  s.dec_w = slot(p, "mlm.decoder.weight", {D, V});
  s.dec_b = slot(p, "mlm.decoder.bias", {V});
  s.pool_w = slot(p, "classify.pooler.weight", {D, D});
  s.pool_b = slot(p, "classify.pooler.bias", {D});
  s.cls_w = slot(p, "classify.output.weight", {D, C});
  s.cls_b = slot(p, "classify.output.bias", {C});
  s.span_w = slot(p, "span.output.weight", {D, 2});
  s.span_b = slot(p, "span.output.bias", {2});
  return s;
}

enum class Fill { Normal, Zero, One };

struct TensorDef {
  std::string name;
  std::vector<std::size_t> shape;
  Fill fill;
  bool decay;
};

std::vector<TensorDef> encoder_defs(const ModelConfig& c) {
  const std::size_t D = c.d_model, F = c.d_ff;
  std::vector<TensorDef> defs{
      {"embeddings.token", {c.vocab_size, D}, Fill::Normal, true},
      {"embeddings.position", {c.max_len, D}, Fill::Normal, true},
      {"embeddings.segment", {2, D}, Fill::Normal, true},
      {"embeddings.norm.gain", {D}, Fill::One, false},
      {"embeddings.norm.bias", {D}, Fill::Zero, false},
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    defs.push_back({layer_name(l, "attn.query.weight"), {D, D}, Fill::Normal, true});
    defs.push_back({layer_name(l, "attn.query.bias"), {D}, Fill::Zero, false});
    defs.push_back({layer_name(l, "attn.key.weight"), {D, D}, Fill::Normal, true});
    defs.push_back({layer_name(l, "attn.value.weight"), {D, D}, Fill::Normal, true});
    defs.push_back({layer_name(l, "attn.value.bias"), {D}, Fill::Zero, false});
    defs.push_back({layer_name(l, "attn.output.weight"), {D, D}, Fill::Normal, true});
    defs.push_back({layer_name(l, "attn.output.bias"), {D}, Fill::Zero, false});
    defs.push_back({layer_name(l, "attn_norm.gain"), {D}, Fill::One, false});
    defs.push_back({layer_name(l, "attn_norm.bias"), {D}, Fill::Zero, false});
    defs.push_back({layer_name(l, "ffn.in.weight"), {D, F}, Fill::Normal, true});
    defs.push_back({layer_name(l, "ffn.in.bias"), {F}, Fill::Zero, false});
    defs.push_back({layer_name(l, "ffn.out.weight"), {F, D}, Fill::Normal, true});
    defs.push_back({layer_name(l, "ffn.out.bias"), {D}, Fill::Zero, false});
    defs.push_back({layer_name(l, "ffn_norm.gain"), {D}, Fill::One, false});
    defs.push_back({layer_name(l, "ffn_norm.bias"), {D}, Fill::Zero, false});
  }
  return defs;
}

std::vector<TensorDef> head_defs(const ModelConfig& c, Head head) {
  const std::size_t D = c.d_model;
  switch (head) {
    case Head::Mlm:
      return {{"mlm.transform.weight", {D, D}, Fill::Normal, true},
              {"mlm.transform.bias", {D}, Fill::Zero, false},
              {"mlm.norm.gain", {D}, Fill::One, false},
              {"mlm.norm.bias", {D}, Fill::Zero, false},
              {"mlm.decoder.weight", {D, c.vocab_size}, Fill::Normal, true},
              {"mlm.decoder.bias", {c.vocab_size}, Fill::Zero, false}};
    case Head::Classify:
      return {{"classify.pooler.weight", {D, D}, Fill::Normal, true},
              {"classify.pooler.bias", {D}, Fill::Zero, false},
              {"classify.output.weight", {D, c.num_labels}, Fill::Normal, true},
              {"classify.output.bias", {c.num_labels}, Fill::Zero, false}};
    case Head::Span:
      return {{"span.output.weight", {D, 2}, Fill::Normal, true}, {"span.output.bias", {2}, Fill::Zero, false}};
  }
  return {};
}

Tensor materialize(const TensorDef& def, double std, Rng& rng) {
  Tensor t(def.name, def.shape, def.decay);
  switch (def.fill) {
    case Fill::Zero: break;
    case Fill::One: std::fill(t.data.begin(), t.data.end(), 1.0); break;
    case Fill::Normal:
      for (auto& v : t.data) {
        double z = rng.normal();
        while (std::abs(z) > 2.0) z = rng.normal();
        v = z * std;
      }
      break;
  }
  return t;
}

// ---- dense kernels ----

// y[n,m] = x[n,k] w[k,m] (+ b)
void affine(const double* x, const double* w, const double* b, double* y, std::size_t n, std::size_t k,
            std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* yi = y + i * m;
    if (b != nullptr) {
      std::copy(b, b + m, yi);
    } else {
      std::fill(yi, yi + m, 0.0);
    }
    const double* xi = x + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xi[p];
      const double* wp = w + p * m;
      for (std::size_t j = 0; j < m; ++j) yi[j] += xv * wp[j];
    }
  }
}

// dx[n,k] (+)= dy[n,m] w[k,m]^T
void affine_grad_input(const double* dy, const double* w, double* dx, std::size_t n, std::size_t k, std::size_t m,
                       bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyi = dy + i * m;
    double* dxi = dx + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* wp = w + p * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += dyi[j] * wp[j];
      dxi[p] = accumulate ? dxi[p] + acc : acc;
    }
  }
}

// dw[k,m] += x^T dy; db[m] += sum_i dy
void affine_grad_params(const double* x, const double* dy, double* dw, double* db, std::size_t n, std::size_t k,
                        std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x + i * k;
    const double* dyi = dy + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = xi[p];
      double* dwp = dw + p * m;
      for (std::size_t j = 0; j < m; ++j) dwp[j] += xv * dyi[j];
    }
    if (db != nullptr) {
      for (std::size_t j = 0; j < m; ++j) db[j] += dyi[j];
    }
  }
}

struct NormCache {
  std::vector<double> xhat;
  std::vector<double> rstd;
};

void norm_forward(const double* x, const double* gain, const double* bias, double* y, NormCache& cache,
                  std::size_t n, std::size_t d) {
  cache.xhat.resize(n * d);
  cache.rstd.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xi[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kNormEps);
    cache.rstd[i] = rstd;
    double* xh = cache.xhat.data() + i * d;
    double* yi = y + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mean) * rstd;
      yi[j] = gain[j] * xh[j] + bias[j];
    }
  }
}

// dx overwritten.
void norm_backward(const double* dy, const double* gain, const NormCache& cache, double* dx, double* dgain,
                   double* dbias, std::size_t n, std::size_t d) {
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyi = dy + i * d;
    const double* xh = cache.xhat.data() + i * d;
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain[j] += dyi[j] * xh[j];
      dbias[j] += dyi[j];
      dxhat[j] = dyi[j] * gain[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    double* dxi = dx + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      dxi[j] = cache.rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
}

// Softmax cross-entropy over `logits` (masked entries = -inf) for one
// target. Writes (softmax - onehot) * scale into grad when non-null.
double softmax_xent(const double* logits, std::size_t n, std::size_t target, double scale, double* grad,
                    bool* argmax_correct) {
  double mx = kNegInf;
  std::size_t best = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (logits[j] > mx) {
      mx = logits[j];
      best = j;
    }
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) sum += logits[j] == kNegInf ? 0.0 : std::exp(logits[j] - mx);
  const double log_sum = std::log(sum) + mx;
  if (argmax_correct != nullptr) *argmax_correct = best == target;
  if (grad != nullptr) {
    for (std::size_t j = 0; j < n; ++j) {
      const double p = logits[j] == kNegInf ? 0.0 : std::exp(logits[j] - log_sum);
      grad[j] = scale * (p - (j == target ? 1.0 : 0.0));
    }
  }
  return log_sum - logits[target];
}

// ---- row bookkeeping ----

// Computation runs over a compact list of (example, position) rows. Keys
// are always the unpadded positions; queries are either all positions or
// only the unpadded ones.
struct Rows {
  std::size_t batch = 0;
  std::size_t positions = 0;
  std::vector<std::size_t> example;
  std::vector<std::size_t> position;
  std::vector<std::vector<std::size_t>> queries;
  std::vector<std::vector<std::size_t>> keys;
  std::vector<std::ptrdiff_t> compact;

  std::size_t n() const noexcept { return example.size(); }
  std::ptrdiff_t row_of(std::size_t b, std::size_t t) const { return compact[b * positions + t]; }
};

void validate_batch(const ModelConfig& c, const ModelBatch& batch) {
  if (batch.inputs.empty()) throw std::invalid_argument("empty batch");
  for (const auto& enc : batch.inputs) {
    if (enc.size() != c.max_len || enc.attention_mask.size() != c.max_len || enc.segment_ids.size() != c.max_len) {
      throw std::invalid_argument("encoding length " + std::to_string(enc.size()) + " does not match max_len " +
                                  std::to_string(c.max_len));
    }
    for (std::size_t t = 0; t < enc.size(); ++t) {
      if (enc.token_ids[t] < 0 || static_cast<std::size_t>(enc.token_ids[t]) >= c.vocab_size) {
        throw std::invalid_argument("token id " + std::to_string(enc.token_ids[t]) + " outside vocab_size");
      }
      if (enc.segment_ids[t] > 1) throw std::invalid_argument("segment ids must be 0 or 1");
    }
  }
}

Rows make_rows(const ModelConfig& c, const ModelBatch& batch, bool all_positions) {
  Rows r;
  r.batch = batch.size();
  r.positions = c.max_len;
  r.queries.resize(r.batch);
  r.keys.resize(r.batch);
  r.compact.assign(r.batch * r.positions, -1);
  for (std::size_t b = 0; b < r.batch; ++b) {
    const auto& mask = batch.inputs[b].attention_mask;
    for (std::size_t t = 0; t < r.positions; ++t) {
      const bool active = mask[t] != 0;
      if (!active && !all_positions) continue;
      const auto row = r.n();
      r.compact[b * r.positions + t] = static_cast<std::ptrdiff_t>(row);
      r.example.push_back(b);
      r.position.push_back(t);
      r.queries[b].push_back(row);
      if (active) r.keys[b].push_back(row);
    }
  }
  return r;
}

// ---- encoder ----

struct LayerCache {
  std::vector<double> input, q, k, v, probs, context, h1, ffn_pre, ffn_act, output;
  std::vector<std::size_t> prob_offset;
  NormCache attn_norm, ffn_norm;
};

struct EncoderCache {
  NormCache emb_norm;
  std::vector<LayerCache> layers;
  std::vector<double> hidden;
};

void check_finite(const std::vector<double>& values, std::string_view where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError("non-finite activation in " + std::string(where));
  }
}

void layer_forward(const ModelConfig& c, const Parameters& p, const LayerSlots& s, const Rows& rows,
                   const std::vector<double>& x, LayerCache& lc) {
  const std::size_t N = rows.n(), D = c.d_model, F = c.d_ff, H = c.heads, dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  lc.input = x;
  lc.q.resize(N * D);
  lc.k.resize(N * D);
  lc.v.resize(N * D);
  affine(x.data(), p[s.q_w].ptr(), p[s.q_b].ptr(), lc.q.data(), N, D, D);
  affine(x.data(), p[s.k_w].ptr(), nullptr, lc.k.data(), N, D, D);
  affine(x.data(), p[s.v_w].ptr(), p[s.v_b].ptr(), lc.v.data(), N, D, D);

  lc.prob_offset.assign(rows.batch * H + 1, 0);
  std::size_t total = 0;
  for (std::size_t b = 0; b < rows.batch; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      lc.prob_offset[b * H + h] = total;
      total += rows.queries[b].size() * rows.keys[b].size();
    }
  }
  lc.prob_offset[rows.batch * H] = total;
  lc.probs.assign(total, 0.0);
  lc.context.assign(N * D, 0.0);

  std::vector<double> scores;
  for (std::size_t b = 0; b < rows.batch; ++b) {
    const auto& Q = rows.queries[b];
    const auto& K = rows.keys[b];
    if (K.empty()) continue;
    scores.resize(K.size());
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      double* P = lc.probs.data() + lc.prob_offset[b * H + h];
      for (std::size_t qi = 0; qi < Q.size(); ++qi) {
        const double* qrow = lc.q.data() + Q[qi] * D + off;
        double mx = kNegInf;
        for (std::size_t kj = 0; kj < K.size(); ++kj) {
          const double* krow = lc.k.data() + K[kj] * D + off;
          double dot = 0.0;
          for (std::size_t d = 0; d < dh; ++d) dot += qrow[d] * krow[d];
          scores[kj] = dot * scale;
          mx = std::max(mx, scores[kj]);
        }
        double sum = 0.0;
        for (std::size_t kj = 0; kj < K.size(); ++kj) {
          scores[kj] = std::exp(scores[kj] - mx);
          sum += scores[kj];
        }
        double* prow = P + qi * K.size();
        double* ctx = lc.context.data() + Q[qi] * D + off;
        for (std::size_t kj = 0; kj < K.size(); ++kj) {
          prow[kj] = scores[kj] / sum;
          const double* vrow = lc.v.data() + K[kj] * D + off;
          for (std::size_t d = 0; d < dh; ++d) ctx[d] += prow[kj] * vrow[d];
        }
      }
    }
  }

  std::vector<double> u(N * D);
  affine(lc.context.data(), p[s.o_w].ptr(), p[s.o_b].ptr(), u.data(), N, D, D);
  for (std::size_t i = 0; i < N * D; ++i) u[i] += x[i];
  lc.h1.resize(N * D);
  norm_forward(u.data(), p[s.attn_g].ptr(), p[s.attn_b].ptr(), lc.h1.data(), lc.attn_norm, N, D);

  lc.ffn_pre.resize(N * F);
  affine(lc.h1.data(), p[s.in_w].ptr(), p[s.in_b].ptr(), lc.ffn_pre.data(), N, D, F);
  lc.ffn_act.resize(N * F);
  for (std::size_t i = 0; i < N * F; ++i) lc.ffn_act[i] = gelu(lc.ffn_pre[i]);
  std::vector<double> w(N * D);
  affine(lc.ffn_act.data(), p[s.out_w].ptr(), p[s.out_b].ptr(), w.data(), N, F, D);
  for (std::size_t i = 0; i < N * D; ++i) w[i] += lc.h1[i];
  lc.output.resize(N * D);
  norm_forward(w.data(), p[s.ffn_g].ptr(), p[s.ffn_b].ptr(), lc.output.data(), lc.ffn_norm, N, D);
}

// dout -> dx; parameter gradients accumulate into g.
std::vector<double> layer_backward(const ModelConfig& c, const Parameters& p, Parameters& g, const LayerSlots& s,
                                   const Rows& rows, const LayerCache& lc, const std::vector<double>& dout) {
  const std::size_t N = rows.n(), D = c.d_model, F = c.d_ff, H = c.heads, dh = c.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> dw(N * D);
  norm_backward(dout.data(), p[s.ffn_g].ptr(), lc.ffn_norm, dw.data(), g[s.ffn_g].ptr(), g[s.ffn_b].ptr(), N, D);

  affine_grad_params(lc.ffn_act.data(), dw.data(), g[s.out_w].ptr(), g[s.out_b].ptr(), N, F, D);
  std::vector<double> dz(N * F);
  affine_grad_input(dw.data(), p[s.out_w].ptr(), dz.data(), N, F, D, false);
  for (std::size_t i = 0; i < N * F; ++i) dz[i] *= gelu_grad(lc.ffn_pre[i]);
  affine_grad_params(lc.h1.data(), dz.data(), g[s.in_w].ptr(), g[s.in_b].ptr(), N, D, F);
  std::vector<double> dh1 = dw;
  affine_grad_input(dz.data(), p[s.in_w].ptr(), dh1.data(), N, D, F, true);

  std::vector<double> du(N * D);
  norm_backward(dh1.data(), p[s.attn_g].ptr(), lc.attn_norm, du.data(), g[s.attn_g].ptr(), g[s.attn_b].ptr(), N, D);

  affine_grad_params(lc.context.data(), du.data(), g[s.o_w].ptr(), g[s.o_b].ptr(), N, D, D);
  std::vector<double> dctx(N * D);
  affine_grad_input(du.data(), p[s.o_w].ptr(), dctx.data(), N, D, D, false);

  std::vector<double> dq(N * D, 0.0), dk(N * D, 0.0), dv(N * D, 0.0);
  std::vector<double> dP;
  for (std::size_t b = 0; b < rows.batch; ++b) {
    const auto& Q = rows.queries[b];
    const auto& K = rows.keys[b];
    if (K.empty()) continue;
    dP.resize(K.size());
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      const double* P = lc.probs.data() + lc.prob_offset[b * H + h];
      for (std::size_t qi = 0; qi < Q.size(); ++qi) {
        const double* prow = P + qi * K.size();
        const double* dc = dctx.data() + Q[qi] * D + off;
        double dot_pdp = 0.0;
        for (std::size_t kj = 0; kj < K.size(); ++kj) {
          const double* vrow = lc.v.data() + K[kj] * D + off;
          double* dvrow = dv.data() + K[kj] * D + off;
          double acc = 0.0;
          for (std::size_t d = 0; d < dh; ++d) {
            acc += dc[d] * vrow[d];
            dvrow[d] += prow[kj] * dc[d];
          }
          dP[kj] = acc;
          dot_pdp += prow[kj] * acc;
        }
        const double* qrow = lc.q.data() + Q[qi] * D + off;
        double* dqrow = dq.data() + Q[qi] * D + off;
        for (std::size_t kj = 0; kj < K.size(); ++kj) {
          const double ds = prow[kj] * (dP[kj] - dot_pdp) * scale;
          const double* krow = lc.k.data() + K[kj] * D + off;
          double* dkrow = dk.data() + K[kj] * D + off;
          for (std::size_t d = 0; d < dh; ++d) {
            dqrow[d] += ds * krow[d];
            dkrow[d] += ds * qrow[d];
          }
        }
      }
    }
  }

  std::vector<double> dx = du;
  affine_grad_params(lc.input.data(), dq.data(), g[s.q_w].ptr(), g[s.q_b].ptr(), N, D, D);
  affine_grad_input(dq.data(), p[s.q_w].ptr(), dx.data(), N, D, D, true);
  affine_grad_params(lc.input.data(), dk.data(), g[s.k_w].ptr(), nullptr, N, D, D);
  affine_grad_input(dk.data(), p[s.k_w].ptr(), dx.data(), N, D, D, true);
  affine_grad_params(lc.input.data(), dv.data(), g[s.v_w].ptr(), g[s.v_b].ptr(), N, D, D);
  affine_grad_input(dv.data(), p[s.v_w].ptr(), dx.data(), N, D, D, true);
  return dx;
}

void encoder_forward(const ModelConfig& c, const Parameters& p, const Slots& s, const ModelBatch& batch,
                     const Rows& rows, EncoderCache& cache) {
  const std::size_t N = rows.n(), D = c.d_model;
  std::vector<double> x0(N * D);
  for (std::size_t r = 0; r < N; ++r) {
    const auto& enc = batch.inputs[rows.example[r]];
    const std::size_t t = rows.position[r];
    const double* tok = p[s.tok].ptr() + static_cast<std::size_t>(enc.token_ids[t]) * D;
    const double* pos = p[s.pos].ptr() + t * D;
    const double* seg = p[s.seg].ptr() + enc.segment_ids[t] * D;
    double* xr = x0.data() + r * D;
    for (std::size_t d = 0; d < D; ++d) xr[d] = tok[d] + pos[d] + seg[d];
  }
  std::vector<double> h(N * D);
  norm_forward(x0.data(), p[s.emb_g].ptr(), p[s.emb_b].ptr(), h.data(), cache.emb_norm, N, D);
  cache.layers.resize(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    layer_forward(c, p, s.layers[l], rows, l == 0 ? h : cache.layers[l - 1].output, cache.layers[l]);
  }
  cache.hidden = cache.layers.back().output;
  check_finite(cache.hidden, "encoder output");
}

void encoder_backward(const ModelConfig& c, const Parameters& p, Parameters& g, const Slots& s,
                      const ModelBatch& batch, const Rows& rows, const EncoderCache& cache,
                      std::vector<double> dhidden) {
  const std::size_t N = rows.n(), D = c.d_model;
  for (std::size_t l = c.layers; l-- > 0;) {
    dhidden = layer_backward(c, p, g, s.layers[l], rows, cache.layers[l], dhidden);
  }
  std::vector<double> dx0(N * D);
  norm_backward(dhidden.data(), p[s.emb_g].ptr(), cache.emb_norm, dx0.data(), g[s.emb_g].ptr(), g[s.emb_b].ptr(), N,
                D);
  for (std::size_t r = 0; r < N; ++r) {
    const auto& enc = batch.inputs[rows.example[r]];
    const std::size_t t = rows.position[r];
    double* tok = g[s.tok].ptr() + static_cast<std::size_t>(enc.token_ids[t]) * D;
    double* pos = g[s.pos].ptr() + t * D;
    double* seg = g[s.seg].ptr() + enc.segment_ids[t] * D;
    const double* dr = dx0.data() + r * D;
    for (std::size_t d = 0; d < D; ++d) {
      tok[d] += dr[d];
      pos[d] += dr[d];
      seg[d] += dr[d];
    }
  }
}

// ---- heads ----

struct MlmCache {
  std::vector<std::size_t> rows;
  std::vector<double> input, pre, act, normed, logits;
  NormCache norm;
};

void mlm_forward(const ModelConfig& c, const Parameters& p, const Slots& s, const std::vector<double>& hidden,
                 std::vector<std::size_t> rows, MlmCache& mc) {
  const std::size_t D = c.d_model, V = c.vocab_size, R = rows.size();
  mc.rows = std::move(rows);
  mc.input.resize(R * D);
  for (std::size_t i = 0; i < R; ++i) {
    std::copy_n(hidden.data() + mc.rows[i] * D, D, mc.input.data() + i * D);
  }
  mc.pre.resize(R * D);
  affine(mc.input.data(), p[s.mlm_w].ptr(), p[s.mlm_b].ptr(), mc.pre.data(), R, D, D);
  mc.act.resize(R * D);
  for (std::size_t i = 0; i < R * D; ++i) mc.act[i] = gelu(mc.pre[i]);
  mc.normed.resize(R * D);
  norm_forward(mc.act.data(), p[s.mlm_g].ptr(), p[s.mlm_nb].ptr(), mc.normed.data(), mc.norm, R, D);
  mc.logits.resize(R * V);
  affine(mc.normed.data(), p[s.dec_w].ptr(), p[s.dec_b].ptr(), mc.logits.data(), R, D, V);
}

void mlm_backward(const ModelConfig& c, const Parameters& p, Parameters& g, const Slots& s, const MlmCache& mc,
                  const std::vector<double>& dlogits, std::vector<double>& dhidden) {
  const std::size_t D = c.d_model, V = c.vocab_size, R = mc.rows.size();
  affine_grad_params(mc.normed.data(), dlogits.data(), g[s.dec_w].ptr(), g[s.dec_b].ptr(), R, D, V);
  std::vector<double> dnormed(R * D);
  affine_grad_input(dlogits.data(), p[s.dec_w].ptr(), dnormed.data(), R, D, V, false);
  std::vector<double> dact(R * D);
  norm_backward(dnormed.data(), p[s.mlm_g].ptr(), mc.norm, dact.data(), g[s.mlm_g].ptr(), g[s.mlm_nb].ptr(), R, D);
  for (std::size_t i = 0; i < R * D; ++i) dact[i] *= gelu_grad(mc.pre[i]);
  affine_grad_params(mc.input.data(), dact.data(), g[s.mlm_w].ptr(), g[s.mlm_b].ptr(), R, D, D);
  std::vector<double> din(R * D);
  affine_grad_input(dact.data(), p[s.mlm_w].ptr(), din.data(), R, D, D, false);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t d = 0; d < D; ++d) dhidden[mc.rows[i] * D + d] += din[i * D + d];
  }
}

struct ClassifyCache {
  std::vector<std::size_t> rows;
  std::vector<double> input, pooled, logits;
};

void classify_forward(const ModelConfig& c, const Parameters& p, const Slots& s, const Rows& rows,
                      const std::vector<double>& hidden, ClassifyCache& cc) {
  const std::size_t D = c.d_model, C = c.num_labels, B = rows.batch;
  cc.rows.resize(B);
  cc.input.resize(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    const auto r = rows.row_of(b, 0);
    if (r < 0) throw std::invalid_argument("classification requires an unpadded CLS position");
    cc.rows[b] = static_cast<std::size_t>(r);
    std::copy_n(hidden.data() + cc.rows[b] * D, D, cc.input.data() + b * D);
  }
  cc.pooled.resize(B * D);
  affine(cc.input.data(), p[s.pool_w].ptr(), p[s.pool_b].ptr(), cc.pooled.data(), B, D, D);
  for (auto& v : cc.pooled) v = std::tanh(v);
  cc.logits.resize(B * C);
  affine(cc.pooled.data(), p[s.cls_w].ptr(), p[s.cls_b].ptr(), cc.logits.data(), B, D, C);
}

void classify_backward(const ModelConfig& c, const Parameters& p, Parameters& g, const Slots& s,
                       const ClassifyCache& cc, const std::vector<double>& dlogits, std::vector<double>& dhidden) {
  const std::size_t D = c.d_model, C = c.num_labels, B = cc.rows.size();
  affine_grad_params(cc.pooled.data(), dlogits.data(), g[s.cls_w].ptr(), g[s.cls_b].ptr(), B, D, C);
  std::vector<double> dpooled(B * D);
  affine_grad_input(dlogits.data(), p[s.cls_w].ptr(), dpooled.data(), B, D, C, false);
  for (std::size_t i = 0; i < B * D; ++i) dpooled[i] *= 1.0 - cc.pooled[i] * cc.pooled[i];
  affine_grad_params(cc.input.data(), dpooled.data(), g[s.pool_w].ptr(), g[s.pool_b].ptr(), B, D, D);
  std::vector<double> din(B * D);
  affine_grad_input(dpooled.data(), p[s.pool_w].ptr(), din.data(), B, D, D, false);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t d = 0; d < D; ++d) dhidden[cc.rows[b] * D + d] += din[b * D + d];
  }
}

// [N, 2] start/end scores per compact row.
std::vector<double> span_forward(const ModelConfig& c, const Parameters& p, const Slots& s, const Rows& rows,
                                 const std::vector<double>& hidden) {
  std::vector<double> out(rows.n() * 2);
  affine(hidden.data(), p[s.span_w].ptr(), p[s.span_b].ptr(), out.data(), rows.n(), c.d_model, 2);
  return out;
}

// ---- shared driver ----

struct Evaluation {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t counted = 0;
};

Evaluation run(const ModelConfig& c, const Parameters& p, const ModelBatch& batch, Head head, Parameters* grads) {
  c.validate();
  validate_batch(c, batch);
  const Slots s = resolve(p, c);
  const Rows rows = make_rows(c, batch, false);
  EncoderCache cache;
  encoder_forward(c, p, s, batch, rows, cache);
  const std::size_t D = c.d_model;
  const std::size_t B = batch.size();
  std::vector<double> dhidden;
  if (grads != nullptr) dhidden.assign(rows.n() * D, 0.0);

  Evaluation ev;
  switch (head) {
    case Head::Mlm: {
      if (batch.mlm_labels.size() != B) throw std::invalid_argument("MLM batch needs labels for every example");
      std::vector<std::size_t> target_rows;
      std::vector<std::size_t> targets;
      for (std::size_t b = 0; b < B; ++b) {
        if (batch.mlm_labels[b].size() != c.max_len) throw std::invalid_argument("MLM labels must cover max_len");
        for (std::size_t t = 0; t < c.max_len; ++t) {
          const TokenId label = batch.mlm_labels[b][t];
          if (label == kIgnoreLabel) continue;
          if (label < 0 || static_cast<std::size_t>(label) >= c.vocab_size) {
            throw std::invalid_argument("MLM label outside vocabulary");
          }
          const auto r = rows.row_of(b, t);
          if (r < 0) throw std::invalid_argument("MLM label on a padded position");
          target_rows.push_back(static_cast<std::size_t>(r));
          targets.push_back(static_cast<std::size_t>(label));
        }
      }
      if (targets.empty()) throw std::invalid_argument("all MLM targets are ignored; the mean loss is undefined");
      MlmCache mc;
      mlm_forward(c, p, s, cache.hidden, target_rows, mc);
      const std::size_t V = c.vocab_size;
      const double inv = 1.0 / static_cast<double>(targets.size());
      std::vector<double> dlogits(grads != nullptr ? targets.size() * V : 0);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        bool ok = false;
        ev.loss += softmax_xent(mc.logits.data() + i * V, V, targets[i], inv,
                                grads != nullptr ? dlogits.data() + i * V : nullptr, &ok);
        ev.correct += ok ? 1 : 0;
      }
      ev.loss *= inv;
      ev.counted = targets.size();
      if (grads != nullptr) mlm_backward(c, p, *grads, s, mc, dlogits, dhidden);
      break;
    }
    case Head::Classify: {
      if (batch.class_labels.size() != B) throw std::invalid_argument("classification batch needs one label each");
      ClassifyCache cc;
      classify_forward(c, p, s, rows, cache.hidden, cc);
      const std::size_t C = c.num_labels;
      const double inv = 1.0 / static_cast<double>(B);
      std::vector<double> dlogits(grads != nullptr ? B * C : 0);
      for (std::size_t b = 0; b < B; ++b) {
        if (batch.class_labels[b] >= C) throw std::invalid_argument("class label outside num_labels");
        bool ok = false;
        ev.loss += softmax_xent(cc.logits.data() + b * C, C, batch.class_labels[b], inv,
                                grads != nullptr ? dlogits.data() + b * C : nullptr, &ok);
        ev.correct += ok ? 1 : 0;
      }
      ev.loss *= inv;
      ev.counted = B;
      if (grads != nullptr) classify_backward(c, p, *grads, s, cc, dlogits, dhidden);
      break;
    }
    case Head::Span: {
      if (batch.start_positions.size() != B || batch.end_positions.size() != B) {
        throw std::invalid_argument("span batch needs start and end positions for every example");
      }
      const auto scores = span_forward(c, p, s, rows, cache.hidden);
      std::vector<double> dscores(grads != nullptr ? scores.size() : 0, 0.0);
      const double inv = 0.5 / static_cast<double>(B);
      std::vector<double> logits, grad;
      for (std::size_t b = 0; b < B; ++b) {
        const auto& K = rows.keys[b];
        bool both = true;
        for (std::size_t col = 0; col < 2; ++col) {
          const std::size_t target_pos = col == 0 ? batch.start_positions[b] : batch.end_positions[b];
          const auto tr = target_pos < c.max_len ? rows.row_of(b, target_pos) : -1;
          if (tr < 0) throw std::invalid_argument("span target on a padded or out-of-range position");
          logits.resize(K.size());
          grad.resize(K.size());
          std::size_t target = 0;
          for (std::size_t kj = 0; kj < K.size(); ++kj) {
            logits[kj] = scores[K[kj] * 2 + col];
            if (K[kj] == static_cast<std::size_t>(tr)) target = kj;
          }
          bool ok = false;
          ev.loss += 0.5 * softmax_xent(logits.data(), K.size(), target, inv,
                                        grads != nullptr ? grad.data() : nullptr, &ok);
          both = both && ok;
          if (grads != nullptr) {
            for (std::size_t kj = 0; kj < K.size(); ++kj) dscores[K[kj] * 2 + col] = grad[kj];
          }
        }
        ev.correct += both ? 1 : 0;
      }
      ev.loss /= static_cast<double>(B);
      ev.counted = B;
      if (grads != nullptr) {
        affine_grad_params(cache.hidden.data(), dscores.data(), (*grads)[s.span_w].ptr(), (*grads)[s.span_b].ptr(),
                           rows.n(), D, 2);
        affine_grad_input(dscores.data(), p[s.span_w].ptr(), dhidden.data(), rows.n(), D, 2, true);
      }
      break;
    }
  }
  if (!std::isfinite(ev.loss)) throw NumericalError("non-finite loss");
  if (grads != nullptr) encoder_backward(c, p, *grads, s, batch, rows, cache, std::move(dhidden));
  return ev;
}

}  // namespace

Parameters init_parameters(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, 0x1417));
  Parameters params;
  for (const auto& def : encoder_defs(config)) params.add(materialize(def, config.init_std, rng));
  for (Head head : {Head::Mlm, Head::Classify, Head::Span}) {
    for (const auto& def : head_defs(config, head)) params.add(materialize(def, config.init_std, rng));
  }
  return params;
}

void reset_head(Parameters& params, const ModelConfig& config, Head head, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, 0x4EAD + static_cast<std::uint64_t>(head)));
  for (const auto& def : head_defs(config, head)) {
    auto fresh = materialize(def, config.init_std, rng);
    if (auto i = params.find(def.name)) {
      params[*i] = std::move(fresh);
    } else {
      params.add(std::move(fresh));
    }
  }
}

std::vector<std::string> head_tensor_names(const ModelConfig& config, Head head) {
  std::vector<std::string> names;
  for (const auto& def : head_defs(config, head)) names.push_back(def.name);
  return names;
}

bool is_head_tensor(std::string_view name, Head head) {
  switch (head) {
    case Head::Mlm: return name.starts_with("mlm.");
    case Head::Classify: return name.starts_with("classify.");
    case Head::Span: return name.starts_with("span.");
  }
  return false;
}

Logits forward(const ModelConfig& config, const Parameters& params, const ModelBatch& batch, Head head) {
  config.validate();
  validate_batch(config, batch);
  const Slots s = resolve(params, config);
  const Rows rows = make_rows(config, batch, true);
  EncoderCache cache;
  encoder_forward(config, params, s, batch, rows, cache);
  const std::size_t B = batch.size(), T = config.max_len;

  Logits out;
  out.head = head;
  switch (head) {
    case Head::Mlm: {
      std::vector<std::size_t> all(rows.n());
      std::iota(all.begin(), all.end(), std::size_t{0});
      MlmCache mc;
      mlm_forward(config, params, s, cache.hidden, all, mc);
      out.rows = B * T;
      out.cols = config.vocab_size;
      out.values = std::move(mc.logits);
      break;
    }
    case Head::Classify: {
      ClassifyCache cc;
      classify_forward(config, params, s, rows, cache.hidden, cc);
      out.rows = B;
      out.cols = config.num_labels;
      out.values = std::move(cc.logits);
      break;
    }
    case Head::Span: {
      const auto scores = span_forward(config, params, s, rows, cache.hidden);
      out.rows = B;
      out.cols = T;
      out.values.assign(B * T, kNegInf);
      out.end_values.assign(B * T, kNegInf);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t row : rows.keys[b]) {
          out.values[b * T + rows.position[row]] = scores[row * 2];
          out.end_values[b * T + rows.position[row]] = scores[row * 2 + 1];
        }
      }
      break;
    }
  }
  for (double v : out.values) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) throw NumericalError("non-finite logits");
  }
  return out;
}

LossOutput loss_and_gradients(const ModelConfig& config, const Parameters& params, const ModelBatch& batch,
                              Head head) {
  LossOutput out;
  out.gradients = params.zeros_like();
  const auto ev = run(config, params, batch, head, &out.gradients);
  out.loss = ev.loss;
  out.correct = ev.correct;
  out.counted = ev.counted;
  if (!out.gradients.all_finite()) throw NumericalError("non-finite gradients");
  return out;
}

double compute_loss(const ModelConfig& config, const Parameters& params, const ModelBatch& batch, Head head) {
  return run(config, params, batch, head, nullptr).loss;
}

GradientCheckResult gradient_check_against(const ModelConfig& config, const Parameters& params,
                                           const ModelBatch& batch, Head head, double epsilon,
                                           const Parameters& analytic, std::size_t per_tensor) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw std::invalid_argument("epsilon must lie in [1e-7, 1e-3]");
  if (!analytic.same_layout(params)) throw std::invalid_argument("analytic gradients do not match parameters");
  Parameters work = params;
  GradientCheckResult result;
  for (std::size_t ti = 0; ti < work.size(); ++ti) {
    const std::size_t n = work[ti].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > per_tensor) {
      Rng rng(derive_seed(0x6C4EC4, ti));
      rng.shuffle(coords);
      coords.resize(per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (auto idx : coords) {
      double& x = work[ti].data[idx];
      const double original = x;
      x = original + epsilon;
      const double plus = compute_loss(config, work, batch, head);
      x = original - epsilon;
      const double minus = compute_loss(config, work, batch, head);
      x = original;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double exact = analytic[ti].data[idx];
      ++result.coordinates_checked;
      // differences of a few ulps of the loss are all the quotient can see
      const double top = std::max(std::abs(plus), std::abs(minus));
      const double resolution =
          16.0 * (std::nextafter(top, std::numeric_limits<double>::infinity()) - top) / (2.0 * epsilon);
      if (std::abs(exact) <= resolution && std::abs(numeric) <= resolution) {
        ++result.below_resolution;
        continue;
      }
      const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-12});
      const double rel = std::abs(exact - numeric) / denom;
      if (result.worst_tensor.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = work[ti].name;
        result.worst_index = idx;
      }
    }
  }
  return result;
}

GradientCheckResult gradient_check(const ModelConfig& config, const Parameters& params, const ModelBatch& batch,
                                   Head head, double epsilon, std::size_t per_tensor) {
  const auto analytic = loss_and_gradients(config, params, batch, head).gradients;
  return gradient_check_against(config, params, batch, head, epsilon, analytic, per_tensor);
}

EncoderTrace trace_encoder(const ModelConfig& config, const Parameters& params, const ModelBatch& batch) {
  config.validate();
  validate_batch(config, batch);
  const Slots s = resolve(params, config);
  const Rows rows = make_rows(config, batch, true);
  EncoderCache cache;
  encoder_forward(config, params, s, batch, rows, cache);
  const std::size_t B = batch.size(), T = config.max_len, H = config.heads;
  EncoderTrace trace;
  for (const auto& lc : cache.layers) {
    std::vector<double> full(B * H * T * T, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& Q = rows.queries[b];
      const auto& K = rows.keys[b];
      for (std::size_t h = 0; h < H; ++h) {
        const double* P = lc.probs.data() + lc.prob_offset[b * H + h];
        for (std::size_t qi = 0; qi < Q.size(); ++qi) {
          for (std::size_t kj = 0; kj < K.size(); ++kj) {
            full[((b * H + h) * T + rows.position[Q[qi]]) * T + rows.position[K[kj]]] = P[qi * K.size() + kj];
          }
        }
      }
    }
    trace.attention.push_back(std::move(full));
  }
  trace.normalized.push_back(cache.emb_norm.xhat);
  for (const auto& lc : cache.layers) {
    trace.normalized.push_back(lc.attn_norm.xhat);
    trace.normalized.push_back(lc.ffn_norm.xhat);
  }
  trace.hidden = cache.hidden;
  return trace;
}

std::vector<std::size_t> predict_classes(const Logits& logits) {
  std::vector<std::size_t> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const double* row = logits.values.data() + r * logits.cols;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + logits.cols) - row);
  }
  return out;
}

std::vector<SpanPrediction> predict_spans(const Logits& logits, const ModelBatch& batch,
                                          std::size_t max_answer_tokens) {
  if (logits.head != Head::Span) throw std::invalid_argument("span prediction needs span logits");
  std::vector<SpanPrediction> out(logits.rows);
  for (std::size_t b = 0; b < logits.rows; ++b) {
    const auto& enc = batch.inputs.at(b);
    const bool has_pair = std::any_of(enc.segment_ids.begin(), enc.segment_ids.end(), [](auto s) { return s == 1; });
    std::vector<std::size_t> cand;
    for (std::size_t t = 0; t < logits.cols; ++t) {
      if (!enc.word_index[t]) continue;
      if (has_pair && enc.segment_ids[t] != 1) continue;
      cand.push_back(t);
    }
    double best = kNegInf;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      for (std::size_t j = i; j < cand.size() && cand[j] < cand[i] + max_answer_tokens; ++j) {
        const double score = logits.values[b * logits.cols + cand[i]] + logits.end_values[b * logits.cols + cand[j]];
        if (score > best) {
          best = score;
          out[b] = {cand[i], cand[j]};
        }
      }
    }
  }
  return out;
}

}  // namespace codemix

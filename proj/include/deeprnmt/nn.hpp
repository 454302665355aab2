#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "deeprnmt/tensor.hpp"

namespace deeprnmt {

using Mask = std::vector<uint8_t>;  // 1 = real token, 0 = padding

struct AffineParams {
  Tensor W;  // [in x out]
  Tensor b;  // [out]
};

struct LayerNormParams {
  Tensor gain;  // [d]
  Tensor bias;  // [d]
  Real epsilon = Real(1e-5);
};

// Normalizes over the last axis with population variance:
// (x - mean) / sqrt(var + eps) * gain + bias. Accepts vectors or matrices
// (each row normalized independently).
inline Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  if (x.rank() != 1 && x.rank() != 2)
    throw DimError("layer_norm: expects a vector or matrix, got " + shape_str(x.shape()));
  const int64_t d = x.shape().back();
  if (p.gain.numel() != d || p.bias.numel() != d)
    throw DimError("layer_norm: params sized " + shape_str(p.gain.shape()) +
                   " do not match feature extent " + std::to_string(d));
  const int64_t rows = x.numel() / d;
  const Real eps = p.epsilon;

  Tensor out = Tensor::zeros(x.shape());
  std::vector<Real> xhat(static_cast<size_t>(rows * d));
  std::vector<Real> inv_sigma(static_cast<size_t>(rows));
  const Real* xv = x.values().data();
  const Real* gv = p.gain.values().data();
  const Real* bv = p.bias.values().data();
  Real* ov = out.values().data();
  for (int64_t r = 0; r < rows; ++r) {
    const Real* xr = xv + r * d;
    Real mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Real>(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      Real xh = (xr[j] - mu) * is;
      xhat[static_cast<size_t>(r * d + j)] = xh;
      ov[r * d + j] = xh * gv[j] + bv[j];
    }
  }

  detail::record(out, "layer_norm",
                 [d, rows, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
                     Tape::Node& n) {
                   const Real* g = n.out.data()->g.data();
                   const Real* gv2 = n.in[1].values().data();
                   for (int64_t r = 0; r < rows; ++r) {
                     const Real* gr = g + r * d;
                     const Real* xh = xhat.data() + r * d;
                     if (n.in[1].requires_grad()) {
                       Real* gg = n.in[1].grad().data();
                       for (int64_t j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                     }
                     if (n.in[2].requires_grad()) {
                       Real* gb = n.in[2].grad().data();
                       for (int64_t j = 0; j < d; ++j) gb[j] += gr[j];
                     }
                     if (n.in[0].requires_grad()) {
                       Real* gx = n.in[0].grad().data() + r * d;
                       Real mean_gy = 0, mean_gyxh = 0;
                       for (int64_t j = 0; j < d; ++j) {
                         Real gy = gr[j] * gv2[j];
                         mean_gy += gy;
                         mean_gyxh += gy * xh[j];
                       }
                       mean_gy /= static_cast<Real>(d);
                       mean_gyxh /= static_cast<Real>(d);
                       const Real is = inv_sigma[static_cast<size_t>(r)];
                       for (int64_t j = 0; j < d; ++j) {
                         Real gy = gr[j] * gv2[j];
                         gx[j] += (gy - mean_gy - xh[j] * mean_gyxh) * is;
                       }
                     }
                   }
                 },
                 x, p.gain, p.bias);
  return out;
}

// Applies a contribution-level layer norm when params are present.
inline Tensor maybe_layer_norm(const Tensor& x, const std::optional<LayerNormParams>& p) {
  return p ? layer_norm(x, *p) : x;
}

// Row token_id of the embedding table; backward scatters into that row only.
inline Tensor embed(const Tensor& table, int64_t token_id) {
  if (table.rank() != 2)
    throw DimError("embed: table must be a matrix, got " + shape_str(table.shape()));
  if (token_id < 0 || token_id >= table.extent(0))
    throw std::out_of_range("embed: token id " + std::to_string(token_id) +
                            " out of range for vocabulary of size " +
                            std::to_string(table.extent(0)));
  const int64_t e = table.extent(1);
  Tensor out = Tensor::zeros({e});
  const Real* tv = table.values().data() + token_id * e;
  Real* ov = out.values().data();
  for (int64_t j = 0; j < e; ++j) ov[j] = tv[j];
  detail::record(out, "embed",
                 [token_id, e](Tape::Node& n) {
                   if (!n.in[0].requires_grad()) return;
                   const Real* g = n.out.data()->g.data();
                   Real* gt = n.in[0].grad().data() + token_id * e;
                   for (int64_t j = 0; j < e; ++j) gt[j] += g[j];
                 },
                 table);
  return out;
}

// Softmax over the unmasked entries; masked entries are exactly zero in the
// output and never touch the max or the normalizer.
inline Tensor masked_softmax(const Tensor& scores, const Mask& mask) {
  if (scores.rank() != 1)
    throw DimError("masked_softmax: expects a vector, got " + shape_str(scores.shape()));
  const int64_t n = scores.extent(0);
  if (static_cast<int64_t>(mask.size()) != n)
    throw DimError("masked_softmax: mask length " + std::to_string(mask.size()) +
                   " does not match " + shape_str(scores.shape()));
  const Real* sv = scores.values().data();
  Real mx = 0;
  bool any = false;
  for (int64_t i = 0; i < n; ++i)
    if (mask[static_cast<size_t>(i)]) {
      mx = any ? std::max(mx, sv[i]) : sv[i];
      any = true;
    }
  if (!any) throw std::invalid_argument("masked_softmax: all positions are masked");

  Tensor out = Tensor::zeros(scores.shape());
  Real* ov = out.values().data();
  Real z = 0;
  for (int64_t i = 0; i < n; ++i)
    if (mask[static_cast<size_t>(i)]) {
      ov[i] = std::exp(sv[i] - mx);
      z += ov[i];
    }
  for (int64_t i = 0; i < n; ++i)
    if (mask[static_cast<size_t>(i)]) ov[i] /= z;

  detail::record(out, "masked_softmax",
                 [mask, n](Tape::Node& nd) {
                   if (!nd.in[0].requires_grad()) return;
                   const Real* g = nd.out.data()->g.data();
                   const Real* w = nd.out.values().data();
                   Real* gs = nd.in[0].grad().data();
                   Real dot = 0;
                   for (int64_t i = 0; i < n; ++i)
                     if (mask[static_cast<size_t>(i)]) dot += g[i] * w[i];
                   for (int64_t i = 0; i < n; ++i)
                     if (mask[static_cast<size_t>(i)]) gs[i] += w[i] * (g[i] - dot);
                 },
                 scores);
  return out;
}

inline Tensor softmax(const Tensor& scores) {
  return masked_softmax(scores, Mask(static_cast<size_t>(scores.numel()), 1));
}

// Numerically stable log softmax over a vector.
inline Tensor log_softmax(const Tensor& x) {
  if (x.rank() != 1)
    throw DimError("log_softmax: expects a vector, got " + shape_str(x.shape()));
  const int64_t n = x.extent(0);
  const Real* xv = x.values().data();
  Real mx = xv[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xv[i]);
  Real z = 0;
  for (int64_t i = 0; i < n; ++i) z += std::exp(xv[i] - mx);
  const Real lz = std::log(z) + mx;
  Tensor out = Tensor::zeros(x.shape());
  Real* ov = out.values().data();
  for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] - lz;
  detail::record(out, "log_softmax",
                 [n](Tape::Node& nd) {
                   if (!nd.in[0].requires_grad()) return;
                   const Real* g = nd.out.data()->g.data();
                   const Real* y = nd.out.values().data();
                   Real* gx = nd.in[0].grad().data();
                   Real gsum = 0;
                   for (int64_t i = 0; i < n; ++i) gsum += g[i];
                   for (int64_t i = 0; i < n; ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
                 },
                 x);
  return out;
}

// Weighted sum of the unmasked rows of C: sum_i w_i * C_i. Masked rows are
// skipped outright, so their contents cannot perturb the result even at the
// bit level.
inline Tensor weighted_rows(const Tensor& weights, const Tensor& C, const Mask& mask) {
  if (weights.rank() != 1 || C.rank() != 2 || weights.extent(0) != C.extent(0))
    throw DimError("weighted_rows: shapes " + shape_str(weights.shape()) + " and " +
                   shape_str(C.shape()) + " do not agree");
  const int64_t n = C.extent(0), k = C.extent(1);
  if (static_cast<int64_t>(mask.size()) != n)
    throw DimError("weighted_rows: mask length mismatch");
  Tensor out = Tensor::zeros({k});
  const Real* wv = weights.values().data();
  const Real* cv = C.values().data();
  Real* ov = out.values().data();
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const Real w = wv[i];
    const Real* ci = cv + i * k;
    for (int64_t j = 0; j < k; ++j) ov[j] += w * ci[j];
  }
  detail::record(out, "weighted_rows",
                 [mask, n, k](Tape::Node& nd) {
                   const Real* g = nd.out.data()->g.data();
                   const Real* wv2 = nd.in[0].values().data();
                   const Real* cv2 = nd.in[1].values().data();
                   for (int64_t i = 0; i < n; ++i) {
                     if (!mask[static_cast<size_t>(i)]) continue;
                     if (nd.in[0].requires_grad()) {
                       Real acc = 0;
                       const Real* ci = cv2 + i * k;
                       for (int64_t j = 0; j < k; ++j) acc += g[j] * ci[j];
                       nd.in[0].grad()[static_cast<size_t>(i)] += acc;
                     }
                     if (nd.in[1].requires_grad()) {
                       Real* gc = nd.in[1].grad().data() + i * k;
                       for (int64_t j = 0; j < k; ++j) gc[j] += wv2[i] * g[j];
                     }
                   }
                 },
                 weights, C);
  return out;
}

// ---- attention ----

struct AttentionParams {
  Tensor W_state;  // [H_dec x A]
  Tensor W_ann;    // [ann_width x A]
  Tensor b;        // [A]
  Tensor v;        // [A]
  std::optional<LayerNormParams> ln_state;  // over the state contribution
  std::optional<LayerNormParams> ln_ann;    // over the annotation contribution
};

// Annotation-side projection, computable once per sentence:
// rows ln?(C_i * W_ann + b).
inline Tensor attention_project(const AttentionParams& p, const Tensor& annotations) {
  Tensor proj = add(matmul(annotations, p.W_ann), p.b);
  return maybe_layer_norm(proj, p.ln_ann);
}

struct AttentionResult {
  Tensor context;  // [ann_width]
  Tensor weights;  // [N]
};

// score_i = v . tanh(W_state s + W_ann C_i + b), masked softmax, then the
// convex combination of unmasked annotations.
inline AttentionResult attention_with(const AttentionParams& p, const Tensor& projected,
                                      const Tensor& annotations, const Mask& mask,
                                      const Tensor& state) {
  Tensor q = maybe_layer_norm(matmul(state, p.W_state), p.ln_state);
  Tensor scores = matmul(tanh(add(projected, q)), p.v);
  Tensor weights = masked_softmax(scores, mask);
  Tensor context = weighted_rows(weights, annotations, mask);
  return {context, weights};
}

inline AttentionResult attention(const AttentionParams& p, const Tensor& annotations,
                                 const Mask& mask, const Tensor& state) {
  return attention_with(p, attention_project(p, annotations), annotations, mask, state);
}

// ---- output network ----

struct OutputLayerParams {
  AffineParams affine;
  std::optional<LayerNormParams> ln;
};

struct OutputNetParams {
  std::vector<OutputLayerParams> hidden;  // depth >= 1 tanh layers
  AffineParams proj;                      // final projection to vocabulary logits
};

enum class OutputInputs { Full, StateOnly };

// logits = proj(tanh-MLP([state; prev embedding; context])). With StateOnly
// the MLP consumes the decoder state alone.
inline Tensor output_logits(const OutputNetParams& p, const Tensor& state,
                            const Tensor& prev_emb, const Tensor& context,
                            OutputInputs inputs = OutputInputs::Full) {
  Tensor x = inputs == OutputInputs::Full ? concat(concat(state, prev_emb), context) : state;
  for (const OutputLayerParams& layer : p.hidden)
    x = tanh(maybe_layer_norm(add(matmul(x, layer.affine.W), layer.affine.b), layer.ln));
  return add(matmul(x, p.proj.W), p.proj.b);
}

}  // namespace deeprnmt

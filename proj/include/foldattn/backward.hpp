#pragma once

// Reverse-mode derivatives of the forward ops. Backward functions recompute
// the forward intermediates they need from the layer inputs (no tape).

#include <vector>

#include "foldattn/attention.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/tensor.hpp"

namespace foldattn {

template <typename T>
Tensor<T> column_sums(const Tensor<T>& x) {
  Tensor<T> out({x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c];
  }
  return out;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;  // absent when the layer has no bias
};

/// For y = x*w (+ b): dx = dy*w^T, dw = x^T*dy, db = colsum(dy).
template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, bool has_bias,
                               const Tensor<T>& dy) {
  LinearGrads<T> g{matmul_nt(dy, w), matmul_tn(x, dy), {}};
  if (has_bias) g.bias = column_sums(dy);
  return g;
}

template <typename T>
struct LayerNormGrads {
  Tensor<T> input;
  Tensor<T> gain;
  Tensor<T> shift;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain,
                                      const Tensor<T>& dy, T eps) {
  const std::size_t c = x.cols();
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>({c}), Tensor<T>({c})};
  std::vector<T> xhat(c), dxhat(c);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    const auto dyr = dy.row(r);
    T mean = 0;
    for (T v : xr) mean += v;
    mean /= T(c);
    T var = 0;
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= T(c);
    const T inv_std = T(1) / std::sqrt(var + eps);
    T mean_dxhat = 0, mean_dxhat_xhat = 0;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[j] = (xr[j] - mean) * inv_std;
      dxhat[j] = dyr[j] * gain[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat[j];
      g.gain[j] += dyr[j] * xhat[j];
      g.shift[j] += dyr[j];
    }
    mean_dxhat /= T(c);
    mean_dxhat_xhat /= T(c);
    auto dxr = g.input.row(r);
    for (std::size_t j = 0; j < c; ++j)
      dxr[j] = inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
  }
  return g;
}

/// Gradient w.r.t. logits given softmax output p and dL/dp.
/// Positions with p == 0 (masked) get exactly zero.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp) {
  Tensor<T> out(p.shape());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto pr = p.row(r);
    const auto dpr = dp.row(r);
    T dot = 0;
    for (std::size_t j = 0; j < pr.size(); ++j) dot += pr[j] * dpr[j];
    auto o = out.row(r);
    for (std::size_t j = 0; j < pr.size(); ++j) o[j] = pr[j] == T(0) ? T(0) : pr[j] * (dpr[j] - dot);
  }
  return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& pre, const Tensor<T>& dy, Activation kind) {
  Tensor<T> out = dy;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T d = kind == Activation::relu ? (pre[i] > T(0) ? T(1) : T(0)) : gelu_derivative(pre[i]);
    out[i] *= d;
  }
  return out;
}

template <typename T>
struct AttendGrads {
  Tensor<T> q, k, v;
};

template <typename T>
AttendGrads<T> attend_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionMask& mask, std::size_t heads,
                               const Tensor<T>& dctx) {
  const auto probs = attention_probs(q, k, mask, heads);
  const std::size_t dh = q.cols() / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  AttendGrads<T> g{Tensor<T>(q.shape()), Tensor<T>(k.shape()), Tensor<T>(v.shape())};
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * dh, hi = lo + dh;
    const Tensor<T> dctx_h = slice_cols(dctx, lo, hi);
    const Tensor<T> vh = slice_cols(v, lo, hi);
    assign_cols(g.v, lo, matmul_tn(probs[h], dctx_h));
    const Tensor<T> dlogits = scale(softmax_backward(probs[h], matmul_nt(dctx_h, vh)), inv_sqrt);
    assign_cols(g.q, lo, matmul(dlogits, slice_cols(k, lo, hi)));
    assign_cols(g.k, lo, matmul_tn(dlogits, slice_cols(q, lo, hi)));
  }
  return g;
}

/// Input gradient plus parameter gradients shaped like LayerParams; blocks a
/// sub-layer does not touch are zero.
template <typename T>
struct LayerBackward {
  Tensor<T> input_grad;
  LayerParams<T> param_grads;
};

template <typename T>
LayerBackward<T> mha_backward(const Tensor<T>& x, const LayerParams<T>& p,
                              const AttentionMask& mask, std::size_t heads, const Tensor<T>& dy) {
  const bool bias = !p.bq.empty();
  const Tensor<T> q = linear(x, p.wq, p.bq);
  const Tensor<T> k = linear(x, p.wk, p.bk);
  const Tensor<T> v = linear(x, p.wv, p.bv);
  const Tensor<T> ctx = attend(q, k, v, mask, heads);

  LayerBackward<T> out{{}, LayerParams<T>::zeros_like(p)};
  auto go = linear_backward(ctx, p.wo, bias, dy);
  out.param_grads.wo = std::move(go.weight);
  if (bias) out.param_grads.bo = std::move(go.bias);

  const auto ga = attend_backward(q, k, v, mask, heads, go.input);
  auto gq = linear_backward(x, p.wq, bias, ga.q);
  auto gk = linear_backward(x, p.wk, bias, ga.k);
  auto gv = linear_backward(x, p.wv, bias, ga.v);
  out.param_grads.wq = std::move(gq.weight);
  out.param_grads.wk = std::move(gk.weight);
  out.param_grads.wv = std::move(gv.weight);
  if (bias) {
    out.param_grads.bq = std::move(gq.bias);
    out.param_grads.bk = std::move(gk.bias);
    out.param_grads.bv = std::move(gv.bias);
  }
  out.input_grad = std::move(gq.input);
  add_inplace(out.input_grad, gk.input);
  add_inplace(out.input_grad, gv.input);
  return out;
}

template <typename T>
LayerBackward<T> ffn_backward(const Tensor<T>& x, const LayerParams<T>& p, Activation act,
                              const Tensor<T>& dy) {
  const bool bias = !p.ffn_b1.empty();
  const Tensor<T> pre = linear(x, p.ffn_w1, p.ffn_b1);
  LayerBackward<T> out{{}, LayerParams<T>::zeros_like(p)};
  auto g2 = linear_backward(activation(pre, act), p.ffn_w2, bias, dy);
  auto g1 = linear_backward(x, p.ffn_w1, bias, activation_backward(pre, g2.input, act));
  out.param_grads.ffn_w2 = std::move(g2.weight);
  out.param_grads.ffn_w1 = std::move(g1.weight);
  if (bias) {
    out.param_grads.ffn_b2 = std::move(g2.bias);
    out.param_grads.ffn_b1 = std::move(g1.bias);
  }
  out.input_grad = std::move(g1.input);
  return out;
}

namespace detail {

template <typename T>
void accumulate_params(LayerParams<T>& into, const LayerParams<T>& from) {
  auto dst = into.blocks();
  auto src = from.blocks();
  for (std::size_t i = 0; i < dst.size(); ++i) add_inplace(*dst[i].second, *src[i].second);
}

/// Backward of layer_core_forward on rows of width spec.embed_dim.
template <typename T>
LayerBackward<T> layer_core_backward(const Tensor<T>& x, const LayerParams<T>& p,
                                     const AttentionMask& mask, const LayerSpec& spec,
                                     const Tensor<T>& dout) {
  check_params(spec, p);
  const T eps = T(kLayerNormEps);
  const bool norm = spec.use_norm;
  const Tensor<T> h1 = maybe_norm(x, p.ln1_gain, p.ln1_shift);
  const Tensor<T> y = add(x, mha_forward(h1, p, mask, spec.heads));
  const Tensor<T> h2 = maybe_norm(y, p.ln2_gain, p.ln2_shift);

  LayerBackward<T> out{{}, LayerParams<T>::zeros_like(p)};

  // out = y + ffn(ln2(y))
  auto gf = ffn_backward(h2, p, spec.activation, dout);
  accumulate_params(out.param_grads, gf.param_grads);
  Tensor<T> dy = dout;
  if (norm) {
    auto gn = layer_norm_backward(y, p.ln2_gain, gf.input_grad, eps);
    out.param_grads.ln2_gain = std::move(gn.gain);
    out.param_grads.ln2_shift = std::move(gn.shift);
    add_inplace(dy, gn.input);
  } else {
    add_inplace(dy, gf.input_grad);
  }

  // y = x + mha(ln1(x))
  auto gm = mha_backward(h1, p, mask, spec.heads, dy);
  accumulate_params(out.param_grads, gm.param_grads);
  out.input_grad = dy;
  if (norm) {
    auto gn = layer_norm_backward(x, p.ln1_gain, gm.input_grad, eps);
    out.param_grads.ln1_gain = std::move(gn.gain);
    out.param_grads.ln1_shift = std::move(gn.shift);
    add_inplace(out.input_grad, gn.input);
  } else {
    add_inplace(out.input_grad, gm.input_grad);
  }
  return out;
}

}  // namespace detail

/// Adjoint of fold is unfold and vice versa; both are reshapes.
template <typename T>
Tensor<T> fold_backward(const Tensor<T>& dy, std::size_t n) {
  return unfold(dy, n);
}

template <typename T>
Tensor<T> unfold_backward(const Tensor<T>& dy, std::size_t n) {
  return fold(dy, n);
}

template <typename T>
LayerBackward<T> attention_layer_backward(const Tensor<T>& x, const LayerParams<T>& params,
                                          const AttentionMask& mask, const LayerSpec& spec,
                                          const Tensor<T>& dy) {
  if (spec.kind != LayerKind::standard)
    throw std::invalid_argument("attention_layer_backward needs a standard layer spec");
  return detail::layer_core_backward(x, params, mask, spec, dy);
}

template <typename T>
LayerBackward<T> folding_layer_backward(const Tensor<T>& x, const FoldingLayerParams<T>& params,
                                        const AttentionMask& mask, const LayerSpec& spec,
                                        const Tensor<T>& dy) {
  const std::size_t n = spec.folding_factor;
  auto g = detail::layer_core_backward(fold(x, n), params.inner, expand_mask(mask, n), spec,
                                       unfold_backward(dy, n));
  g.input_grad = fold_backward(g.input_grad, n);
  return g;
}

template <typename T>
LayerBackward<T> layer_backward(const LayerSpec& spec, const LayerParams<T>& params,
                                const Tensor<T>& x, const AttentionMask& mask,
                                const Tensor<T>& dy) {
  const std::size_t n = spec.folding_factor;
  auto g = detail::layer_core_backward(fold(x, n), params, expand_mask(mask, n), spec,
                                       unfold_backward(dy, n));
  g.input_grad = fold_backward(g.input_grad, n);
  return g;
}

template <typename T>
LayerBackward<T> layer_backward(const Layer<T>& layer, const Tensor<T>& x,
                                const AttentionMask& mask, const Tensor<T>& dy) {
  return layer_backward(layer.spec, layer.params, x, mask, dy);
}

}  // namespace foldattn

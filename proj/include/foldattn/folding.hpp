#pragma once

// Folding attention: split every token into N sub-tokens of width D/N, run a
// narrow attention layer (attention + FFN, residuals and norms included) on
// the N*T sub-tokens, then concatenate each group of N back into one token.

#include <cstdint>
#include <string>
#include <vector>

#include "foldattn/attention.hpp"
#include "foldattn/tensor.hpp"

namespace foldattn {

/// [T x D] -> [(n*T) x (D/n)], parent-major sub-token order.
template <typename T>
Tensor<T> fold(const Tensor<T>& x, std::size_t n) {
  return split_channels(x, n);
}

/// [(n*T) x (D/n)] -> [T x D]; exact inverse of fold.
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, std::size_t n) {
  return concat_channels(x, n);
}

/// Lifts a token mask to sub-tokens: (t,i) may attend (u,j) iff mask(t,u).
inline AttentionMask expand_mask(const AttentionMask& mask, std::size_t n) {
  if (n == 0) throw DimensionError("folding factor must be >= 1");
  if (n == 1) return mask;
  return AttentionMask::from_predicate(mask.queries() * n, mask.keys() * n,
                                       [&](std::size_t q, std::size_t k) {
                                         return mask.allowed(q / n, k / n);
                                       });
}

/// Folding spec paired with a standard one: width, FFN width and head count
/// all shrink by n, so head width is unchanged. n == 1 returns `std` as is.
inline LayerSpec derive_folding_spec(const LayerSpec& std_spec, std::size_t n) {
  std_spec.validate();
  if (std_spec.kind != LayerKind::standard)
    throw std::invalid_argument("derive_folding_spec expects a standard layer spec");
  if (n == 0) throw DimensionError("folding factor must be >= 1");
  if (n == 1) return std_spec;
  if (std_spec.embed_dim % n) throw DivisibilityError("embed_dim", std_spec.embed_dim, n);
  if (std_spec.ffn_dim % n) throw DivisibilityError("ffn_dim", std_spec.ffn_dim, n);
  if (std_spec.heads % n) throw DivisibilityError("heads", std_spec.heads, n);
  LayerSpec out = std_spec;
  out.kind = LayerKind::folding;
  out.embed_dim /= n;
  out.ffn_dim /= n;
  out.heads /= n;
  out.folding_factor = n;
  out.validate();
  return out;
}

/// Inner (sub-token width) parameters of a folding layer.
template <typename T>
struct FoldingLayerParams {
  LayerParams<T> inner;
  std::size_t folding_factor = 1;

  bool operator==(const FoldingLayerParams&) const = default;
};

template <typename T>
FoldingLayerParams<T> init_folding_params(const LayerSpec& spec, std::uint64_t seed) {
  return {init_params<T>(spec, seed), spec.folding_factor};
}

/// unfold(layer(fold(x), expand_mask(mask))). `spec` carries the inner dims.
template <typename T>
Tensor<T> folding_layer_forward(const Tensor<T>& x, const FoldingLayerParams<T>& params,
                                const AttentionMask& mask, const LayerSpec& spec) {
  if (params.folding_factor != spec.folding_factor)
    throw DimensionError("folding params built for n=" + std::to_string(params.folding_factor) +
                         ", spec says n=" + std::to_string(spec.folding_factor));
  const std::size_t n = spec.folding_factor;
  if (mask.queries() != x.rows() || mask.keys() != x.rows())
    throw DimensionError("mask does not match the " + std::to_string(x.rows()) +
                         "-token input");
  return unfold(detail::layer_core_forward(fold(x, n), params.inner, expand_mask(mask, n), spec),
                n);
}

/// A layer of either kind: spec plus (inner) parameters.
template <typename T>
struct Layer {
  LayerSpec spec;
  LayerParams<T> params;

  bool operator==(const Layer&) const = default;
};

template <typename T>
Layer<T> make_layer(const LayerSpec& spec, std::uint64_t seed) {
  return {spec, init_params<T>(spec, seed)};
}

/// Forward for a layer of either kind; folding layers fold/unfold around the
/// inner block and lift the mask to sub-tokens.
template <typename T>
Tensor<T> layer_forward(const LayerSpec& spec, const LayerParams<T>& params, const Tensor<T>& x,
                        const AttentionMask& mask) {
  if (spec.kind == LayerKind::standard) return attention_layer_forward(x, params, mask, spec);
  const std::size_t n = spec.folding_factor;
  if (mask.queries() != x.rows() || mask.keys() != x.rows())
    throw DimensionError("mask does not match the " + std::to_string(x.rows()) +
                         "-token input");
  return unfold(detail::layer_core_forward(fold(x, n), params, expand_mask(mask, n), spec), n);
}

template <typename T>
Tensor<T> layer_forward(const Layer<T>& layer, const Tensor<T>& x, const AttentionMask& mask) {
  return layer_forward(layer.spec, layer.params, x, mask);
}

}  // namespace foldattn

#pragma once

// Standard attention layer: multi-head self-attention followed by a
// feedforward network, wired as pre-norm residual blocks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "foldattn/random.hpp"
#include "foldattn/tensor.hpp"

namespace foldattn {

inline constexpr double kLayerNormEps = 1e-5;

enum class LayerKind { standard, folding };

inline std::string_view to_string(LayerKind kind) {
  return kind == LayerKind::standard ? "standard" : "folding";
}
inline std::string_view to_string(Activation kind) {
  return kind == Activation::relu ? "relu" : "gelu";
}

/// Declarative description of one attention layer.
///
/// For folding layers `embed_dim`, `ffn_dim` and `heads` describe the inner
/// layer that runs on sub-tokens; the layer consumes and produces tokens of
/// width `model_dim() = embed_dim * folding_factor`.
struct LayerSpec {
  LayerKind kind = LayerKind::standard;
  std::size_t embed_dim = 0;
  std::size_t ffn_dim = 0;
  std::size_t heads = 1;
  std::size_t folding_factor = 1;
  Activation activation = Activation::relu;
  bool use_bias = true;
  bool use_norm = true;

  std::size_t model_dim() const noexcept { return embed_dim * folding_factor; }
  std::size_t head_dim() const noexcept { return heads ? embed_dim / heads : 0; }

  void validate() const {
    if (embed_dim == 0 || ffn_dim == 0 || heads == 0 || folding_factor == 0)
      throw DimensionError("layer spec dimensions must be positive");
    if (kind == LayerKind::standard && folding_factor != 1)
      throw DimensionError("standard layer must have folding_factor 1, got " +
                           std::to_string(folding_factor));
    if (embed_dim % heads != 0) throw DivisibilityError("embed_dim", embed_dim, heads);
  }

  bool operator==(const LayerSpec&) const = default;
};

inline LayerSpec standard_spec(std::size_t d, std::size_t f, std::size_t h,
                               Activation act = Activation::relu, bool use_bias = true,
                               bool use_norm = true) {
  return LayerSpec{LayerKind::standard, d, f, h, 1, act, use_bias, use_norm};
}

// ---------------------------------------------------------------------------

/// Boolean [queries x keys] matrix, true where attention is allowed.
/// Every query row must allow at least one key.
class AttentionMask {
 public:
  AttentionMask() = default;

  AttentionMask(std::size_t queries, std::size_t keys, std::vector<std::uint8_t> allowed)
      : queries_(queries), keys_(keys), allowed_(std::move(allowed)) {
    if (allowed_.size() != queries_ * keys_)
      throw DimensionError("mask data does not match " + std::to_string(queries_) + "x" +
                           std::to_string(keys_));
    for (std::size_t q = 0; q < queries_; ++q) {
      bool any = false;
      for (std::size_t k = 0; k < keys_; ++k) any = any || allowed_[q * keys_ + k] != 0;
      if (!any)
        throw DimensionError("mask row " + std::to_string(q) + " allows no keys");
    }
  }

  static AttentionMask from_predicate(std::size_t queries, std::size_t keys,
                                      const std::function<bool(std::size_t, std::size_t)>& pred) {
    std::vector<std::uint8_t> allowed(queries * keys);
    for (std::size_t q = 0; q < queries; ++q)
      for (std::size_t k = 0; k < keys; ++k) allowed[q * keys + k] = pred(q, k) ? 1 : 0;
    return AttentionMask(queries, keys, std::move(allowed));
  }

  static AttentionMask full(std::size_t queries, std::size_t keys) {
    return AttentionMask(queries, keys, std::vector<std::uint8_t>(queries * keys, 1));
  }
  static AttentionMask full(std::size_t tokens) { return full(tokens, tokens); }

  static AttentionMask causal(std::size_t tokens) {
    return from_predicate(tokens, tokens, [](auto q, auto k) { return k <= q; });
  }

  static AttentionMask diagonal(std::size_t tokens) {
    return from_predicate(tokens, tokens, [](auto q, auto k) { return k == q; });
  }

  /// Each token attends to every token of its own chunk plus the
  /// `left_context` tokens preceding that chunk.
  static AttentionMask block_causal(std::size_t tokens, std::size_t chunk_size,
                                    std::size_t left_context) {
    if (chunk_size == 0) throw DimensionError("chunk_size must be >= 1");
    return from_predicate(tokens, tokens, [=](std::size_t q, std::size_t k) {
      const std::size_t start = (q / chunk_size) * chunk_size;
      const std::size_t end = start + chunk_size;
      const std::size_t first = start >= left_context ? start - left_context : 0;
      return k >= first && k < end;
    });
  }

  std::size_t queries() const noexcept { return queries_; }
  std::size_t keys() const noexcept { return keys_; }
  bool allowed(std::size_t q, std::size_t k) const { return allowed_[q * keys_ + k] != 0; }

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allowed_;
};

// ---------------------------------------------------------------------------

template <typename T>
struct LayerParams {
  Tensor<T> wq, wk, wv, wo;  // D x D
  Tensor<T> bq, bk, bv, bo;  // D, absent when biases are off
  Tensor<T> ffn_w1;          // D x F
  Tensor<T> ffn_b1;          // F
  Tensor<T> ffn_w2;          // F x D
  Tensor<T> ffn_b2;          // D
  Tensor<T> ln1_gain, ln1_shift, ln2_gain, ln2_shift;  // D, absent when norms are off

  using Block = std::pair<std::string_view, Tensor<T>*>;
  using ConstBlock = std::pair<std::string_view, const Tensor<T>*>;

  /// Present parameter blocks in a fixed order.
  std::vector<Block> blocks() {
    std::vector<Block> out;
    for (auto [name, ptr] : all_blocks())
      if (!ptr->empty()) out.emplace_back(name, ptr);
    return out;
  }

  std::vector<ConstBlock> blocks() const {
    std::vector<ConstBlock> out;
    for (auto [name, ptr] : const_cast<LayerParams*>(this)->all_blocks())
      if (!ptr->empty()) out.emplace_back(name, ptr);
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (auto [name, ptr] : blocks()) n += ptr->size();
    return n;
  }

  /// Same structure as `like`, every value zero.
  static LayerParams zeros_like(const LayerParams& like) {
    LayerParams out = like;
    for (auto [name, ptr] : out.blocks())
      for (auto& v : ptr->data()) v = T(0);
    return out;
  }

  template <typename U>
  LayerParams<U> cast() const {
    return {wq.template cast<U>(),       wk.template cast<U>(),       wv.template cast<U>(),
            wo.template cast<U>(),       bq.template cast<U>(),       bk.template cast<U>(),
            bv.template cast<U>(),       bo.template cast<U>(),       ffn_w1.template cast<U>(),
            ffn_b1.template cast<U>(),   ffn_w2.template cast<U>(),   ffn_b2.template cast<U>(),
            ln1_gain.template cast<U>(), ln1_shift.template cast<U>(), ln2_gain.template cast<U>(),
            ln2_shift.template cast<U>()};
  }

  bool operator==(const LayerParams&) const = default;

 private:
  std::vector<Block> all_blocks() {
    return {{"wq", &wq},         {"bq", &bq},         {"wk", &wk},
            {"bk", &bk},         {"wv", &wv},         {"bv", &bv},
            {"wo", &wo},         {"bo", &bo},         {"ffn_w1", &ffn_w1},
            {"ffn_b1", &ffn_b1}, {"ffn_w2", &ffn_w2}, {"ffn_b2", &ffn_b2},
            {"ln1_gain", &ln1_gain}, {"ln1_shift", &ln1_shift},
            {"ln2_gain", &ln2_gain}, {"ln2_shift", &ln2_shift}};
  }
};

namespace detail {
template <typename T>
void expect_shape(const Tensor<T>& t, const Shape& shape, const char* name) {
  if (t.shape() != shape)
    throw DimensionError(std::string("parameter ") + name + " has shape " +
                         shape_string(t.shape()) + ", expected " + shape_string(shape));
}
template <typename T>
void expect_optional(const Tensor<T>& t, bool present, std::size_t len, const char* name) {
  if (present)
    expect_shape(t, {len}, name);
  else if (!t.empty())
    throw DimensionError(std::string("parameter ") + name + " present but disabled by spec");
}
}  // namespace detail

/// Throws if `params` does not match the (inner) dimensions of `spec`.
template <typename T>
void check_params(const LayerSpec& spec, const LayerParams<T>& p) {
  spec.validate();
  const std::size_t d = spec.embed_dim, f = spec.ffn_dim;
  detail::expect_shape(p.wq, {d, d}, "wq");
  detail::expect_shape(p.wk, {d, d}, "wk");
  detail::expect_shape(p.wv, {d, d}, "wv");
  detail::expect_shape(p.wo, {d, d}, "wo");
  detail::expect_shape(p.ffn_w1, {d, f}, "ffn_w1");
  detail::expect_shape(p.ffn_w2, {f, d}, "ffn_w2");
  detail::expect_optional(p.bq, spec.use_bias, d, "bq");
  detail::expect_optional(p.bk, spec.use_bias, d, "bk");
  detail::expect_optional(p.bv, spec.use_bias, d, "bv");
  detail::expect_optional(p.bo, spec.use_bias, d, "bo");
  detail::expect_optional(p.ffn_b1, spec.use_bias, f, "ffn_b1");
  detail::expect_optional(p.ffn_b2, spec.use_bias, d, "ffn_b2");
  detail::expect_optional(p.ln1_gain, spec.use_norm, d, "ln1_gain");
  detail::expect_optional(p.ln1_shift, spec.use_norm, d, "ln1_shift");
  detail::expect_optional(p.ln2_gain, spec.use_norm, d, "ln2_gain");
  detail::expect_optional(p.ln2_shift, spec.use_norm, d, "ln2_shift");
}

/// Glorot-uniform weights, zero biases, unit norm gains.
template <typename T>
LayerParams<T> init_params(const LayerSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t d = spec.embed_dim, f = spec.ffn_dim;
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    return random_uniform<T>({fan_in, fan_out}, rng, -bound, bound);
  };
  LayerParams<T> p;
  p.wq = glorot(d, d);
  p.wk = glorot(d, d);
  p.wv = glorot(d, d);
  p.wo = glorot(d, d);
  p.ffn_w1 = glorot(d, f);
  p.ffn_w2 = glorot(f, d);
  if (spec.use_bias) {
    p.bq = Tensor<T>({d});
    p.bk = Tensor<T>({d});
    p.bv = Tensor<T>({d});
    p.bo = Tensor<T>({d});
    p.ffn_b1 = Tensor<T>({f});
    p.ffn_b2 = Tensor<T>({d});
  }
  if (spec.use_norm) {
    p.ln1_gain = Tensor<T>({d}, T(1));
    p.ln1_shift = Tensor<T>({d});
    p.ln2_gain = Tensor<T>({d}, T(1));
    p.ln2_shift = Tensor<T>({d});
  }
  return p;
}

// ---------------------------------------------------------------------------
// Attention core.

namespace detail {
template <typename T>
void check_heads(std::size_t width, std::size_t heads) {
  if (heads == 0 || width % heads != 0) throw DivisibilityError("embed_dim", width, heads);
}
}  // namespace detail

/// Row-stochastic attention probabilities, one [queries x keys] matrix per head.
template <typename T>
std::vector<Tensor<T>> attention_probs(const Tensor<T>& q, const Tensor<T>& k,
                                       const AttentionMask& mask, std::size_t heads) {
  detail::check_heads<T>(q.cols(), heads);
  if (k.cols() != q.cols())
    throw DimensionError("query/key width mismatch: " + shape_string(q.shape()) + " vs " +
                         shape_string(k.shape()));
  if (mask.queries() != q.rows() || mask.keys() != k.rows())
    throw DimensionError("mask is " + std::to_string(mask.queries()) + "x" +
                         std::to_string(mask.keys()) + ", attention needs " +
                         std::to_string(q.rows()) + "x" + std::to_string(k.rows()));
  const std::size_t dh = q.cols() / heads;
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  std::vector<Tensor<T>> probs;
  probs.reserve(heads);
  FlopKindScope kind(FlopKind::score);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> logits =
        matmul_nt(slice_cols(q, h * dh, (h + 1) * dh), slice_cols(k, h * dh, (h + 1) * dh));
    for (std::size_t i = 0; i < logits.dim(0); ++i)
      for (std::size_t j = 0; j < logits.dim(1); ++j)
        logits(i, j) = mask.allowed(i, j) ? logits(i, j) * inv_sqrt
                                          : -std::numeric_limits<T>::infinity();
    probs.push_back(softmax_lastdim(logits));
  }
  return probs;
}

/// Concatenated per-head context vectors: concat_h(probs_h * V_h).
template <typename T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                 const AttentionMask& mask, std::size_t heads) {
  if (v.rows() != k.rows() || v.cols() != q.cols())
    throw DimensionError("value shape " + shape_string(v.shape()) + " inconsistent with keys " +
                         shape_string(k.shape()));
  const auto probs = attention_probs(q, k, mask, heads);
  const std::size_t dh = q.cols() / heads;
  Tensor<T> ctx({q.rows(), q.cols()});
  FlopKindScope kind(FlopKind::score);
  for (std::size_t h = 0; h < heads; ++h)
    assign_cols(ctx, h * dh, matmul(probs[h], slice_cols(v, h * dh, (h + 1) * dh)));
  return ctx;
}

template <typename T>
Tensor<T> mha_forward(const Tensor<T>& x, const LayerParams<T>& params, const AttentionMask& mask,
                      std::size_t heads) {
  detail::require_matrix(x, "attention input");
  detail::check_heads<T>(x.cols(), heads);
  if (mask.queries() != x.rows() || mask.keys() != x.rows())
    throw DimensionError("mask is " + std::to_string(mask.queries()) + "x" +
                         std::to_string(mask.keys()) + " but input has " +
                         std::to_string(x.rows()) + " tokens");
  FlopKindScope kind(FlopKind::linear);
  const Tensor<T> q = linear(x, params.wq, params.bq);
  const Tensor<T> k = linear(x, params.wk, params.bk);
  const Tensor<T> v = linear(x, params.wv, params.bv);
  return linear(attend(q, k, v, mask, heads), params.wo, params.bo);
}

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const LayerParams<T>& params, Activation act) {
  FlopKindScope kind(FlopKind::linear);
  return linear(activation(linear(x, params.ffn_w1, params.ffn_b1), act), params.ffn_w2,
                params.ffn_b2);
}

template <typename T>
Tensor<T> ffn_forward(const Tensor<T>& x, const LayerParams<T>& params) {
  return ffn_forward(x, params, Activation::relu);
}

namespace detail {
template <typename T>
Tensor<T> maybe_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift) {
  if (gain.empty()) return x;
  return layer_norm(x, gain, shift, T(kLayerNormEps));
}

/// Pre-norm block on rows of width spec.embed_dim; shared by standard and
/// folding layers (the latter call it on sub-tokens).
template <typename T>
Tensor<T> layer_core_forward(const Tensor<T>& x, const LayerParams<T>& p,
                             const AttentionMask& mask, const LayerSpec& spec) {
  check_params(spec, p);
  if (x.cols() != spec.embed_dim)
    throw DimensionError("layer input has " + std::to_string(x.cols()) + " channels, expected " +
                         std::to_string(spec.embed_dim));
  Tensor<T> y = add(x, mha_forward(maybe_norm(x, p.ln1_gain, p.ln1_shift), p, mask, spec.heads));
  add_inplace(y, ffn_forward(maybe_norm(y, p.ln2_gain, p.ln2_shift), p, spec.activation));
  return y;
}
}  // namespace detail

/// y = x + mha(ln1(x)); out = y + ffn(ln2(y))
template <typename T>
Tensor<T> attention_layer_forward(const Tensor<T>& x, const LayerParams<T>& params,
                                  const AttentionMask& mask, const LayerSpec& spec) {
  if (spec.kind != LayerKind::standard)
    throw std::invalid_argument("attention_layer_forward needs a standard layer spec");
  return detail::layer_core_forward(x, params, mask, spec);
}

}  // namespace foldattn

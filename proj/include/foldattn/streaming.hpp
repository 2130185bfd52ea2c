#pragma once

// Chunked streaming over an encoder stack. Each token attends to its own
// chunk plus the `left_context` tokens before the chunk; per-layer key/value
// caches carry that context between calls.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "foldattn/attention.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/tensor.hpp"

namespace foldattn {

struct EncoderSpec {
  std::size_t feature_dim = 80;
  std::size_t model_dim = 0;
  std::vector<LayerSpec> layers;  // folding layers first, then standard
  std::size_t chunk_size = 8;
  std::size_t left_context = 24;

  void validate() const {
    if (feature_dim == 0 || model_dim == 0)
      throw DimensionError("encoder feature_dim and model_dim must be positive");
    if (chunk_size == 0) throw DimensionError("chunk_size must be >= 1");
    if (layers.empty()) throw std::invalid_argument("encoder has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].validate();
      if (layers[i].model_dim() != model_dim)
        throw DimensionError("layer " + std::to_string(i) + " has model width " +
                             std::to_string(layers[i].model_dim()) + ", encoder uses " +
                             std::to_string(model_dim));
    }
  }

  bool operator==(const EncoderSpec&) const = default;
};

/// `folding` folding layers derived from `std_spec`, followed by `standard`
/// copies of it.
inline EncoderSpec make_encoder_spec(const LayerSpec& std_spec, std::size_t folding,
                                     std::size_t standard, std::size_t folding_factor,
                                     std::size_t feature_dim = 80, std::size_t chunk_size = 8,
                                     std::size_t left_context = 24) {
  EncoderSpec spec;
  spec.feature_dim = feature_dim;
  spec.model_dim = std_spec.embed_dim;
  spec.chunk_size = chunk_size;
  spec.left_context = left_context;
  if (folding) spec.layers.assign(folding, derive_folding_spec(std_spec, folding_factor));
  spec.layers.insert(spec.layers.end(), standard, std_spec);
  return spec;
}

template <typename T>
struct EncoderParams {
  Tensor<T> input_w;  // feature_dim x D
  Tensor<T> input_b;  // D
  std::vector<LayerParams<T>> layers;

  std::size_t element_count() const {
    std::size_t n = input_w.size() + input_b.size();
    for (const auto& l : layers) n += l.element_count();
    return n;
  }

  bool operator==(const EncoderParams&) const = default;
};

/// Immutable model: shareable across streams and threads.
template <typename T>
struct Encoder {
  EncoderSpec spec;
  EncoderParams<T> params;
};

template <typename T>
Encoder<T> make_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Encoder<T> enc{spec, {}};
  const double bound = std::sqrt(6.0 / double(spec.feature_dim + spec.model_dim));
  enc.params.input_w = random_uniform<T>({spec.feature_dim, spec.model_dim}, rng, -bound, bound);
  enc.params.input_b = Tensor<T>({spec.model_dim});
  for (const auto& layer : spec.layers) enc.params.layers.push_back(init_params<T>(layer, rng.next()));
  return enc;
}

template <typename T>
struct KvCache {
  Tensor<T> keys;    // rows x inner width, absent while empty
  Tensor<T> values;
  std::size_t capacity = 0;  // rows: folding_factor * left_context

  std::size_t size() const noexcept { return keys.rows(); }
};

template <typename T>
struct StreamState {
  std::vector<KvCache<T>> caches;
  std::size_t tokens_processed = 0;
  bool finished = false;  // set after a short (final) chunk
};

template <typename T>
StreamState<T> init_stream(const EncoderSpec& spec) {
  spec.validate();
  StreamState<T> state;
  for (const auto& layer : spec.layers)
    state.caches.push_back({{}, {}, layer.folding_factor * spec.left_context});
  return state;
}

namespace detail {

template <typename T>
Tensor<T> keep_last_rows(const Tensor<T>& x, std::size_t count) {
  if (count == 0 || x.empty()) return {};
  if (x.rows() <= count) return x;
  return slice_rows(x, x.rows() - count, x.rows());
}

/// One layer on one chunk of rows (sub-tokens for folding layers). All chunk
/// rows see every cached row and every chunk row.
template <typename T>
Tensor<T> layer_stream_step(const Tensor<T>& x, const LayerParams<T>& p, const LayerSpec& spec,
                            KvCache<T>& cache) {
  const Tensor<T> h = maybe_norm(x, p.ln1_gain, p.ln1_shift);
  Tensor<T> keys, values, q;
  {
    FlopKindScope kind(FlopKind::linear);
    q = linear(h, p.wq, p.bq);
    keys = concat_rows(cache.keys, linear(h, p.wk, p.bk));
    values = concat_rows(cache.values, linear(h, p.wv, p.bv));
  }
  const auto mask = AttentionMask::full(x.rows(), keys.rows());
  Tensor<T> y = attend(q, keys, values, mask, spec.heads);
  {
    FlopKindScope kind(FlopKind::linear);
    y = add(x, linear(y, p.wo, p.bo));
  }
  add_inplace(y, ffn_forward(maybe_norm(y, p.ln2_gain, p.ln2_shift), p, spec.activation));
  cache.keys = keep_last_rows(keys, cache.capacity);
  cache.values = keep_last_rows(values, cache.capacity);
  return y;
}

template <typename T>
void check_frames(const EncoderSpec& spec, const Tensor<T>& frames) {
  require_matrix(frames, "frames");
  if (frames.cols() != spec.feature_dim)
    throw DimensionError("frames have " + std::to_string(frames.cols()) +
                         " features, encoder expects " + std::to_string(spec.feature_dim));
}

}  // namespace detail

/// Runs one chunk of `chunk_size` frames (a shorter final chunk is allowed and
/// ends the stream). Returns [rows x D] encoder outputs.
template <typename T>
Tensor<T> process_chunk(const Encoder<T>& enc, StreamState<T>& state, const Tensor<T>& frames) {
  const auto& spec = enc.spec;
  detail::check_frames(spec, frames);
  if (state.finished) throw std::logic_error("stream already ended with a partial chunk");
  if (state.caches.size() != spec.layers.size())
    throw std::invalid_argument("stream state was initialised for a different encoder");
  if (frames.rows() > spec.chunk_size)
    throw DimensionError("chunk has " + std::to_string(frames.rows()) + " frames, chunk_size is " +
                         std::to_string(spec.chunk_size));

  Tensor<T> x;
  {
    FlopKindScope kind(FlopKind::linear);
    x = linear(frames, enc.params.input_w, enc.params.input_b);
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& ls = spec.layers[i];
    const std::size_t n = ls.folding_factor;
    x = unfold(detail::layer_stream_step(fold(x, n), enc.params.layers[i], ls, state.caches[i]), n);
  }
  state.tokens_processed += frames.rows();
  if (frames.rows() < spec.chunk_size) state.finished = true;
  return x;
}

/// Single-shot forward under the block-causal mask implied by (chunk_size,
/// left_context). Reference for streaming equivalence.
template <typename T>
Tensor<T> offline_forward(const Encoder<T>& enc, const Tensor<T>& frames) {
  const auto& spec = enc.spec;
  spec.validate();
  detail::check_frames(spec, frames);
  const auto mask =
      AttentionMask::block_causal(frames.rows(), spec.chunk_size, spec.left_context);
  Tensor<T> x;
  {
    FlopKindScope kind(FlopKind::linear);
    x = linear(frames, enc.params.input_w, enc.params.input_b);
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    x = layer_forward(spec.layers[i], enc.params.layers[i], x, mask);
  }
  return x;
}

/// Replays `frames` through a fresh stream chunk by chunk and stacks the outputs.
template <typename T>
Tensor<T> stream_forward(const Encoder<T>& enc, const Tensor<T>& frames) {
  auto state = init_stream<T>(enc.spec);
  Tensor<T> out;
  const std::size_t c = enc.spec.chunk_size;
  for (std::size_t start = 0; start < frames.rows(); start += c) {
    const std::size_t end = std::min(frames.rows(), start + c);
    out = concat_rows(out, process_chunk(enc, state, slice_rows(frames, start, end)));
  }
  return out;
}

}  // namespace foldattn

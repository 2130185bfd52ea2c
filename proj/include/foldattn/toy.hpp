#pragma once

// Desk-scale trainability check: per-token K-class classification of noisy
// class templates with an encoder plus linear head, trained by plain
// full-batch gradient descent.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "foldattn/backward.hpp"
#include "foldattn/random.hpp"
#include "foldattn/streaming.hpp"

namespace foldattn {

struct ToyTask {
  std::uint64_t seed = 7;
  std::size_t num_classes = 4;
  std::size_t sequence_length = 16;
  std::size_t feature_dim = 16;
  double noise = 0.9;
  std::size_t train_sequences = 16;
  std::size_t eval_sequences = 16;

  bool operator==(const ToyTask&) const = default;
};

template <typename T>
struct ToySplit {
  std::vector<Tensor<T>> frames;
  std::vector<std::vector<std::size_t>> labels;
};

enum class ToySplitKind { train = 0, eval = 1 };

template <typename T>
ToySplit<T> make_toy_split(const ToyTask& task, ToySplitKind kind) {
  Rng template_rng(task.seed);
  const Tensor<double> templates =
      random_normal<double>({task.num_classes, task.feature_dim}, template_rng);
  Rng rng(task.seed * 2654435761ull + 1 + std::uint64_t(kind));
  const std::size_t count =
      kind == ToySplitKind::train ? task.train_sequences : task.eval_sequences;
  ToySplit<T> split;
  for (std::size_t s = 0; s < count; ++s) {
    Tensor<T> frames({task.sequence_length, task.feature_dim});
    std::vector<std::size_t> labels(task.sequence_length);
    for (std::size_t t = 0; t < task.sequence_length; ++t) {
      labels[t] = rng.index(task.num_classes);
      for (std::size_t f = 0; f < task.feature_dim; ++f)
        frames(t, f) = T(templates(labels[t], f) + task.noise * rng.normal());
    }
    split.frames.push_back(std::move(frames));
    split.labels.push_back(std::move(labels));
  }
  return split;
}

template <typename T>
struct Classifier {
  Encoder<T> encoder;
  Tensor<T> head_w;  // D x K
  Tensor<T> head_b;  // K

  std::size_t element_count() const {
    return encoder.params.element_count() + head_w.size() + head_b.size();
  }

  /// Every trainable block, in a fixed order.
  std::vector<Tensor<T>*> blocks() {
    std::vector<Tensor<T>*> out{&encoder.params.input_w, &encoder.params.input_b};
    for (auto& layer : encoder.params.layers)
      for (auto [name, ptr] : layer.blocks()) out.push_back(ptr);
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }
};

template <typename T>
Classifier<T> make_classifier(const EncoderSpec& spec, std::size_t num_classes,
                              std::uint64_t seed) {
  Classifier<T> c{make_encoder<T>(spec, seed), {}, Tensor<T>({num_classes})};
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  const double bound = std::sqrt(6.0 / double(spec.model_dim + num_classes));
  c.head_w = random_uniform<T>({spec.model_dim, num_classes}, rng, -bound, bound);
  return c;
}

template <typename T>
struct LossAndGrad {
  double loss = 0.0;  // mean per-token cross-entropy
  std::size_t correct = 0;
  std::size_t tokens = 0;
  std::optional<Classifier<T>> grads;  // same layout as the model
};

/// Cross-entropy over a split; gradients only when `with_grads`.
template <typename T>
LossAndGrad<T> classifier_loss(const Classifier<T>& model, const ToySplit<T>& data,
                               bool with_grads) {
  const auto& spec = model.encoder.spec;
  const auto& params = model.encoder.params;
  std::size_t total_tokens = 0;
  for (const auto& f : data.frames) total_tokens += f.rows();

  LossAndGrad<T> result;
  result.tokens = total_tokens;
  if (with_grads) {
    Classifier<T> g = model;
    for (auto* b : g.blocks())
      for (auto& v : b->data()) v = T(0);
    result.grads = std::move(g);
  }

  for (std::size_t s = 0; s < data.frames.size(); ++s) {
    const Tensor<T>& frames = data.frames[s];
    const auto mask = AttentionMask::block_causal(frames.rows(), spec.chunk_size, spec.left_context);
    std::vector<Tensor<T>> inputs;
    Tensor<T> x = linear(frames, params.input_w, params.input_b);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      inputs.push_back(x);
      x = layer_forward(spec.layers[i], params.layers[i], x, mask);
    }
    const Tensor<T> probs = softmax_lastdim(linear(x, model.head_w, model.head_b));
    Tensor<T> dlogits = probs;
    for (std::size_t t = 0; t < probs.rows(); ++t) {
      const std::size_t label = data.labels[s][t];
      result.loss -= std::log(std::max(double(probs(t, label)), 1e-300));
      std::size_t best = 0;
      for (std::size_t k = 1; k < probs.cols(); ++k)
        if (probs(t, k) > probs(t, best)) best = k;
      if (best == label) ++result.correct;
      dlogits(t, label) -= T(1);
    }
    if (!with_grads) continue;

    auto& g = *result.grads;
    dlogits = scale(dlogits, T(1) / T(total_tokens));
    auto gh = linear_backward(x, model.head_w, true, dlogits);
    add_inplace(g.head_w, gh.weight);
    add_inplace(g.head_b, gh.bias);
    Tensor<T> dx = std::move(gh.input);
    for (std::size_t i = spec.layers.size(); i-- > 0;) {
      auto gl = layer_backward(spec.layers[i], params.layers[i], inputs[i], mask, dx);
      detail::accumulate_params(g.encoder.params.layers[i], gl.param_grads);
      dx = std::move(gl.input_grad);
    }
    auto gi = linear_backward(frames, params.input_w, true, dx);
    add_inplace(g.encoder.params.input_w, gi.weight);
    add_inplace(g.encoder.params.input_b, gi.bias);
  }
  result.loss /= double(total_tokens);
  return result;
}

struct TrainStep {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // on the training split, before the update
};

struct TrainResult {
  std::vector<TrainStep> curve;  // steps + 1 entries; the last has no update after it
  double final_accuracy = 0.0;   // held-out split
  std::size_t parameters = 0;
  bool diverged = false;
  std::size_t diverged_step = 0;
};

/// Full-batch SGD. Deterministic given the seeds; lr == 0 gives a flat curve.
template <typename T>
TrainResult train_toy(const EncoderSpec& spec, const ToyTask& task, std::size_t steps, double lr,
                      std::uint64_t seed) {
  if (spec.feature_dim != task.feature_dim)
    throw DimensionError("encoder feature_dim " + std::to_string(spec.feature_dim) +
                         " does not match task feature_dim " + std::to_string(task.feature_dim));
  Classifier<T> model = make_classifier<T>(spec, task.num_classes, seed);
  const auto train = make_toy_split<T>(task, ToySplitKind::train);
  const auto eval = make_toy_split<T>(task, ToySplitKind::eval);

  TrainResult result;
  result.parameters = model.element_count();
  for (std::size_t step = 0; step <= steps; ++step) {
    const bool update = step < steps;
    auto lg = classifier_loss(model, train, update);
    result.curve.push_back({step, lg.loss, double(lg.correct) / double(lg.tokens)});
    if (!std::isfinite(lg.loss)) {
      result.diverged = true;
      result.diverged_step = step;
      return result;
    }
    if (!update) break;
    auto params = model.blocks();
    auto grads = lg.grads->blocks();
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto p = params[b]->data();
      auto g = grads[b]->data();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= T(lr) * g[i];
    }
  }
  const auto ev = classifier_loss(model, eval, false);
  result.final_accuracy = double(ev.correct) / double(ev.tokens);
  return result;
}

}  // namespace foldattn

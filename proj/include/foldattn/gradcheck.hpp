#pragma once

// Central finite-difference verification of the analytic backward passes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "foldattn/backward.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/random.hpp"

namespace foldattn {

struct GradCheckOptions {
  double step = 1e-6;
  double threshold = 1e-5;
  std::size_t samples_per_block = 200;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-3;
};

struct BlockCheck {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t argmax = 0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  bool passed = true;
  double eps = 0.0;
  double threshold = 0.0;
  std::string element_type;

  double max_rel_error() const {
    double worst = 0.0;
    for (const auto& b : blocks) worst = std::max(worst, b.max_rel_error);
    return worst;
  }
};

/// Finite differences are evaluated on an extended-precision copy of the
/// inputs so that roundoff in the oracle stays far below the threshold.
using OracleScalar = long double;

template <typename T>
struct GradBlock {
  std::string name;
  Tensor<OracleScalar>* value;  // perturbed in place, restored afterwards
  const Tensor<T>* analytic;    // same shape as *value
};

/// Coordinates to probe: all of them for small blocks, otherwise a seeded
/// sample without replacement.
inline std::vector<std::size_t> sample_coordinates(std::size_t size, std::size_t wanted,
                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size <= wanted) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < wanted; ++i) std::swap(idx[i], idx[i + rng.index(size - i)]);
  idx.resize(wanted);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Loss is the sum of squared outputs of `output()`. The central difference
/// is formed per output element as (y+ - y-)(y+ + y-), which avoids
/// cancelling two large loss totals against each other.
template <typename T>
GradCheckReport grad_check_blocks(const std::vector<GradBlock<T>>& blocks,
                                  const std::function<Tensor<OracleScalar>()>& output,
                                  const GradCheckOptions& opts) {
  GradCheckReport report;
  report.eps = opts.step;
  report.threshold = opts.threshold;
  report.element_type = std::is_same_v<T, double> ? "double" : "float";
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.value->shape() != blk.analytic->shape())
      throw DimensionError("gradient block " + blk.name + " has mismatched analytic shape");
    BlockCheck check{blk.name, blk.value->size()};
    const auto coords = sample_coordinates(blk.value->size(), opts.samples_per_block,
                                           opts.seed * 1000003ull + b);
    for (std::size_t i : coords) {
      OracleScalar& x = (*blk.value)[i];
      const OracleScalar saved = x;
      const OracleScalar hi = saved + OracleScalar(opts.step);
      const OracleScalar lo = saved - OracleScalar(opts.step);
      x = hi;
      const auto plus = output();
      x = lo;
      const auto minus = output();
      x = saved;
      OracleScalar diff = 0;
      for (std::size_t k = 0; k < plus.size(); ++k)
        diff += (plus[k] - minus[k]) * (plus[k] + minus[k]);
      const double numeric = double(diff / (hi - lo));
      const double analytic = double((*blk.analytic)[i]);
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), opts.denominator_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++check.checked;
      if (rel > check.max_rel_error || check.checked == 1) {
        check.max_rel_error = std::max(check.max_rel_error, rel);
        check.argmax = i;
        check.analytic_at_max = analytic;
        check.numeric_at_max = numeric;
      }
    }
    if (!(check.max_rel_error < opts.threshold)) report.passed = false;
    report.blocks.push_back(std::move(check));
  }
  return report;
}

template <typename T>
double sum_squares(const Tensor<T>& y) {
  double s = 0.0;
  for (T v : y.data()) s += double(v) * double(v);
  return s;
}

/// Loss = sum of squared layer outputs; checks input and every parameter block.
template <typename T>
GradCheckReport grad_check(const Layer<T>& layer, const Tensor<T>& x, const AttentionMask& mask,
                           const GradCheckOptions& opts = {}) {
  using U = OracleScalar;
  const Tensor<T> y = layer_forward(layer, x, mask);
  auto g = layer_backward(layer, x, mask, scale(y, T(2)));
  Layer<U> ext{layer.spec, layer.params.template cast<U>()};
  Tensor<U> xe = x.template cast<U>();
  std::vector<GradBlock<T>> blocks{{"input", &xe, &g.input_grad}};
  auto values = ext.params.blocks();
  auto grads = g.param_grads.blocks();
  for (std::size_t i = 0; i < values.size(); ++i)
    blocks.push_back({std::string(values[i].first), values[i].second, grads[i].second});
  return grad_check_blocks<T>(blocks, [&] { return layer_forward(ext, xe, mask); }, opts);
}

template <typename T>
GradCheckReport grad_check_layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                                      const Tensor<T>& shift, const GradCheckOptions& opts = {}) {
  using U = OracleScalar;
  const auto y = layer_norm(x, gain, shift, T(kLayerNormEps));
  const auto g = layer_norm_backward(x, gain, scale(y, T(2)), T(kLayerNormEps));
  auto xe = x.template cast<U>(), ge = gain.template cast<U>(), se = shift.template cast<U>();
  std::vector<GradBlock<T>> blocks{
      {"input", &xe, &g.input}, {"gain", &ge, &g.gain}, {"shift", &se, &g.shift}};
  return grad_check_blocks<T>(
      blocks, [&] { return layer_norm(xe, ge, se, U(kLayerNormEps)); }, opts);
}

/// Softmax path: multi-head attention alone (projections, masked softmax, output).
template <typename T>
GradCheckReport grad_check_attention(const Tensor<T>& x, const LayerParams<T>& params,
                                     const AttentionMask& mask, std::size_t heads,
                                     const GradCheckOptions& opts = {}) {
  using U = OracleScalar;
  const auto y = mha_forward(x, params, mask, heads);
  auto g = mha_backward(x, params, mask, heads, scale(y, T(2)));
  auto xe = x.template cast<U>();
  auto pe = params.template cast<U>();
  std::vector<GradBlock<T>> blocks{{"input", &xe, &g.input_grad}};
  auto vals = pe.blocks();
  auto grads = g.param_grads.blocks();
  for (const char* name : {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"})
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (vals[i].first == name) blocks.push_back({name, vals[i].second, grads[i].second});
  return grad_check_blocks<T>(blocks, [&] { return mha_forward(xe, pe, mask, heads); }, opts);
}

/// Fold followed by unfold with a fixed elementwise weighting in between, so
/// the loss is sensitive to where each channel lands.
template <typename T>
GradCheckReport grad_check_fold(const Tensor<T>& x, std::size_t n, std::uint64_t seed,
                                const GradCheckOptions& opts = {}) {
  using U = OracleScalar;
  Rng rng(seed);
  const Tensor<T> weights = random_uniform<T>({x.rows() * n, x.cols() / n}, rng, 0.5, 1.5);
  auto forward = [&](const auto& in) {
    using V = typename std::decay_t<decltype(in)>::value_type;
    auto f = fold(in, n);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] *= V(weights[i]);
    return unfold(f, n);
  };
  const Tensor<T> y = forward(x);
  Tensor<T> df = unfold_backward(scale(y, T(2)), n);
  for (std::size_t i = 0; i < df.size(); ++i) df[i] *= weights[i];
  const Tensor<T> dx = fold_backward(df, n);
  auto xe = x.template cast<U>();
  std::vector<GradBlock<T>> blocks{{"input", &xe, &dx}};
  return grad_check_blocks<T>(blocks, [&] { return forward(xe); }, opts);
}

}  // namespace foldattn

#pragma once

// Exact parameter / FLOP / memory accounting for attention layers, plus the
// fitted linear models that map layer counts to model size, compute (GOPS)
// and power.
//
// FLOPs are 2 * multiply-accumulates and cover matmuls only (bias adds,
// norms and softmax are not counted).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "foldattn/attention.hpp"
#include "foldattn/streaming.hpp"

namespace foldattn {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamBreakdown {
  std::uint64_t attention_weights = 0;  // WQ, WK, WV, WO
  std::uint64_t ffn_weights = 0;        // W1, W2
  std::uint64_t biases = 0;
  std::uint64_t norms = 0;

  std::uint64_t weight_matrices() const noexcept { return attention_weights + ffn_weights; }
  std::uint64_t total() const noexcept { return weight_matrices() + biases + norms; }

  ParamBreakdown& operator+=(const ParamBreakdown& o) {
    attention_weights += o.attention_weights;
    ffn_weights += o.ffn_weights;
    biases += o.biases;
    norms += o.norms;
    return *this;
  }
  bool operator==(const ParamBreakdown&) const = default;
};

/// Counts at the layer's own (inner, for folding) width.
inline ParamBreakdown param_breakdown(const LayerSpec& spec) {
  const std::uint64_t d = spec.embed_dim, f = spec.ffn_dim;
  ParamBreakdown p;
  p.attention_weights = 4 * d * d;
  p.ffn_weights = 2 * d * f;
  if (spec.use_bias) p.biases = 4 * d + f + d;
  if (spec.use_norm) p.norms = 4 * d;
  return p;
}

/// 4D^2 + 2DF (+ 4D + F + D biases, + 4D norm parameters).
inline std::uint64_t count_params(const LayerSpec& spec) { return param_breakdown(spec).total(); }

struct LayerFlops {
  std::uint64_t linear = 0;  // projections + FFN
  std::uint64_t score = 0;   // QK^T and scores*V

  std::uint64_t total() const noexcept { return linear + score; }
  bool operator==(const LayerFlops&) const = default;
};

/// FLOPs per original token with `context_tokens` tokens visible to attention.
/// A folding layer processes N sub-tokens per token at width D/N over a
/// context of N*T sub-tokens.
inline LayerFlops flops_per_token(const LayerSpec& spec, std::uint64_t context_tokens) {
  if (context_tokens == 0) throw std::invalid_argument("context_tokens must be >= 1");
  const std::uint64_t n = spec.folding_factor, d = spec.embed_dim, f = spec.ffn_dim;
  return {n * 2 * (4 * d * d + 2 * d * f), n * 4 * (n * context_tokens) * d};
}

/// Attention-score elements stored per layer: heads * (rows in context)^2.
inline std::uint64_t score_memory_elements(const LayerSpec& spec, std::uint64_t context_tokens) {
  const std::uint64_t rows = spec.folding_factor * context_tokens;
  return spec.heads * rows * rows;
}

struct MemoryReport {
  std::uint64_t weight_bytes = 0;
  std::uint64_t score_elements = 0;
};

inline MemoryReport memory_report(const LayerSpec& spec, std::uint64_t context_tokens,
                                  std::uint64_t bytes_per_param = 4) {
  return {count_params(spec) * bytes_per_param, score_memory_elements(spec, context_tokens)};
}

/// Summed over the encoder's attention layers (input projection excluded).
inline MemoryReport memory_report(const EncoderSpec& spec, std::uint64_t context_tokens,
                                  std::uint64_t bytes_per_param = 4) {
  MemoryReport out;
  for (const auto& layer : spec.layers) {
    const auto m = memory_report(layer, context_tokens, bytes_per_param);
    out.weight_bytes += m.weight_bytes;
    out.score_elements += m.score_elements;
  }
  return out;
}

inline std::uint64_t context_tokens(const EncoderSpec& spec) {
  return spec.chunk_size + spec.left_context;
}

inline LayerFlops encoder_flops_per_token(const EncoderSpec& spec) {
  LayerFlops out;
  for (const auto& layer : spec.layers) {
    const auto f = flops_per_token(layer, context_tokens(spec));
    out.linear += f.linear;
    out.score += f.score;
  }
  return out;
}

/// sum_layers(flops/token) * token_rate / 1e9 + base_gops.
inline double encoder_gops(const EncoderSpec& spec, double token_rate, double base_gops) {
  return double(encoder_flops_per_token(spec).total()) * token_rate / 1e9 + base_gops;
}

// ---------------------------------------------------------------------------
// Fitted models.

namespace detail {
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys,
                        const char* what) {
  if (xs.size() < 2) throw FitError(std::string(what) + ": need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(xs.size());
  my /= double(xs.size());
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 1e-12 * (1.0 + mx * mx))
    throw FitError(std::string(what) + ": degenerate system (all points have the same layer mix)");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}
}  // namespace detail

/// size(M) = base + per_layer * (n_standard + n_folding / N^2)
struct SizeModel {
  double base_m = 0.0;
  double per_layer_m = 0.0;
  std::size_t folding_factor = 2;

  double folding_layer_m() const {
    return per_layer_m / double(folding_factor * folding_factor);
  }
  double predict(std::size_t standard_layers, std::size_t folding_layers) const {
    return base_m + per_layer_m * double(standard_layers) + folding_layer_m() * double(folding_layers);
  }
  bool operator==(const SizeModel&) const = default;
};

struct SizeRow {
  std::size_t standard_layers = 0;
  std::size_t folding_layers = 0;
  double size_m = 0.0;
};

inline SizeModel fit_size_model(const std::vector<SizeRow>& rows, std::size_t folding_factor) {
  if (folding_factor == 0) throw FitError("folding factor must be >= 1");
  std::vector<double> xs, ys;
  const double nn = double(folding_factor * folding_factor);
  for (const auto& r : rows) {
    xs.push_back(double(r.standard_layers) + double(r.folding_layers) / nn);
    ys.push_back(r.size_m);
  }
  const auto fit = detail::fit_line(xs, ys, "size model");
  return {fit.intercept, fit.slope, folding_factor};
}

/// gops = base_gops + gops_per_unit * work, where work is FLOPs per token
/// (then gops_per_unit * 1e9 is the token rate) or, for models without
/// concrete dimensions, standard-layer equivalents.
struct GopsModel {
  double gops_per_unit = 0.0;
  double base_gops = 0.0;

  double token_rate() const { return gops_per_unit * 1e9; }
  double predict(double work) const { return base_gops + gops_per_unit * work; }
  bool operator==(const GopsModel&) const = default;
};

struct GopsRow {
  double work = 0.0;
  double gops = 0.0;
};

inline GopsModel fit_gops_model(const std::vector<GopsRow>& rows) {
  std::vector<double> xs, ys;
  for (const auto& r : rows) {
    xs.push_back(r.work);
    ys.push_back(r.gops);
  }
  const auto fit = detail::fit_line(xs, ys, "GOPS model");
  return {fit.slope, fit.intercept};
}

/// power(mW) = a * size(M) + b * GOPS
struct PowerCoefficients {
  double a = 0.0;  // mW per million parameters
  double b = 0.0;  // mW per GOPS

  double predict(double size_m, double gops) const { return a * size_m + b * gops; }
  bool operator==(const PowerCoefficients&) const = default;
};

struct PowerPoint {
  double size_m = 0.0;
  double gops = 0.0;
  double power_mw = 0.0;
};

/// Least squares without intercept; exact for two independent points.
inline PowerCoefficients fit_power_model(const std::vector<PowerPoint>& points) {
  if (points.size() < 2) throw FitError("power model: need at least two points");
  double ss = 0, sg = 0, gg = 0, sp = 0, gp = 0;
  for (const auto& p : points) {
    ss += p.size_m * p.size_m;
    sg += p.size_m * p.gops;
    gg += p.gops * p.gops;
    sp += p.size_m * p.power_mw;
    gp += p.gops * p.power_mw;
  }
  const double det = ss * gg - sg * sg;
  if (!(std::abs(det) > 1e-12 * ss * gg))
    throw FitError("power model: rank-deficient input (size and GOPS are collinear)");
  return {(sp * gg - gp * sg) / det, (gp * ss - sp * sg) / det};
}

// ---------------------------------------------------------------------------

struct ModelCost {
  double size_m = 0.0;
  double gops = 0.0;
  double power_mw = 0.0;
};

/// Percentage reductions of `candidate` relative to `baseline`.
struct ReductionReport {
  double size_pct = 0.0;
  double power_pct = 0.0;
  double gops_pct = 0.0;
};

inline double reduction_pct(double candidate, double baseline) {
  return 100.0 * (1.0 - candidate / baseline);
}

inline ReductionReport compare(const ModelCost& candidate, const ModelCost& baseline) {
  return {reduction_pct(candidate.size_m, baseline.size_m),
          reduction_pct(candidate.power_mw, baseline.power_mw),
          reduction_pct(candidate.gops, baseline.gops)};
}

// ---------------------------------------------------------------------------

struct CostContext {
  std::uint64_t base_params = 0;  // non-encoder constant
  double token_rate = 0.0;
  double base_gops = 0.0;
  PowerCoefficients power;
  std::uint64_t bytes_per_param = 4;
};

struct CostReport {
  std::uint64_t params_total = 0;
  std::vector<ParamBreakdown> params_per_layer;
  std::uint64_t base_params = 0;
  std::uint64_t linear_flops_per_token = 0;
  std::uint64_t score_flops_per_token = 0;
  std::uint64_t weight_bytes = 0;
  std::vector<std::uint64_t> score_memory_elements;  // per layer
  double gops = 0.0;
  double power_mw = 0.0;
};

/// Exact accounting of an encoder spec. The input projection counts toward
/// the encoder layers' total only through `ctx.base_params`.
inline CostReport cost_report(const EncoderSpec& spec, const CostContext& ctx) {
  CostReport r;
  r.base_params = ctx.base_params;
  r.params_total = ctx.base_params;
  const auto t = context_tokens(spec);
  for (const auto& layer : spec.layers) {
    const auto p = param_breakdown(layer);
    r.params_per_layer.push_back(p);
    r.params_total += p.total();
    r.score_memory_elements.push_back(score_memory_elements(layer, t));
  }
  const auto flops = encoder_flops_per_token(spec);
  r.linear_flops_per_token = flops.linear;
  r.score_flops_per_token = flops.score;
  r.weight_bytes = r.params_total * ctx.bytes_per_param;
  r.gops = encoder_gops(spec, ctx.token_rate, ctx.base_gops);
  r.power_mw = ctx.power.predict(double(r.params_total) / 1e6, r.gops);
  return r;
}

}  // namespace foldattn

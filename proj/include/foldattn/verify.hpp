#pragma once

// Seeded invariant suites behind `foldattn verify`.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

#include "foldattn/backward.hpp"
#include "foldattn/cost_model.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/gradcheck.hpp"
#include "foldattn/random.hpp"
#include "foldattn/streaming.hpp"

namespace foldattn {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;  // counterexample seed / measured value
};

/// Random small encoder: <= 4 layers, width <= 32, folding factors that
/// divide width, FFN width and heads.
inline EncoderSpec random_encoder_spec(Rng& rng) {
  const std::size_t heads_choices[] = {1, 2, 4};
  const std::size_t head_dims[] = {2, 4, 8};
  const std::size_t heads = heads_choices[rng.index(3)];
  const std::size_t dim = heads * head_dims[rng.index(3)];
  const std::size_t f = dim * (1 + rng.index(2));
  const auto act = rng.index(2) ? Activation::gelu : Activation::relu;
  const LayerSpec std_spec{LayerKind::standard, dim, f, heads, 1, act, rng.index(4) != 0, true};

  EncoderSpec spec;
  spec.feature_dim = 1 + rng.index(8);
  spec.model_dim = dim;
  spec.chunk_size = 1 + rng.index(6);
  spec.left_context = rng.index(9);
  const std::size_t layers = 1 + rng.index(4);
  for (std::size_t i = 0; i < layers; ++i) {
    std::vector<std::size_t> factors{1};
    for (std::size_t n : {2, 4})
      if (heads % n == 0) factors.push_back(n);
    const std::size_t n = factors[rng.index(factors.size())];
    spec.layers.push_back(n == 1 ? std_spec : derive_folding_spec(std_spec, n));
  }
  return spec;
}

namespace detail {
inline std::string seed_detail(std::uint64_t seed, double value) {
  std::ostringstream os;
  os << "seed=" << seed << " value=" << value;
  return os.str();
}
}  // namespace detail

inline std::vector<CheckResult> run_fold_suite(std::uint64_t base_seed = 1) {
  std::vector<CheckResult> out;
  bool roundtrip = true, conserve = true;
  std::string bad;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(base_seed * 7919 + s);
    const std::size_t n = 1 + rng.index(4);
    const std::size_t t = 1 + rng.index(6);
    const std::size_t d = n * (1 + rng.index(6));
    const auto x = random_normal<double>({t, d}, rng);
    const auto f = fold(x, n);
    if (!(unfold(f, n) == x)) {
      roundtrip = false;
      bad = "seed=" + std::to_string(base_seed * 7919 + s);
    }
    if (f.size() != x.size() || f.rows() != n * t) conserve = false;
  }
  out.push_back({"fold", "fold/unfold round trip is bit-exact", roundtrip, bad});
  out.push_back({"fold", "fold preserves element count", conserve, ""});

  bool degenerate = true;
  double worst = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::uint64_t seed = base_seed * 104729 + s;
    Rng rng(seed);
    const auto spec = standard_spec(8, 16, 2, rng.index(2) ? Activation::gelu : Activation::relu);
    const auto params = init_params<double>(spec, seed);
    const auto x = random_normal<double>({4, 8}, rng);
    const auto mask = AttentionMask::causal(4);
    LayerSpec folded = spec;
    folded.kind = LayerKind::folding;
    const auto a = attention_layer_forward(x, params, mask, spec);
    const auto b = folding_layer_forward(x, FoldingLayerParams<double>{params, 1}, mask, folded);
    worst = std::max(worst, max_abs_diff(a, b));
    if (!(a == b)) degenerate = false;
  }
  out.push_back({"fold", "N=1 folding layer equals standard layer", degenerate && worst < 1e-12,
                 "max|diff|=" + std::to_string(worst)});

  const auto causal = AttentionMask::causal(3);
  const auto lifted = expand_mask(causal, 2);
  bool kron = lifted.queries() == 6;
  for (std::size_t q = 0; q < 6; ++q)
    for (std::size_t k = 0; k < 6; ++k) kron = kron && lifted.allowed(q, k) == causal.allowed(q / 2, k / 2);
  out.push_back({"fold", "expanded mask is the Kronecker lift", kron, ""});
  return out;
}

inline std::vector<CheckResult> run_grad_suite(std::uint64_t base_seed = 1) {
  std::vector<CheckResult> out;
  GradCheckOptions opts;
  opts.seed = base_seed;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    std::ostringstream os;
    os << "max_rel_err=" << r.max_rel_error() << " seed=" << base_seed;
    out.push_back({"grad", name, r.passed, os.str()});
  };
  Rng rng(base_seed);
  const auto x = random_normal<double>({4, 8}, rng);
  const auto mask = AttentionMask::block_causal(4, 2, 1);
  for (auto act : {Activation::relu, Activation::gelu}) {
    const auto std_spec = standard_spec(8, 16, 2, act);
    const std::string suffix = act == Activation::relu ? " (relu)" : " (gelu)";
    record("standard layer" + suffix,
           grad_check(make_layer<double>(std_spec, base_seed + 1), x, mask, opts));
    record("folding layer N=2" + suffix,
           grad_check(make_layer<double>(derive_folding_spec(std_spec, 2), base_seed + 2),
                      slice_rows(x, 0, 3), AttentionMask::full(3), opts));
  }
  auto gain = random_uniform<double>({8}, rng, 0.5, 1.5);
  auto shift = random_normal<double>({8}, rng);
  record("layer norm", grad_check_layer_norm(x, gain, shift, opts));
  record("attention softmax path",
         grad_check_attention(x, init_params<double>(standard_spec(8, 16, 2), base_seed + 3), mask,
                              2, opts));
  record("fold/unfold", grad_check_fold(x, 2, base_seed + 4, opts));
  return out;
}

inline std::vector<CheckResult> run_stream_suite(std::uint64_t base_seed = 1,
                                                 std::size_t cases = 50) {
  std::vector<CheckResult> out;
  double worst_f = 0, worst_d = 0;
  std::uint64_t worst_seed = 0;
  bool causal_ok = true;
  for (std::uint64_t c = 0; c < cases; ++c) {
    const std::uint64_t seed = base_seed * 1000 + c;
    Rng rng(seed);
    const auto spec = random_encoder_spec(rng);
    const std::size_t total = 1 + rng.index(20);
    const auto frames_d = random_normal<double>({total, spec.feature_dim}, rng);
    const auto enc_d = make_encoder<double>(spec, seed);
    const double dd = max_abs_diff(stream_forward(enc_d, frames_d), offline_forward(enc_d, frames_d));
    const auto enc_f = make_encoder<float>(spec, seed);
    const auto frames_f = frames_d.cast<float>();
    const double df = max_abs_diff(stream_forward(enc_f, frames_f), offline_forward(enc_f, frames_f));
    if (dd > worst_d || df > worst_f) worst_seed = seed;
    worst_d = std::max(worst_d, dd);
    worst_f = std::max(worst_f, df);

    // Perturbing the last chunk must not move earlier outputs.
    const std::size_t last_start = ((total - 1) / spec.chunk_size) * spec.chunk_size;
    if (last_start > 0) {
      auto perturbed = frames_d;
      for (std::size_t i = last_start * spec.feature_dim; i < perturbed.size(); ++i) perturbed[i] += 1.0;
      const auto a = slice_rows(stream_forward(enc_d, frames_d), 0, last_start);
      const auto b = slice_rows(stream_forward(enc_d, perturbed), 0, last_start);
      if (!(a == b)) causal_ok = false;
    }
  }
  out.push_back({"stream", "streaming == offline (float, 1e-5)", worst_f < 1e-5,
                 detail::seed_detail(worst_seed, worst_f)});
  out.push_back({"stream", "streaming == offline (double, 1e-10)", worst_d < 1e-10,
                 detail::seed_detail(worst_seed, worst_d)});
  out.push_back({"stream", "later chunks never change earlier outputs", causal_ok, ""});
  return out;
}

inline std::vector<CheckResult> run_flops_suite(std::uint64_t base_seed = 1) {
  std::vector<CheckResult> out;
  bool linear_ratio = true, score_ratio = true, substitution = true, params_ratio = true;
  std::string bad;
  for (std::size_t n : {2, 4}) {
    const auto s = standard_spec(16, 32, 4, Activation::relu, false, true);
    const auto f = derive_folding_spec(s, n);
    const std::size_t t = 5;
    Rng rng(base_seed + n);
    const auto x = random_normal<double>({t, 16}, rng);
    FlopCounter cs, cf;
    {
      FlopAccounting acc(cs);
      attention_layer_forward(x, init_params<double>(s, 1), AttentionMask::full(t), s);
    }
    {
      FlopAccounting acc(cf);
      layer_forward(make_layer<double>(f, 2), x, AttentionMask::full(t));
    }
    if (cf.linear * n != cs.linear) {
      linear_ratio = false;
      bad = "n=" + std::to_string(n);
    }
    if (cf.score != n * cs.score) score_ratio = false;
    if (n * flops_per_token(f, t).linear != flops_per_token(s, t).linear) substitution = false;
    if (cs.linear != t * flops_per_token(s, t).linear || cs.score != t * flops_per_token(s, t).score)
      substitution = false;
    const auto ws = param_breakdown(s).weight_matrices();
    const auto wf = param_breakdown(f).weight_matrices();
    if (wf * n * n != ws) params_ratio = false;
  }
  out.push_back({"flops", "folding linear FLOPs = standard / N (accounted)", linear_ratio, bad});
  out.push_back({"flops", "folding score FLOPs = standard * N (accounted)", score_ratio, ""});
  out.push_back({"flops", "N folding layers match one standard layer's linear FLOPs", substitution, ""});
  out.push_back({"flops", "folding weight matrices = standard / N^2", params_ratio, ""});

  const auto def = standard_spec(512, 2048, 8);
  const auto fl = flops_per_token(def, 32);
  const auto mem = memory_report(def, 32, 4);
  out.push_back({"flops", "linear FLOPs > 50x score FLOPs at D=512, T=32",
                 fl.linear > 50 * fl.score,
                 "ratio=" + std::to_string(double(fl.linear) / double(fl.score))});
  out.push_back({"flops", "weight bytes > 100x score bytes at D=512, T=32, H=8",
                 mem.weight_bytes > 100 * mem.score_elements * 4,
                 "ratio=" + std::to_string(double(mem.weight_bytes) / double(mem.score_elements * 4))});
  return out;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"fold", "grad", "stream", "flops"};
  return names;
}

inline std::vector<CheckResult> run_suite(const std::string& name, std::uint64_t seed = 1) {
  if (name == "fold") return run_fold_suite(seed);
  if (name == "grad") return run_grad_suite(seed);
  if (name == "stream") return run_stream_suite(seed);
  if (name == "flops") return run_flops_suite(seed);
  if (name == "all") {
    std::vector<CheckResult> out;
    for (const auto& n : suite_names()) {
      auto r = run_suite(n, seed);
      out.insert(out.end(), r.begin(), r.end());
    }
    return out;
  }
  throw std::invalid_argument("unknown suite '" + name + "'");
}

}  // namespace foldattn

#include <gtest/gtest.h>

#include "foldattn/config.hpp"
#include "foldattn/cost_model.hpp"
#include "foldattn/grid.hpp"
#include "foldattn/random.hpp"

using namespace foldattn;

namespace {

std::uint64_t tensor_elements(const LayerParams<float>& p) {
  std::uint64_t n = 0;
  for (auto [name, t] : p.blocks()) n += t->size();
  return n;
}

// Two-point line through (x0,y0), (x1,y1).
std::pair<double, double> line(double x0, double y0, double x1, double y1) {
  const double slope = (y1 - y0) / (x1 - x0);
  return {slope, y0 - slope * x0};
}

}  // namespace

TEST(Params, ClosedFormCounts) {
  const auto s = standard_spec(512, 2048, 8);
  EXPECT_EQ(count_params(s), 3152384u);
  EXPECT_EQ(count_params(derive_folding_spec(s, 2)), 789760u);
  EXPECT_EQ(count_params(standard_spec(1, 1, 1, Activation::relu, false, false)), 6u);
}

TEST(Params, MatchesInitializedElements) {
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const std::size_t h = 1 + rng.index(4);
    const std::size_t d = h * (1 + rng.index(5));
    const auto s = standard_spec(d, 1 + rng.index(20), h,
                                 Activation::relu, rng.index(2) != 0, rng.index(2) != 0);
    EXPECT_EQ(count_params(s), tensor_elements(init_params<float>(s, i)));
  }
}

TEST(Params, FoldingWeightsShrinkByNSquared) {
  for (std::size_t n : {1, 2, 4, 8}) {
    const auto s = standard_spec(64, 256, 8);
    const auto f = derive_folding_spec(s, n);
    EXPECT_EQ(param_breakdown(f).weight_matrices() * n * n, param_breakdown(s).weight_matrices());
  }
}

TEST(Flops, PerTokenFormula) {
  const auto s = standard_spec(512, 2048, 8);
  const auto f = derive_folding_spec(s, 2);
  EXPECT_EQ(flops_per_token(s, 32).linear, 2u * (4 * 512 * 512 + 2 * 512 * 2048));
  EXPECT_EQ(flops_per_token(s, 32).linear, 6291456u);
  EXPECT_EQ(flops_per_token(f, 32).linear, 3145728u);
  EXPECT_EQ(flops_per_token(f, 32).score, 2 * flops_per_token(s, 32).score);
  EXPECT_EQ(flops_per_token(s, 32).score, 4u * 32 * 512);
  EXPECT_THROW(flops_per_token(s, 0), std::invalid_argument);
}

TEST(Flops, NFoldingLayersPreserveLinearWork) {
  for (std::size_t n : {1, 2, 4}) {
    const auto s = standard_spec(32, 64, 4);
    EXPECT_EQ(n * flops_per_token(derive_folding_spec(s, n), 10).linear,
              flops_per_token(s, 10).linear);
  }
}

TEST(Flops, CounterMatchesFormula) {
  Rng rng(2);
  const auto s = standard_spec(16, 32, 4);
  const std::size_t t = 6;
  const auto x = random_normal<double>({t, 16}, rng);
  for (std::size_t n : {1, 2, 4}) {
    const auto spec = n == 1 ? s : derive_folding_spec(s, n);
    FlopCounter c;
    {
      FlopAccounting acc(c);
      layer_forward(make_layer<double>(spec, 3), x, AttentionMask::full(t));
    }
    EXPECT_EQ(c.linear, t * flops_per_token(spec, t).linear) << n;
    EXPECT_EQ(c.score, t * flops_per_token(spec, t).score) << n;
  }
}

TEST(Memory, ScoreAndWeightBytes) {
  const auto s = standard_spec(512, 2048, 8);
  const auto f = derive_folding_spec(s, 2);
  EXPECT_EQ(memory_report(s, 32).score_elements, 8192u);
  EXPECT_EQ(memory_report(f, 32).score_elements, 16384u);
  EXPECT_EQ(memory_report(s, 32, 4).weight_bytes, 12609536u);
  EXPECT_EQ(memory_report(s, 32, 1).weight_bytes, 3152384u);
  const auto enc = make_encoder_spec(s, 2, 3, 2, 80, 8, 24);
  EXPECT_EQ(memory_report(enc, 32).score_elements, 3 * 8192u + 2 * 16384u);
}

TEST(SizeFit, LibriSpeechAnchors) {
  const auto m = fit_size_model({{6, 0, 33.98}, {18, 0, 71.82}}, 2);
  const auto [slope, icpt] = line(6, 33.98, 18, 71.82);
  EXPECT_NEAR(m.per_layer_m, slope, 1e-12);
  EXPECT_NEAR(m.base_m, icpt, 1e-12);
  EXPECT_NEAR(m.per_layer_m, 3.1533, 1e-4);
  EXPECT_NEAR(m.base_m, 15.06, 1e-2);
  EXPECT_NEAR(m.predict(10, 10), 54.48, 0.01);
  EXPECT_LT(std::abs(m.predict(10, 10) - 54.50) / 54.50, 1e-3);
  // regressed per-layer size agrees with the closed-form count
  EXPECT_LT(std::abs(m.per_layer_m * 1e6 - 3152384.0) / 3152384.0, 1e-3);
}

TEST(SizeFit, InHouseAnchors) {
  const auto m = fit_size_model({{6, 0, 17.20}, {18, 0, 41.19}}, 2);
  EXPECT_NEAR(m.per_layer_m, 1.9992, 1e-4);
  EXPECT_NEAR(m.base_m, 5.205, 1e-3);
  EXPECT_NEAR(m.predict(2, 8), 13.20, 0.01);
}

TEST(SizeFit, LeastSquaresOnManyPoints) {
  std::vector<SizeRow> rows;
  for (std::size_t l = 1; l < 8; ++l) rows.push_back({l, 2, 3.0 + 1.5 * (l + 2.0 / 4.0)});
  const auto m = fit_size_model(rows, 2);
  EXPECT_NEAR(m.per_layer_m, 1.5, 1e-12);
  EXPECT_NEAR(m.base_m, 3.0, 1e-12);
  EXPECT_NEAR(m.folding_layer_m(), 0.375, 1e-12);
}

TEST(SizeFit, DegenerateInputsThrow) {
  EXPECT_THROW(fit_size_model({{6, 0, 30.0}}, 2), FitError);
  EXPECT_THROW(fit_size_model({{6, 0, 30.0}, {6, 0, 31.0}}, 2), FitError);
  EXPECT_THROW(fit_size_model({{4, 0, 30.0}, {0, 16, 31.0}}, 2), FitError);
  EXPECT_THROW(fit_size_model({{6, 0, 30.0}, {8, 0, 31.0}}, 0), FitError);
}

TEST(GopsFit, TokenRateFromConcreteWork) {
  const auto m = fit_gops_model({{6e6, 2.0}, {12e6, 3.0}});
  EXPECT_NEAR(m.gops_per_unit, 1.0 / 6e6, 1e-18);
  EXPECT_NEAR(m.base_gops, 1.0, 1e-12);
  EXPECT_NEAR(m.token_rate(), 1e9 / 6e6, 1e-6);
  EXPECT_THROW(fit_gops_model({{1.0, 2.0}, {1.0, 3.0}}), FitError);
}

TEST(PowerFit, SolvesTwoAnchorsExactly) {
  const auto c = fit_power_model({{10.0, 2.0, 10 * 0.7 + 2 * 0.3}, {20.0, 1.0, 20 * 0.7 + 0.3}});
  EXPECT_NEAR(c.a, 0.7, 1e-12);
  EXPECT_NEAR(c.b, 0.3, 1e-12);
}

TEST(PowerFit, RankDeficientThrows) {
  EXPECT_THROW(fit_power_model({{1.0, 2.0, 3.0}}), FitError);
  EXPECT_THROW(fit_power_model({{1.0, 2.0, 3.0}, {2.0, 4.0, 6.0}}), FitError);
}

TEST(PowerFit, LibriSpeechAnchorsOnReferenceValues) {
  // A1 and B1 reference rows, solved by Cramer's rule
  const double s1 = 33.98, g1 = 2.58, p1 = 27.13;
  const double s2 = 27.69, g2 = 2.59, p2 = 22.40;
  const auto c = fit_power_model({{s1, g1, p1}, {s2, g2, p2}});
  const double det = s1 * g2 - s2 * g1;
  EXPECT_NEAR(c.a, (p1 * g2 - p2 * g1) / det, 1e-9);
  EXPECT_NEAR(c.b, (s1 * p2 - s2 * p1) / det, 1e-9);
  EXPECT_NEAR(c.a, 0.752, 2e-3);
}

TEST(PowerFit, GridFitAndPrediction) {
  const auto grid = evaluate_grid(load_config(FOLDATTN_CONFIG_DIR "/librispeech_grid.json"));
  EXPECT_NEAR(grid.power.a, 0.752, 2e-3);
  EXPECT_NEAR(grid.power.b, 0.612, 5e-3);
  EXPECT_NEAR(grid.row("A6").predicted.power_mw, 56.7, 0.6);

  auto cfg = load_config(FOLDATTN_CONFIG_DIR "/inhouse_grid.json");
  cfg.cost.power_anchors = {"C1", "C6"};
  const auto in = evaluate_grid(cfg);
  EXPECT_NEAR(in.row("C4").predicted.power_mw, 12.40, 0.02);
}

TEST(Compare, Reductions) {
  const ModelCost a{10, 2, 5};
  const auto same = compare(a, a);
  EXPECT_EQ(same.size_pct, 0.0);
  EXPECT_EQ(same.power_pct, 0.0);
  EXPECT_EQ(same.gops_pct, 0.0);
  EXPECT_NEAR(reduction_pct(27.69, 33.98), 18.5, 0.05);
  EXPECT_NEAR(reduction_pct(54.50, 71.82), 24.1, 0.05);
  EXPECT_NEAR(compare({5, 1, 4}, a).power_pct, 20.0, 1e-12);
}

TEST(CostReport, ZeroLayerEncoder) {
  EncoderSpec spec;
  spec.feature_dim = 4;
  spec.model_dim = 8;
  spec.chunk_size = 2;
  spec.left_context = 2;
  EXPECT_EQ(encoder_gops(spec, 25.0, 0.4), 0.4);
  const auto r = cost_report(spec, {36, 25.0, 0.4, {1.0, 2.0}, 4});
  EXPECT_EQ(r.params_total, 36u);
  EXPECT_EQ(r.weight_bytes, 144u);
  EXPECT_DOUBLE_EQ(r.power_mw, 36e-6 + 0.8);
}

TEST(CostReport, ParamsEqualInitializedElements) {
  const auto spec = make_encoder_spec(standard_spec(16, 32, 4), 2, 2, 2, 5, 3, 4);
  const auto enc = make_encoder<float>(spec, 1);
  std::uint64_t elements = 0;
  for (const auto& l : enc.params.layers) elements += tensor_elements(l);
  const std::uint64_t proj = spec.feature_dim * spec.model_dim + spec.model_dim;
  const auto r = cost_report(spec, {proj, 25.0, 0.0, {}, 4});
  EXPECT_EQ(r.params_total, elements + proj);
  EXPECT_EQ(r.params_per_layer.size(), 4u);
  EXPECT_EQ(r.score_memory_elements.size(), 4u);
  EXPECT_EQ(r.linear_flops_per_token, encoder_flops_per_token(spec).linear);
}

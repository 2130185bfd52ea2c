#include <gtest/gtest.h>

#include "foldattn/cost_model.hpp"
#include "foldattn/folding.hpp"
#include "foldattn/random.hpp"

using namespace foldattn;
using Md = Tensor<double>;

namespace {

LayerParams<double> randomized(const LayerSpec& spec, std::uint64_t seed) {
  auto p = init_params<double>(spec, seed);
  Rng rng(seed + 7);
  for (auto [name, ptr] : p.blocks())
    for (auto& v : ptr->data()) v += 0.1 * rng.normal();
  return p;
}

}  // namespace

TEST(Fold, SplitsChannelsInOrder) {
  EXPECT_EQ(fold(Md::matrix({{1, 2, 3, 4}}), 2), Md::matrix({{1, 2}, {3, 4}}));
}

TEST(Fold, ParentMajorSubTokenOrder) {
  // t0 = [a, b], t1 = [c, d] -> (t0s0, t0s1, t1s0, t1s1)
  EXPECT_EQ(fold(Md::matrix({{1, 2}, {3, 4}}), 2), Md::matrix({{1}, {2}, {3}, {4}}));
}

TEST(Fold, FactorOneIsIdentity) {
  Rng rng(1);
  const auto x = random_normal<double>({3, 4}, rng);
  EXPECT_EQ(fold(x, 1), x);
  EXPECT_EQ(unfold(x, 1), x);
}

TEST(Fold, UnfoldConcatenates) {
  EXPECT_EQ(unfold(Md::matrix({{1, 2}, {3, 4}}), 2), Md::matrix({{1, 2, 3, 4}}));
}

TEST(Fold, RoundTripAndElementConservation) {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rng.index(4), t = 1 + rng.index(7), w = 1 + rng.index(5);
    const auto x = random_normal<double>({t, n * w}, rng);
    const auto f = fold(x, n);
    EXPECT_EQ(f.size(), x.size());
    EXPECT_EQ(f.shape(), (Shape{n * t, w}));
    EXPECT_EQ(unfold(f, n), x);
  }
}

TEST(Fold, DivisibilityErrors) {
  EXPECT_THROW(fold(Md({2, 6}), 4), DivisibilityError);
  EXPECT_THROW(unfold(Md({3, 2}), 2), DivisibilityError);
}

TEST(ExpandMask, FullStaysFull) {
  const auto m = expand_mask(AttentionMask::full(3), 2);
  EXPECT_EQ(m, AttentionMask::full(6));
}

TEST(ExpandMask, CausalBecomesBlockLowerTriangular) {
  const auto m = expand_mask(AttentionMask::causal(2), 2);
  const std::vector<std::uint8_t> expect{1, 1, 0, 0,  //
                                         1, 1, 0, 0,  //
                                         1, 1, 1, 1,  //
                                         1, 1, 1, 1};
  EXPECT_EQ(m, AttentionMask(4, 4, expect));
}

TEST(ExpandMask, DiagonalBecomesBlockDiagonal) {
  const auto m = expand_mask(AttentionMask::diagonal(3), 2);
  for (std::size_t q = 0; q < 6; ++q)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(m.allowed(q, k), q / 2 == k / 2);
}

TEST(DeriveFoldingSpec, HalvesWidthsAndHeads) {
  const auto f = derive_folding_spec(standard_spec(512, 2048, 8), 2);
  EXPECT_EQ(f.kind, LayerKind::folding);
  EXPECT_EQ(f.embed_dim, 256u);
  EXPECT_EQ(f.ffn_dim, 1024u);
  EXPECT_EQ(f.heads, 4u);
  EXPECT_EQ(f.folding_factor, 2u);
  EXPECT_EQ(f.head_dim(), 64u);
  EXPECT_EQ(f.model_dim(), 512u);
}

TEST(DeriveFoldingSpec, FactorOneUnchanged) {
  const auto s = standard_spec(8, 16, 2);
  EXPECT_EQ(derive_folding_spec(s, 1), s);
}

TEST(DeriveFoldingSpec, NamesOffendingDimension) {
  auto name_of = [](const LayerSpec& s, std::size_t n) -> std::string {
    try {
      derive_folding_spec(s, n);
    } catch (const DivisibilityError& e) {
      return e.dim_name();
    }
    return "";
  };
  EXPECT_EQ(name_of(standard_spec(9, 18, 3), 2), "embed_dim");
  EXPECT_EQ(name_of(standard_spec(8, 6, 2), 4), "ffn_dim");
  EXPECT_EQ(name_of(standard_spec(8, 16, 2), 4), "heads");
}

TEST(DeriveFoldingSpec, WeightParamsShrinkByNSquared) {
  for (std::size_t n : {2, 4}) {
    const auto s = standard_spec(64, 256, 8, Activation::relu, false, false);
    const auto f = derive_folding_spec(s, n);
    EXPECT_EQ(count_params(s), n * n * count_params(f));
    EXPECT_EQ(init_params<float>(s, 1).element_count(),
              n * n * init_params<float>(f, 1).element_count());
  }
}

TEST(FoldingLayer, FactorOneMatchesStandardBitForBit) {
  Rng rng(3);
  for (auto act : {Activation::relu, Activation::gelu}) {
    const auto s = standard_spec(8, 16, 2, act);
    const auto p = randomized(s, 4);
    const auto x = random_normal<double>({5, 8}, rng);
    const auto mask = AttentionMask::block_causal(5, 2, 2);
    LayerSpec f = s;
    f.kind = LayerKind::folding;
    const auto a = attention_layer_forward(x, p, mask, s);
    const auto b = folding_layer_forward(x, FoldingLayerParams<double>{p, 1}, mask, f);
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
    EXPECT_EQ(a, b);
    const auto af = attention_layer_forward(x.cast<float>(), p.cast<float>(), mask, s);
    const auto bf = folding_layer_forward(x.cast<float>(),
                                          FoldingLayerParams<float>{p.cast<float>(), 1}, mask, f);
    EXPECT_EQ(af, bf);
  }
}

TEST(FoldingLayer, OutputShape) {
  Rng rng(5);
  for (std::size_t t = 1; t <= 4; ++t)
    for (std::size_t n : {1, 2, 4}) {
      const auto f = derive_folding_spec(standard_spec(16, 32, 4), n);
      const auto x = random_normal<double>({t, 16}, rng);
      EXPECT_EQ(layer_forward(make_layer<double>(f, t), x, AttentionMask::causal(t)).shape(),
                x.shape());
    }
}

TEST(FoldingLayer, EqualsManualComposition) {
  Rng rng(6);
  const auto f = derive_folding_spec(standard_spec(8, 16, 2), 2);
  const auto inner = randomized(f, 7);
  const auto x = random_normal<double>({3, 8}, rng);
  const auto mask = AttentionMask::causal(3);
  // The inner block is an ordinary standard layer of width 4 over 6 sub-tokens.
  const auto narrow = standard_spec(4, 8, 1);
  const Md manual = concat_channels(
      attention_layer_forward(split_channels(x, 2), inner, expand_mask(mask, 2), narrow), 2);
  EXPECT_LT(max_abs_diff(folding_layer_forward(x, FoldingLayerParams<double>{inner, 2}, mask, f),
                         manual),
            1e-10);
  EXPECT_LT(max_abs_diff(layer_forward(f, inner, x, mask), manual), 1e-10);
}

TEST(FoldingLayer, SubTokensOfOneTokenInteract) {
  // Token t, sub-token 0 outputs vs token t, sub-token 1 inputs; only
  // intra-token attention is allowed so any coupling comes from sub-token
  // query/key products.
  Rng rng(8);
  const auto f = derive_folding_spec(standard_spec(8, 16, 2), 2);
  const auto p = randomized(f, 9);
  const auto x = random_normal<double>({2, 8}, rng);
  const auto mask = AttentionMask::diagonal(2);
  double largest = 0;
  for (std::size_t in_c = 4; in_c < 8; ++in_c) {
    auto xp = x, xm = x;
    const double h = 1e-6;
    xp(1, in_c) += h;
    xm(1, in_c) -= h;
    const auto yp = layer_forward(f, p, xp, mask);
    const auto ym = layer_forward(f, p, xm, mask);
    for (std::size_t out_c = 0; out_c < 4; ++out_c)
      largest = std::max(largest, std::abs((yp(1, out_c) - ym(1, out_c)) / (2 * h)));
    // the other token is out of reach under the diagonal mask
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(yp(0, c), ym(0, c));
  }
  EXPECT_GT(largest, 1e-9);
}

TEST(FoldingLayer, AccountedFlopRatios) {
  Rng rng(10);
  for (std::size_t n : {2, 4}) {
    const auto s = standard_spec(16, 32, 4);
    const auto f = derive_folding_spec(s, n);
    for (std::size_t t : {1, 3, 7}) {
      const auto x = random_normal<double>({t, 16}, rng);
      FlopCounter cs, cf;
      {
        FlopAccounting acc(cs);
        layer_forward(make_layer<double>(s, 1), x, AttentionMask::full(t));
      }
      {
        FlopAccounting acc(cf);
        layer_forward(make_layer<double>(f, 2), x, AttentionMask::full(t));
      }
      EXPECT_EQ(cs.linear, n * cf.linear);
      EXPECT_EQ(cf.score, n * cs.score);
    }
  }
}

TEST(FoldingLayer, MismatchedFactorRejected) {
  const auto f = derive_folding_spec(standard_spec(8, 16, 2), 2);
  const FoldingLayerParams<double> wrong{init_params<double>(f, 1), 1};
  EXPECT_THROW(folding_layer_forward(Md({2, 8}), wrong, AttentionMask::full(2), f), DimensionError);
}

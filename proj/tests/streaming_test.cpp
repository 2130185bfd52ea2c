#include <gtest/gtest.h>

#include "foldattn/streaming.hpp"
#include "foldattn/verify.hpp"

using namespace foldattn;
using Md = Tensor<double>;

namespace {

EncoderSpec small_spec(std::size_t folding, std::size_t standard, std::size_t c, std::size_t l) {
  return make_encoder_spec(standard_spec(8, 16, 2), folding, standard, 2, 3, c, l);
}

}  // namespace

TEST(Stream, InitIsEmpty) {
  const auto spec = small_spec(1, 1, 4, 3);
  const auto st = init_stream<double>(spec);
  EXPECT_EQ(st.tokens_processed, 0u);
  ASSERT_EQ(st.caches.size(), 2u);
  EXPECT_EQ(st.caches[0].capacity, 6u);  // folding, N=2, L=3
  EXPECT_EQ(st.caches[1].capacity, 3u);
  for (const auto& c : st.caches) EXPECT_EQ(c.size(), 0u);
  EXPECT_EQ(init_stream<double>(small_spec(0, 1, 4, 0)).caches[0].capacity, 0u);
}

TEST(Stream, InvalidSpecsRejected) {
  auto spec = small_spec(0, 1, 4, 2);
  spec.layers.clear();
  EXPECT_THROW(init_stream<double>(spec), std::invalid_argument);
  spec = small_spec(0, 1, 4, 2);
  spec.chunk_size = 0;
  EXPECT_THROW(init_stream<double>(spec), DimensionError);
  spec = small_spec(0, 1, 4, 2);
  spec.model_dim = 16;
  EXPECT_THROW(init_stream<double>(spec), DimensionError);
}

TEST(Stream, SingleChunkEqualsOfflineExactly) {
  const auto enc = make_encoder<double>(small_spec(2, 1, 4, 3), 1);
  Rng rng(2);
  const auto frames = random_normal<double>({4, 3}, rng);
  auto st = init_stream<double>(enc.spec);
  EXPECT_EQ(process_chunk(enc, st, frames), offline_forward(enc, frames));
  EXPECT_EQ(st.tokens_processed, 4u);
}

TEST(Stream, TwoChunksMatchOfflineInSinglePrecision) {
  const auto enc = make_encoder<float>(small_spec(2, 2, 4, 6), 3);
  Rng rng(4);
  const auto frames = random_normal<float>({8, 3}, rng);
  auto st = init_stream<float>(enc.spec);
  const auto a = process_chunk(enc, st, slice_rows(frames, 0, 4));
  const auto b = process_chunk(enc, st, slice_rows(frames, 4, 8));
  EXPECT_LT(max_abs_diff(concat_rows(a, b), offline_forward(enc, frames)), 1e-5f);
  EXPECT_EQ(st.tokens_processed, 8u);
}

TEST(Stream, ZeroLeftContextMakesChunksIndependent) {
  const auto enc = make_encoder<double>(small_spec(1, 2, 3, 0), 5);
  Rng rng(6);
  const auto frames = random_normal<double>({9, 3}, rng);
  const auto full = stream_forward(enc, frames);
  for (std::size_t start = 0; start < 9; start += 3) {
    auto st = init_stream<double>(enc.spec);
    EXPECT_EQ(process_chunk(enc, st, slice_rows(frames, start, start + 3)),
              slice_rows(full, start, start + 3));
  }
}

TEST(Stream, CacheNeverExceedsCapacity) {
  const auto enc = make_encoder<double>(small_spec(2, 1, 2, 3), 7);
  Rng rng(8);
  auto st = init_stream<double>(enc.spec);
  for (int i = 0; i < 5; ++i) {
    process_chunk(enc, st, random_normal<double>({2, 3}, rng));
    for (const auto& c : st.caches) EXPECT_LE(c.size(), c.capacity);
  }
  EXPECT_EQ(st.caches[0].size(), 6u);
  EXPECT_EQ(st.caches[2].size(), 3u);
}

TEST(Stream, PartialChunkEndsTheStream) {
  const auto enc = make_encoder<double>(small_spec(0, 1, 4, 2), 9);
  auto st = init_stream<double>(enc.spec);
  process_chunk(enc, st, Md({3, 3}));
  EXPECT_TRUE(st.finished);
  EXPECT_THROW(process_chunk(enc, st, Md({4, 3})), std::logic_error);
  auto st2 = init_stream<double>(enc.spec);
  EXPECT_THROW(process_chunk(enc, st2, Md({5, 3})), DimensionError);
  EXPECT_THROW(process_chunk(enc, st2, Md({4, 2})), DimensionError);
}

TEST(Stream, OfflineOfOneChunkEqualsProcessChunk) {
  for (std::size_t c : {1, 3, 5}) {
    const auto enc = make_encoder<double>(small_spec(1, 1, c, 2), c);
    Rng rng(c);
    const auto frames = random_normal<double>({c, 3}, rng);
    auto st = init_stream<double>(enc.spec);
    EXPECT_EQ(offline_forward(enc, frames), process_chunk(enc, st, frames));
  }
}

TEST(Stream, ReplayMatchesOfflineForEveryChunkSize) {
  Rng rng(10);
  const auto frames = random_normal<double>({13, 3}, rng);
  for (std::size_t c = 1; c <= 13; ++c)
    for (std::size_t l : {0, 1, 4, 20}) {
      const auto enc = make_encoder<double>(small_spec(2, 2, c, l), 11);
      EXPECT_LT(max_abs_diff(stream_forward(enc, frames), offline_forward(enc, frames)), 1e-10)
          << "C=" << c << " L=" << l;
    }
}

TEST(Stream, RandomSpecsMatchOffline) {
  double worst_d = 0, worst_f = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(seed);
    const auto spec = random_encoder_spec(rng);
    ASSERT_LE(spec.layers.size(), 4u);
    ASSERT_LE(spec.model_dim, 32u);
    const auto frames = random_normal<double>({1 + rng.index(20), spec.feature_dim}, rng);
    const auto ed = make_encoder<double>(spec, seed);
    const auto ef = make_encoder<float>(spec, seed);
    worst_d = std::max(worst_d, max_abs_diff(stream_forward(ed, frames), offline_forward(ed, frames)));
    const auto ff = frames.cast<float>();
    worst_f = std::max(worst_f, double(max_abs_diff(stream_forward(ef, ff), offline_forward(ef, ff))));
  }
  EXPECT_LT(worst_d, 1e-10);
  EXPECT_LT(worst_f, 1e-5);
}

TEST(Stream, LaterChunksNeverChangeEarlierOutputs) {
  const auto enc = make_encoder<double>(small_spec(2, 2, 3, 4), 12);
  Rng rng(13);
  const auto frames = random_normal<double>({12, 3}, rng);
  const auto base = stream_forward(enc, frames);
  for (std::size_t k = 1; k < 4; ++k) {
    auto perturbed = frames;
    for (std::size_t r = 3 * k; r < 12; ++r)
      for (double& v : perturbed.row(r)) v += rng.normal();
    EXPECT_EQ(slice_rows(stream_forward(enc, perturbed), 0, 3 * k), slice_rows(base, 0, 3 * k));
  }
}

TEST(Stream, SingleLayerIgnoresFramesBeyondContext) {
  const std::size_t c = 3, l = 4;
  const auto enc = make_encoder<double>(small_spec(0, 1, c, l), 14);
  Rng rng(15);
  const auto frames = random_normal<double>({15, 3}, rng);
  const auto base = stream_forward(enc, frames);
  // last chunk covers [12, 15); its context starts at 8
  auto perturbed = frames;
  for (std::size_t r = 0; r < 8; ++r)
    for (double& v : perturbed.row(r)) v += 5.0;
  EXPECT_EQ(slice_rows(stream_forward(enc, perturbed), 12, 15), slice_rows(base, 12, 15));
  // a frame inside the context does matter
  perturbed = frames;
  for (double& v : perturbed.row(8)) v += 5.0;
  EXPECT_NE(slice_rows(stream_forward(enc, perturbed), 12, 15), slice_rows(base, 12, 15));
}

TEST(Stream, PermutingIdenticalZeroLayersChangesNothing) {
  auto enc = make_encoder<double>(small_spec(0, 3, 2, 2), 16);
  for (auto& p : enc.params.layers) p = LayerParams<double>::zeros_like(p);
  auto permuted = enc;
  std::swap(permuted.params.layers[0], permuted.params.layers[2]);
  Rng rng(17);
  const auto frames = random_normal<double>({6, 3}, rng);
  EXPECT_EQ(offline_forward(enc, frames), offline_forward(permuted, frames));
}

TEST(Stream, EncoderSpecLayersFoldingFirst) {
  const auto spec = make_encoder_spec(standard_spec(512, 2048, 8), 8, 2, 2);
  ASSERT_EQ(spec.layers.size(), 10u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(spec.layers[i].kind, LayerKind::folding);
  EXPECT_EQ(spec.layers[9].kind, LayerKind::standard);
  EXPECT_EQ(spec.feature_dim, 80u);
  EXPECT_EQ(spec.chunk_size, 8u);
  EXPECT_EQ(spec.left_context, 24u);
}

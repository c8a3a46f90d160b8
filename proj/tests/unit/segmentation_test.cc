#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support/oracles.h"
#include "unidps/model/model.h"
#include "unidps/segmentation/decoder.h"
#include "unidps/segmentation/postprocess.h"

namespace unidps {
namespace {

using oracle::random_tensor;

FeaturePyramid random_pyramid(Rng& rng, GridSize full, std::size_t c = 64, std::size_t ce = 32) {
  FeaturePyramid p;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    const GridSize g{full.height / kLevelStrides[l], full.width / kLevelStrides[l]};
    p.levels[l] = {g, random_tensor({g.area(), c}, rng)};
  }
  const GridSize e{full.height / 4, full.width / 4};
  p.embedding = {e, random_tensor({e.area(), ce}, rng)};
  return p;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t n = t.dim(0), stride = t.size() / n;
  Tensor out(t.shape());
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(&t[perm[i] * stride], stride, &out[i * stride]);
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

TEST(DecoderLayer, ZeroSublayersPassQueriesThrough) {
  Rng rng(1);
  DecoderConfig c;
  SegmentationParams p = init_segmentation(c, rng);
  DecoderLayerParams& layer = p.layers[0];
  for (Attention* a : {&layer.cross, &layer.self})
    visit_params(*a, "a", [](const std::string&, Tensor& t) { t.fill(0.0); });
  visit_params(layer.ffn, "f", [](const std::string&, Tensor& t) { t.fill(0.0); });
  const FeaturePyramid pyr = random_pyramid(rng, {64, 128});
  const QuerySet q{random_tensor({20, 64}, rng)};
  EXPECT_EQ(decoder_layer(q, pyr.levels[2], nullptr, layer).queries, q.queries);
}

TEST(DecoderLayer, PermutationEquivariant) {
  Rng rng(2);
  const SegmentationParams p = init_segmentation({}, rng);
  const FeaturePyramid pyr = random_pyramid(rng, {64, 128});
  const QuerySet q{random_tensor({20, 64}, rng)};
  const Tensor logits = random_tensor({20, 16, 32}, rng);
  const auto perm = random_permutation(20, rng);
  const QuerySet a = decoder_layer(q, pyr.levels[0], logits, pyr.embedding.grid, p.layers[0]);
  const QuerySet b = decoder_layer(QuerySet{permute_rows(q.queries, perm)}, pyr.levels[0],
                                   permute_rows(logits, perm), pyr.embedding.grid, p.layers[0]);
  EXPECT_LE(max_abs_diff(permute_rows(a.queries, perm), b.queries), 1e-12);
}

TEST(DecoderLayer, FirstLayerWithoutMaskEqualsUnmasked) {
  Rng rng(3);
  const SegmentationParams p = init_segmentation({}, rng);
  const FeaturePyramid pyr = random_pyramid(rng, {64, 128});
  const QuerySet q{random_tensor({20, 64}, rng)};
  const AttentionMask all(20, pyr.levels[2].grid.area(), true);
  EXPECT_EQ(decoder_layer(q, pyr.levels[2], Tensor(), pyr.embedding.grid, p.layers[0]).queries,
            decoder_layer(q, pyr.levels[2], &all, p.layers[0]).queries);
}

TEST(DecoderLayer, LevelScheduleIsCoarseToFine) {
  const std::vector<std::size_t> expected{2, 1, 0, 2, 1, 0, 2, 1, 0};
  for (std::size_t l = 0; l < 9; ++l) EXPECT_EQ(level_for_layer(l), expected[l]);
}

TEST(Heads, ConstantEmbeddingGivesConstantLogits) {
  Rng rng(4);
  DecoderConfig c;
  c.num_queries = 1;
  const SegmentationParams p = init_segmentation(c, rng);
  const QuerySet q{random_tensor({1, 64}, rng)};
  FeatureMap e{{16, 32}, Tensor({512, 32})};
  Tensor cvec = random_tensor({32}, rng);
  for (std::size_t i = 0; i < 512; ++i) std::copy_n(&cvec[0], 32, &e.tokens[i * 32]);
  const SegPrediction pred = predict_heads(q, e, p);
  const Tensor v = mlp(layer_norm(q.queries, p.ln_out.gain, p.ln_out.bias), p.mask_head);
  double expected = 0.0;
  for (std::size_t j = 0; j < 32; ++j) expected += v[j] * cvec[j];
  for (double x : pred.mask_logits.data()) EXPECT_NEAR(x, expected, 1e-12);
}

TEST(Heads, ShapesAndPointwiseOracle) {
  Rng rng(5);
  DecoderConfig c;
  c.num_classes = 6;
  const SegmentationParams p = init_segmentation(c, rng);
  const FeaturePyramid pyr = random_pyramid(rng, {64, 128});
  const SegmentationOutput out = forward_segmentation(pyr, p, true);
  EXPECT_EQ(out.prediction.class_probs.shape(), (Shape{20, 7}));
  EXPECT_EQ(out.prediction.mask_logits.shape(), (Shape{20, 16, 32}));
  EXPECT_EQ(out.aux.size(), 9u);
  EXPECT_EQ(out.aux.back().mask_logits, out.prediction.mask_logits);
  const Tensor normed = layer_norm(out.final_queries.queries, p.ln_out.gain, p.ln_out.bias);
  const Tensor embed = mlp(normed, p.mask_head);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t i = rng.below(20), u = rng.below(16), v = rng.below(32);
    double dot = 0.0;
    for (std::size_t k = 0; k < 32; ++k) dot += embed(i, k) * pyr.embedding.tokens(u * 32 + v, k);
    EXPECT_NEAR(out.prediction.mask_logits[(i * 16 + u) * 32 + v], dot, 1e-12);
  }
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 7; ++k) s += out.prediction.class_probs(i, k);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Segmentation, StackIsPermutationEquivariant) {
  Rng rng(6);
  SegmentationParams p = init_segmentation({}, rng);
  const FeaturePyramid pyr = random_pyramid(rng, {64, 128});
  const auto perm = random_permutation(20, rng);
  const SegmentationOutput a = forward_segmentation(pyr, p, false);
  p.query_init = permute_rows(p.query_init, perm);
  const SegmentationOutput b = forward_segmentation(pyr, p, false);
  EXPECT_LE(max_abs_diff(permute_rows(a.final_queries.queries, perm), b.final_queries.queries),
            1e-12);
  EXPECT_LE(max_abs_diff(permute_rows(a.prediction.mask_logits, perm), b.prediction.mask_logits),
            1e-12);
  EXPECT_LE(max_abs_diff(permute_rows(a.prediction.class_probs, perm), b.prediction.class_probs),
            1e-12);
}

SegPrediction manual_prediction(std::size_t n, std::size_t classes, GridSize grid) {
  SegPrediction p;
  p.grid = grid;
  p.class_logits = Tensor({n, classes + 1});
  p.class_probs = Tensor({n, classes + 1});
  p.mask_logits = Tensor({n, grid.height, grid.width}, -10.0);
  return p;
}

TEST(Postprocess, SingleConfidentQueryCoversImage) {
  SegPrediction p = manual_prediction(1, 8, {8, 16});
  p.class_probs(0, 5) = 1.0;
  p.mask_logits.fill(10.0);
  const PanopticResult r = panoptic_postprocess(p, {32, 64}, {});
  EXPECT_EQ(r.kept_query_ids, std::vector<std::size_t>{0});
  ASSERT_EQ(r.panoptic.segments.size(), 1u);
  EXPECT_EQ(r.panoptic.segments[0].category_id, 6u);
  for (auto id : r.panoptic.ids) EXPECT_EQ(id, r.panoptic.segments[0].id);
}

TEST(Postprocess, AllNoObjectGivesVoid) {
  SegPrediction p = manual_prediction(4, 8, {8, 16});
  for (std::size_t i = 0; i < 4; ++i) p.class_probs(i, 8) = 1.0;
  p.mask_logits.fill(10.0);
  const PanopticResult r = panoptic_postprocess(p, {32, 64}, {});
  EXPECT_TRUE(r.kept_query_ids.empty());
  for (auto id : r.panoptic.ids) EXPECT_EQ(id, kVoidId);
  for (int o : r.owner) EXPECT_EQ(o, -1);
}

// Half-pixel-centre bilinear sample with edge clamping.
double bilinear_oracle(const double* map, GridSize from, GridSize to, std::size_t y,
                       std::size_t x) {
  auto axis = [](std::size_t o, std::size_t n_in, std::size_t n_out, std::size_t& i0,
                 std::size_t& i1, double& t) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(n_in) /
                   static_cast<double>(n_out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, n_in - 1);
    t = s - static_cast<double>(i0);
  };
  std::size_t y0, y1, x0, x1;
  double ty, tx;
  axis(y, from.height, to.height, y0, y1, ty);
  axis(x, from.width, to.width, x0, x1, tx);
  auto at = [&](std::size_t a, std::size_t b) { return map[a * from.width + b]; };
  return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
         ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
}

TEST(Postprocess, DisjointMasksMatchPerPixelArgmax) {
  const GridSize g{8, 16}, full{32, 64};
  SegPrediction p = manual_prediction(3, 8, g);
  p.class_probs(0, 1) = 0.9, p.class_probs(0, 8) = 0.1;
  p.class_probs(1, 6) = 0.8, p.class_probs(1, 8) = 0.2;
  p.class_probs(2, 8) = 1.0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      p.mask_logits[(0 * 8 + y) * 16 + x] = x < 8 ? 10.0 : -10.0;
      p.mask_logits[(1 * 8 + y) * 16 + x] = x >= 8 ? 10.0 : -10.0;
    }
  const PanopticResult r = panoptic_postprocess(p, full, {});
  EXPECT_EQ(r.kept_query_ids, (std::vector<std::size_t>{0, 1}));
  const std::vector<double> conf{0.9, 0.8};
  for (std::size_t y = 0; y < full.height; ++y)
    for (std::size_t x = 0; x < full.width; ++x) {
      int best = -1;
      double best_score = -1.0, best_prob = 0.0;
      for (int q = 0; q < 2; ++q) {
        const double prob = 1.0 / (1.0 + std::exp(-bilinear_oracle(
                                             &p.mask_logits[q * g.area()], g, full, y, x)));
        if (conf[q] * prob > best_score) best = q, best_score = conf[q] * prob, best_prob = prob;
      }
      const int expected = best_prob > 0.5 ? best : -1;
      EXPECT_EQ(r.owner[y * full.width + x], expected) << y << "," << x;
    }
  // Exact boundary: columns 0..31 belong to query 0.
  EXPECT_EQ(r.owner[31], 0);
  EXPECT_EQ(r.owner[32], 1);
}

TEST(Postprocess, SmallSegmentsAreDropped) {
  SegPrediction p = manual_prediction(1, 8, {8, 16});
  p.class_probs(0, 0) = 1.0;
  p.mask_logits[0] = 10.0;  // one cell: 4x4 = 16 full pixels < 32
  PostprocessConfig post;
  const PanopticResult r = panoptic_postprocess(p, {32, 64}, {}, post);
  EXPECT_TRUE(r.kept_query_ids.empty());
  post.min_area = 1;
  EXPECT_EQ(panoptic_postprocess(p, {32, 64}, {}, post).kept_query_ids.size(), 1u);
}

}  // namespace
}  // namespace unidps

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support/oracles.h"
#include "unidps/geometry/geometry.h"
#include "unidps/model/model.h"
#include "unidps/scene/generator.h"

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

void zero(Attention& a) {
  visit_params(a, "a", [](const std::string&, Tensor& t) { t.fill(0.0); });
}

struct Fixture {
  Rng rng{7};
  GeometryParams params = init_geometry({}, rng);
  FeaturePyramid depth = random_pyramid(rng, {64, 128});
  QuerySet x_o{random_tensor({20, 64}, rng)};
  Tensor logits = random_tensor({20, 16, 32}, rng, 3.0);
};

TEST(Enhancement, ZeroAttentionIsIdentity) {
  Fixture f;
  for (auto& b : f.params.blocks) {
    zero(b.latent_cross);
    zero(b.latent_self);
    zero(b.query_cross);
  }
  const auto r = enhance_queries(f.x_o, {f.params.latent_init}, f.depth, f.logits, f.params);
  EXPECT_EQ(r.enhanced.queries, f.x_o.queries);
}

TEST(Enhancement, PermutationEquivariantAndLatentInvariant) {
  Fixture f;
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 20; i > 1; --i) std::swap(perm[i - 1], perm[f.rng.below(i)]);
  const auto a = enhance_queries(f.x_o, {f.params.latent_init}, f.depth, f.logits, f.params);
  const auto b = enhance_queries(QuerySet{permute_rows(f.x_o.queries, perm)},
                                 {f.params.latent_init}, f.depth, permute_rows(f.logits, perm),
                                 f.params);
  EXPECT_LE(max_abs_diff(permute_rows(a.enhanced.queries, perm), b.enhanced.queries), 1e-12);
  EXPECT_LE(max_abs_diff(a.latent.latent, b.latent.latent), 1e-12);
}

TEST(Enhancement, SingleLatentShiftsEveryQueryEqually) {
  Rng rng(8);
  GeometryConfig c;
  c.num_latents = 1;
  const GeometryParams p = init_geometry(c, rng);
  const FeaturePyramid depth = random_pyramid(rng, {64, 128});
  const QuerySet x_o{random_tensor({5, 64}, rng)};
  const auto r = enhance_queries(x_o, {p.latent_init}, depth, random_tensor({5, 16, 32}, rng), p);
  const Tensor delta = r.enhanced.queries - x_o.queries;
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(delta(i, j), delta(0, j), 1e-12);
}

TEST(UnionMask, AllowsKeysCoveredByAnyQuery) {
  Tensor logits({2, 8, 16}, -5.0);
  logits[0] = 5.0;  // centre pixel of coarse cell (0, 0) at factor 2
  const AttentionMask m = union_mask(logits, {8, 16}, {4, 8}, 3);
  EXPECT_EQ(m.queries, 3u);
  for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(m.at(0, k), k == 0);
  for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(m.at(2, k), m.at(0, k));
}

TEST(DepthHead, ZeroProjectionGivesHalfMaxDepth) {
  Fixture f;
  auto& last = f.params.depth_head.layers.back();
  last.weight.fill(0.0);
  last.bias.fill(0.0);
  const Tensor d = depth_head(f.x_o.queries, f.depth.embedding, f.params, 80.0);
  for (double v : d.data()) EXPECT_EQ(v, 40.0);
}

TEST(DepthHead, PointwiseOracleAndMonotonicity) {
  Fixture f;
  const Tensor d = depth_head(f.x_o.queries, f.depth.embedding, f.params, 80.0);
  const Tensor psi =
      mlp(layer_norm(f.x_o.queries, f.params.ln_depth.gain, f.params.ln_depth.bias),
          f.params.depth_head);
  for (int t = 0; t < 50; ++t) {
    const std::size_t i = f.rng.below(20), px = f.rng.below(512);
    double dot = 0.0;
    for (std::size_t k = 0; k < 32; ++k) dot += psi(i, k) * f.depth.embedding.tokens(px, k);
    EXPECT_NEAR(d(i, px), 80.0 / (1.0 + std::exp(-dot)), 1e-10);
  }
  // Scaling the embedding of one pixel along psi_0 raises the dot product.
  FeatureMap e = f.depth.embedding;
  double base = 0.0;
  for (int step = 0; step < 5; ++step) {
    for (std::size_t k = 0; k < 32; ++k) e.tokens(0, k) += 0.1 * psi(0, k);
    const double v = depth_head(f.x_o.queries, e, f.params, 80.0)(0, 0);
    EXPECT_GT(v, base);
    base = v;
  }
}

PanopticResult owners(GridSize full, std::size_t n, const std::vector<int>& owner) {
  PanopticResult r;
  r.panoptic = PanopticMap(full.height, full.width);
  r.owner = owner;
  r.confidence.assign(n, 0.9);
  return r;
}

TEST(Aggregate, SingleOwnerTakesItsMap) {
  Rng rng(9);
  const GridSize grid{8, 16}, full{32, 64};
  Tensor seg = random_tensor({2, 8, 16}, rng);
  for (double& v : seg.data()) v = 10.0 + std::abs(v);
  const DepthMap d = aggregate_depth(seg, Tensor(), grid,
                                     owners(full, 2, std::vector<int>(full.area(), 1)));
  const BilinearPlan plan(grid, full);
  for (std::size_t px = 0; px < full.area(); ++px) {
    EXPECT_TRUE(d.valid[px]);
    EXPECT_EQ(d.depth[px], plan.sample(&seg[grid.area()], px));
  }
}

TEST(Aggregate, NoOwnersFallsBackToBackup) {
  Rng rng(10);
  const GridSize grid{8, 16}, full{32, 64};
  const Tensor seg = random_tensor({2, 8, 16}, rng);
  Tensor backup = random_tensor({8, 16}, rng);
  for (double& v : backup.data()) v = 5.0 + std::abs(v);
  const DepthMap d = aggregate_depth(seg, backup, grid,
                                     owners(full, 2, std::vector<int>(full.area(), -1)));
  const BilinearPlan plan(grid, full);
  for (std::size_t px = 0; px < full.area(); ++px)
    EXPECT_EQ(d.depth[px], plan.sample(backup.data().data(), px));
  EXPECT_TRUE(d.all_valid());
  const DepthMap none = aggregate_depth(seg, Tensor(), grid,
                                        owners(full, 2, std::vector<int>(full.area(), -1)));
  EXPECT_EQ(none.valid_count(), 0u);
}

TEST(Aggregate, HolePixelsTakeBackupExactly) {
  Rng rng(11);
  const GridSize grid{8, 16}, full{32, 64};
  Tensor seg = random_tensor({2, 8, 16}, rng), backup = random_tensor({8, 16}, rng);
  std::vector<int> owner(full.area(), -1);
  for (std::size_t y = 0; y < full.height; ++y)
    for (std::size_t x = 0; x < full.width; ++x) {
      if (x < 20) owner[y * full.width + x] = 0;
      else if (x >= 40) owner[y * full.width + x] = 1;
    }
  const DepthMap d = aggregate_depth(seg, backup, grid, owners(full, 2, owner));
  const BilinearPlan plan(grid, full);
  for (std::size_t px = 0; px < full.area(); ++px) {
    const double expected = owner[px] < 0 ? plan.sample(backup.data().data(), px)
                                          : plan.sample(&seg[owner[px] * grid.area()], px);
    EXPECT_EQ(d.depth[px], expected);
  }
}

TEST(Model, SegmentationUnaffectedByGeometryToggles) {
  ModelConfig on;
  ModelConfig off = on;
  off.enable_enhancement = off.enable_backup = false;
  const ModelParams params = init_model(on, 3);
  Rng rng(4);
  SceneConfig sc;
  sc.height = 32;
  sc.width = 64;
  const Scene s = generate_scene(sc, rng);
  const ModelOutput a = forward_model(s.image, params, on, true);
  const ModelOutput b = forward_model(s.image, params, off, true);
  EXPECT_EQ(a.segmentation.prediction.class_logits, b.segmentation.prediction.class_logits);
  EXPECT_EQ(a.segmentation.prediction.mask_logits, b.segmentation.prediction.mask_logits);
  EXPECT_EQ(a.segmentation.final_queries.queries, b.segmentation.final_queries.queries);
  EXPECT_NE(a.enhanced.queries, b.enhanced.queries);
}

TEST(Model, BackupCoversFilteredPredictions) {
  ModelConfig config;
  PostprocessConfig post;
  post.score_threshold = 0.999;  // nothing passes
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams params = init_model(config, seed);
    Rng rng(seed);
    SceneConfig sc;
    sc.height = 32;
    sc.width = 64;
    const Scene s = generate_scene(sc, rng);
    const Prediction p = predict(s.image, params, config, {}, post);
    EXPECT_TRUE(p.depth.all_valid());
    for (double v : p.depth.depth) EXPECT_TRUE(std::isfinite(v) && v > 0.0);
  }
}

}  // namespace
}  // namespace unidps

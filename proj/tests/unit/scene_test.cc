#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "support/oracles.h"
#include "unidps/cli/commands.h"
#include "unidps/metrics/metrics.h"
#include "unidps/scene/encoder.h"
#include "unidps/scene/generator.h"
#include "unidps/scene/io.h"

namespace unidps {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unidps_scene_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Generator, SingleStuffBandCoversImage) {
  SceneConfig c;
  c.things = 0;
  c.stuff_bands = 1;
  Rng rng(3);
  const Scene s = generate_scene(c, rng);
  ASSERT_EQ(s.panoptic.segments.size(), 1u);
  for (auto id : s.panoptic.ids) EXPECT_EQ(id, s.panoptic.segments[0].id);
  EXPECT_EQ(panoptic_quality(s.panoptic, s.panoptic), 1.0);
}

TEST(Generator, PartitionAndConservation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneConfig c;
    c.things = static_cast<int>(seed % 9);
    c.stuff_bands = 1 + static_cast<int>(seed % 4);
    Rng rng(seed);
    const Scene s = generate_scene(c, rng);
    EXPECT_NO_THROW(s.panoptic.validate());
    std::size_t total = 0;
    for (auto a : s.panoptic.areas()) {
      EXPECT_GT(a, 0u);
      total += a;
    }
    EXPECT_EQ(total, c.height * c.width);  // generated scenes have no void
    std::set<std::uint32_t> stuff;
    for (const auto& seg : s.panoptic.segments) {
      EXPECT_EQ(seg.is_thing, c.categories.is_thing(seg.category_id));
      if (!seg.is_thing) {
        EXPECT_TRUE(stuff.insert(seg.category_id).second);
      }
    }
    for (std::size_t i = 0; i < s.depth.depth.size(); ++i) {
      EXPECT_TRUE(s.depth.valid[i]);
      EXPECT_GE(s.depth.depth[i], 1.0);
      EXPECT_LE(s.depth.depth[i], c.max_depth);
    }
    for (double v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Generator, SparsityKeepsDenseValues) {
  SceneConfig c;
  Rng a(11), b(11);
  const Scene dense = generate_scene(c, a);
  c.sparsity = 0.25;
  const Scene sparse = generate_scene(c, b);
  EXPECT_EQ(sparse.panoptic, dense.panoptic);
  EXPECT_EQ(sparse.depth.valid_count(), c.height * c.width / 4);
  for (std::size_t i = 0; i < dense.depth.depth.size(); ++i)
    if (sparse.depth.valid[i]) {
      EXPECT_EQ(sparse.depth.depth[i], dense.depth.depth[i]);
    }
}

TEST(Generator, InvalidConfigNamesConstraint) {
  SceneConfig c;
  c.height = 48;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("multiples of 32"), std::string::npos);
  }
  c = {};
  c.things = 9;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.sparsity = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Generator, GoldenSnapshotSeed42) {
  ExperimentConfig config;
  config.seed = 42;
  config.scenes = 1;
  const fs::path out = temp_dir("golden");
  cmd_gen(config, out);
  const fs::path golden = fs::path(UNIDPS_TEST_DATA_DIR) / "gen_seed42";
  ASSERT_TRUE(fs::exists(golden)) << golden;
  for (const char* f : {"manifest.json", "config.json", "scene_00000/image.ppm",
                        "scene_00000/panoptic.png", "scene_00000/depth.png",
                        "scene_00000/meta.json"})
    EXPECT_EQ(slurp(out / f), slurp(golden / f)) << f;
}

TEST(Encoder, ShapesPerScale) {
  EncoderConfig c;
  Rng rng(0);
  const EncoderParams p = init_encoder(c, rng);
  const EncodedFeatures f = encode_features(Tensor({3, 64, 128}), p);
  for (const FeaturePyramid* py : {&f.semantic, &f.depth}) {
    EXPECT_EQ(py->levels[0].chw(), (Shape{64, 8, 16}));
    EXPECT_EQ(py->levels[1].chw(), (Shape{64, 4, 8}));
    EXPECT_EQ(py->levels[2].chw(), (Shape{64, 2, 4}));
    EXPECT_EQ(py->embedding.chw(), (Shape{32, 16, 32}));
  }
}

EncoderParams zero_bias_encoder(Rng& rng) {
  EncoderParams p = init_encoder({}, rng);
  visit_params(p, "e", [](const std::string& name, Tensor& t) {
    if (name.ends_with(".bias")) t.fill(0.0);
  });
  return p;
}

TEST(Encoder, ZeroImageZeroBiasGivesZeros) {
  Rng rng(1);
  const EncodedFeatures f = encode_features(Tensor({3, 32, 64}), zero_bias_encoder(rng));
  for (const FeaturePyramid* py : {&f.semantic, &f.depth}) {
    for (const auto& l : py->levels)
      for (double v : l.tokens.data()) EXPECT_EQ(v, 0.0);
    for (double v : py->embedding.tokens.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encoder, LinearInImageWithZeroBiases) {
  Rng rng(2);
  const EncoderParams p = zero_bias_encoder(rng);
  const Tensor image = oracle::random_tensor({3, 32, 64}, rng);
  const double alpha = rng.uniform(0.2, 3.0);
  const EncodedFeatures a = encode_features(image * alpha, p);
  const EncodedFeatures b = encode_features(image, p);
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    EXPECT_LE(max_abs_diff(a.semantic.levels[l].tokens, b.semantic.levels[l].tokens * alpha), 1e-10);
    EXPECT_LE(max_abs_diff(a.depth.levels[l].tokens, b.depth.levels[l].tokens * alpha), 1e-10);
  }
  EXPECT_LE(max_abs_diff(a.semantic.embedding.tokens, b.semantic.embedding.tokens * alpha), 1e-10);
}

TEST(Encoder, RejectsSizesNotDivisibleBy32) {
  Rng rng(0);
  const EncoderParams p = init_encoder({}, rng);
  EXPECT_THROW(encode_features(Tensor({3, 48, 64}), p), DimensionError);
}

TEST(Io, Encodings) {
  EXPECT_EQ(encode_depth(1.0), 256);
  EXPECT_EQ(decode_depth(256), 1.0);
  EXPECT_EQ(encode_panoptic_id(11, 2), 11002u);
  EXPECT_EQ(category_of(11002), 11u);
}

TEST(Io, SceneRoundTrip) {
  for (auto mode : {AnnotationMode::kFull, AnnotationMode::kPanopticOnly,
                    AnnotationMode::kDepthOnly}) {
    SceneConfig c;
    c.sparsity = 0.5;
    Rng rng(5);
    Scene s = generate_scene(c, rng);
    s.mode = mode;
    const fs::path dir = temp_dir("roundtrip");
    write_scene(s, dir);
    EXPECT_EQ(read_scene(dir), s);
  }
}

TEST(Io, Png16RoundTripAndParseErrors) {
  const fs::path dir = temp_dir("png");
  Gray16 g{3, 5, {}};
  for (int i = 0; i < 15; ++i) g.pixels.push_back(static_cast<std::uint16_t>(i * 4099));
  write_png16(dir / "a.png", g);
  const Gray16 r = read_png16(dir / "a.png");
  EXPECT_EQ(r.pixels, g.pixels);
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(read_png16(dir / "bad.png"), ParseError);
  EXPECT_THROW(read_png16(dir / "missing.png"), ParseError);
  std::ofstream(dir / "meta.json") << "{\"segments\": 3}";
  EXPECT_THROW(read_panoptic(dir), ParseError);
}

TEST(Io, ReadRejectsUnlistedIds) {
  SceneConfig c;
  Rng rng(6);
  Scene s = generate_scene(c, rng);
  s.panoptic.segments.pop_back();
  const fs::path dir = temp_dir("unlisted");
  EXPECT_ANY_THROW({
    write_scene(s, dir);
    read_scene(dir);
  });
}

}  // namespace
}  // namespace unidps

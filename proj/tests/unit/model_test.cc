#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "unidps/model/train.h"
#include "unidps/scene/generator.h"

namespace unidps {
namespace {

namespace fs = std::filesystem;

ModelConfig tiny_model() {
  ModelConfig m;
  m.channels = 16;
  m.pixel_embed_channels = 8;
  m.depth_embed_channels = 8;
  m.num_queries = 6;
  m.num_latents = 4;
  m.num_layers = 3;
  m.ffn_hidden = 24;
  return m;
}

std::vector<Scene> tiny_scenes(std::size_t n) {
  SceneConfig c;
  c.height = 32;
  c.width = 64;
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(7, i);
    scenes.push_back(generate_scene(c, rng));
  }
  scenes[1].mode = AnnotationMode::kDepthOnly;
  return scenes;
}

TrainOptions tiny_options() {
  TrainOptions o;
  o.model = tiny_model();
  o.loss.patch = 3;
  o.optimizer.steps = 5;
  o.optimizer.batch_size = 2;
  o.optimizer.learning_rate = 0.02;
  o.seed = 3;
  return o;
}

bool same_params(ModelParams a, ModelParams b) {
  std::vector<Tensor> ta, tb;
  visit_params(a, [&](const std::string&, Tensor& t) { ta.push_back(t); });
  visit_params(b, [&](const std::string&, Tensor& t) { tb.push_back(t); });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i].shape() != tb[i].shape() ||
        !std::ranges::equal(ta[i].data(), tb[i].data()))
      return false;
  return true;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unidps_model_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- construction ----

TEST(Model, InitialisationIsSeeded) {
  const ModelConfig m = tiny_model();
  EXPECT_TRUE(same_params(init_model(m, 1), init_model(m, 1)));
  EXPECT_FALSE(same_params(init_model(m, 1), init_model(m, 2)));
}

TEST(Model, RejectsInconsistentConfig) {
  ModelConfig m = tiny_model();
  m.num_queries = 0;
  EXPECT_THROW(m.validate(), ConfigError);
  m = tiny_model();
  m.channels = 10;
  EXPECT_THROW(init_model(m, 1), ConfigError);
}

TEST(Model, PredictionShapes) {
  const ModelConfig m = tiny_model();
  const Scene s = tiny_scenes(2)[0];
  const Prediction p = predict(s.image, init_model(m, 4), m, {});
  EXPECT_EQ(p.panoptic.panoptic.height, 32u);
  EXPECT_EQ(p.panoptic.panoptic.width, 64u);
  EXPECT_NO_THROW(p.panoptic.panoptic.validate());
  EXPECT_EQ(p.depth.height, 32u);
  EXPECT_EQ(p.depth.width, 64u);
  EXPECT_TRUE(p.depth.all_valid());  // the backup map covers every unowned pixel
  for (double d : p.depth.depth) {
    EXPECT_GT(d, 0.0);
    EXPECT_LT(d, m.max_depth);
  }
}

// ---- schedule ----

TEST(Optimizer, CosineSchedule) {
  OptimizerConfig o;
  o.steps = 10;
  o.learning_rate = 0.1;
  EXPECT_DOUBLE_EQ(o.learning_rate_at(1), 0.1);
  EXPECT_NEAR(o.learning_rate_at(6), 0.05, 1e-15);
  EXPECT_NEAR(o.learning_rate_at(10), 0.05 * (1 + std::cos(std::numbers::pi * 0.9)), 1e-15);
  for (std::size_t s = 2; s <= 10; ++s) EXPECT_LT(o.learning_rate_at(s), o.learning_rate_at(s - 1));
  EXPECT_EQ(o.stage1_steps(), 6u);
}

TEST(Optimizer, RejectsBadValues) {
  OptimizerConfig o;
  o.momentum = 1.0;
  EXPECT_THROW(o.validate(), ConfigError);
  o = {};
  o.stage1_fraction = 1.5;
  EXPECT_THROW(o.validate(), ConfigError);
}

TEST(Optimizer, BatchSelection) {
  const auto a = batch_for_step(10, 4, 1, 3);
  EXPECT_EQ(a, batch_for_step(10, 4, 1, 3));
  EXPECT_EQ(a.size(), 4u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  for (std::size_t v : a) EXPECT_LT(v, 10u);
  EXPECT_EQ(batch_for_step(3, 0, 1, 1), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(batch_for_step(3, 8, 1, 1).size(), 3u);
}

// ---- training ----

TEST(Train, ZeroStepsLeavesStateUntouched) {
  TrainOptions o = tiny_options();
  o.optimizer.steps = 0;
  const ModelParams p = init_model(o.model, 1);
  const TrainResult r = train(tiny_scenes(3), initial_state(p), o);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.state.step, 0u);
  EXPECT_TRUE(same_params(r.state.params, p));
}

TEST(Train, StagesGateTheLossTerms) {
  TrainOptions o = tiny_options();
  const TrainResult r = train(tiny_scenes(3), initial_state(init_model(o.model, 1)), o);
  ASSERT_EQ(r.history.size(), 5u);
  for (const StepRecord& s : r.history) {
    EXPECT_EQ(s.stage, s.step <= 3 ? 1 : 2);
    if (s.stage == 1) {
      EXPECT_FALSE(s.loss.has_depth || s.loss.has_dg);
    }
    EXPECT_TRUE(std::isfinite(s.loss.total));
    EXPECT_GT(s.scenes, 0u);
  }
  EXPECT_EQ(r.state.step, 5u);
  EXPECT_FALSE(r.diverged);
}

TEST(Train, IndependentOfJobCount) {
  TrainOptions o = tiny_options();
  const auto scenes = tiny_scenes(4);
  const TrainState init = initial_state(init_model(o.model, 1));
  const TrainResult one = train(scenes, init, o);
  o.jobs = 3;
  const TrainResult three = train(scenes, init, o);
  EXPECT_TRUE(same_params(one.state.params, three.state.params));
  for (std::size_t i = 0; i < one.history.size(); ++i)
    EXPECT_EQ(one.history[i].loss.total, three.history[i].loss.total);
}

TEST(Train, InterruptedRunResumesExactly) {
  TrainOptions o = tiny_options();
  const auto scenes = tiny_scenes(3);
  const TrainState init = initial_state(init_model(o.model, 1));
  const TrainResult full = train(scenes, init, o);

  const fs::path dir = scratch_dir("resume");
  o.stop_at = 2;
  const TrainResult first = train(scenes, init, o);
  EXPECT_EQ(first.state.step, 2u);
  save_checkpoint(dir / "ckpt.bin", first.state, "{}");
  o.stop_at = 0;
  const TrainState loaded = load_checkpoint(dir / "ckpt.bin", init.params);
  const TrainResult rest = train(scenes, loaded, o);
  EXPECT_TRUE(same_params(rest.state.params, full.state.params));
  EXPECT_TRUE(same_params(rest.state.momentum, full.state.momentum));
  ASSERT_EQ(rest.history.size(), 3u);
  EXPECT_EQ(rest.history.back().loss.total, full.history.back().loss.total);
}

TEST(Train, NonFiniteUpdateStopsWithLastGoodState) {
  TrainOptions o = tiny_options();
  o.optimizer.clip_norm = 0.0;
  o.optimizer.learning_rate = 1e300;
  const TrainState init = initial_state(init_model(o.model, 1));
  const TrainResult r = train(tiny_scenes(3), init, o);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.message.empty());
  visit_params(const_cast<ModelParams&>(r.state.params), [](const std::string&, Tensor& t) {
    for (double v : t.data()) ASSERT_TRUE(std::isfinite(v));
  });
}

TEST(Train, NoSupervisedSceneThrows) {
  TrainOptions o = tiny_options();
  auto scenes = tiny_scenes(2);
  for (Scene& s : scenes) s.mode = AnnotationMode::kDepthOnly;
  EXPECT_THROW(train(scenes, initial_state(init_model(o.model, 1)), o), std::invalid_argument);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTrip) {
  const fs::path dir = scratch_dir("roundtrip");
  TrainState s = initial_state(init_model(tiny_model(), 5));
  visit_params(s.momentum, [](const std::string&, Tensor& t) { std::ranges::fill(t.data(), 0.25); });
  s.step = 17;
  save_checkpoint(dir / "a.bin", s, R"({"x":1})");
  std::string cfg;
  const TrainState back = load_checkpoint(dir / "a.bin", init_model(tiny_model(), 9), &cfg);
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(cfg, R"({"x":1})");
  EXPECT_EQ(read_checkpoint_config(dir / "a.bin"), cfg);
  EXPECT_TRUE(same_params(back.params, s.params));
  EXPECT_TRUE(same_params(back.momentum, s.momentum));
}

TEST(Checkpoint, LayoutMismatchAndMissingFileThrow) {
  const fs::path dir = scratch_dir("mismatch");
  save_checkpoint(dir / "a.bin", initial_state(init_model(tiny_model(), 5)), "{}");
  ModelConfig other = tiny_model();
  other.channels = 8;
  EXPECT_ANY_THROW(load_checkpoint(dir / "a.bin", init_model(other, 5)));
  EXPECT_ANY_THROW(load_checkpoint(dir / "missing.bin", init_model(tiny_model(), 5)));
}

}  // namespace
}  // namespace unidps

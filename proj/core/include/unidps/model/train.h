#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unidps/losses/total.h"
#include "unidps/model/model.h"

namespace unidps {

struct OptimizerConfig {
  std::size_t steps = 2000;
  double learning_rate = 0.05;  // peak of the cosine schedule
  double momentum = 0.9;
  double clip_norm = 1.0;       // global gradient norm cap, 0 = off
  double stage1_fraction = 0.6;  // leading share of steps with segmentation losses only
  std::size_t batch_size = 0;   // scenes per step, 0 = all supervising scenes
  std::size_t checkpoint_every = 100;

  void validate() const;
  std::size_t stage1_steps() const;
  // Learning rate used by 1-based step `step`.
  double learning_rate_at(std::size_t step) const;
};

struct TrainState {
  ModelParams params;
  ModelParams momentum;
  std::size_t step = 0;  // completed steps
};

TrainState initial_state(const ModelParams& params);

struct StepRecord {
  std::size_t step = 0;
  int stage = 1;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
  std::size_t scenes = 0;
  LossReport loss;  // per-term means over the scenes that supervise the term

  nlohmann::json to_json() const;
};

struct TrainOptions {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;  // drives minibatch selection
  std::size_t jobs = 1;
  // Interrupt after this step (0 = run to optimizer.steps); the schedule is
  // unchanged, so a later resume continues the same trajectory.
  std::size_t stop_at = 0;
  // Called after every completed step with the updated state.
  std::function<void(const StepRecord&, const TrainState&)> on_step;
};

struct TrainResult {
  TrainState state;  // last finite state
  std::vector<StepRecord> history;
  bool diverged = false;
  std::string message;
};

// Positions (ascending) drawn for 1-based step `step` from a list of
// num_scenes candidates; train() passes the scenes that supervise the stage.
std::vector<std::size_t> batch_for_step(std::size_t num_scenes, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t step);

// Runs steps state.step + 1 .. optimizer.steps. Per-scene gradients are
// reduced in scene order, so results do not depend on `jobs`. Stops early
// with diverged = true when a loss or gradient is not finite; the returned
// state is then the one before the failing step.
TrainResult train(const std::vector<Scene>& scenes, TrainState state, const TrainOptions& options);

// Binary checkpoint (cereal): parameter and momentum tensors by name, the
// completed step count and the experiment config it was produced with.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const std::string& config_json);
// `like` supplies the parameter layout; names and shapes must agree.
TrainState load_checkpoint(const std::filesystem::path& path, const ModelParams& like,
                           std::string* config_json = nullptr);
std::string read_checkpoint_config(const std::filesystem::path& path);

}  // namespace unidps

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "unidps/losses/gradcheck.h"
#include "unidps/losses/total.h"
#include "unidps/model/train.h"
#include "unidps/scene/generator.h"
#include "unidps/segmentation/postprocess.h"

namespace unidps {

// Share of generated scenes per annotation mode.
struct SplitConfig {
  double full = 1.0;
  double panoptic_only = 0.0;
  double depth_only = 0.0;

  void validate() const;
  // Exactly round(n * share) scenes per partial mode (full takes the rest),
  // placed by a seeded shuffle.
  std::vector<AnnotationMode> assign(std::size_t n, std::uint64_t seed) const;
};

struct GradcheckConfig {
  std::size_t height = 32;
  std::size_t width = 64;
  // Guidance window used during the check; at 32 x 64 the 1/8 grid has four
  // rows, so a 5 x 5 window would leave both guidance terms without anchors.
  std::size_t patch = 3;
  std::size_t samples = 500;
  double tolerance = 1e-4;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t scenes = 1;  // number of scenes written by `gen`
  // Train on every annotation regardless of each scene's annotation mode.
  bool full_supervision = false;
  SceneConfig scene;
  SplitConfig split;
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  PostprocessConfig postprocess;
  GradcheckConfig gradcheck;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace unidps

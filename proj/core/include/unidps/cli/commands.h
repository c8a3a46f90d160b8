#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unidps/cli/experiment.h"
#include "unidps/metrics/metrics.h"
#include "unidps/scene/io.h"

namespace unidps {

// Training stopped on a non-finite loss; the last finite state was saved.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Scene> scenes;
};

Dataset load_dataset(const std::filesystem::path& dir, std::size_t jobs = 1);

// Writes config.json, config.scenes scenes and manifest.json.
void cmd_gen(const ExperimentConfig& config, const std::filesystem::path& out, std::size_t jobs = 1);

struct FitSummary {
  std::size_t steps = 0;
  std::optional<StepRecord> first;
  std::optional<StepRecord> last;
};

// Writes config.json, loss_log.jsonl (one JSON object per step) and
// checkpoint.bin (every optimizer.checkpoint_every steps and at the end).
// With resume, continues from out/checkpoint.bin, which must come from the
// same config. A nonzero stop_at interrupts after that step. Throws
// DivergenceError after saving the last finite state.
FitSummary cmd_fit(const ExperimentConfig& config, const std::filesystem::path& dataset,
                   const std::filesystem::path& out, std::size_t jobs = 1, bool resume = false,
                   std::size_t stop_at = 0);

struct EvalSource {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> predictions;  // directory of exported scenes
};

// Evaluates against every annotation stored on disk. Checkpoint evaluation
// uses the config stored in the checkpoint and also exports its predictions
// under out/predictions. Writes out/report.json.
MetricReport cmd_eval(const std::filesystem::path& dataset, const EvalSource& source,
                      const std::filesystem::path& out, std::size_t jobs = 1,
                      const CategoryTable& categories = {});

// Generates a gradcheck.height x gradcheck.width scene and checks every loss
// term. Writes out/gradcheck.json when out is non-empty.
GradcheckReport cmd_gradcheck(const ExperimentConfig& config, const std::filesystem::path& out,
                              const std::optional<std::string>& corrupt = std::nullopt);

struct AblationVariant {
  std::string name;
  std::string label;
  ExperimentConfig config;
};

// table 4 ladder: A (depth from the global map only), B (+ instance-wise depth),
// C (+ backup query), D (+ semantic guidance), E (+ depth guidance).
// table 5 ladder: full supervision, then the dataset's annotation split with no
// guidance, + depth guidance, + semantic guidance, + both.
std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base, int table);

// Trains and evaluates each variant under out/<name>/ and writes
// out/table.json.
nlohmann::json cmd_ablate(const ExperimentConfig& config, const std::filesystem::path& dataset,
                          const std::filesystem::path& out, int table, std::size_t jobs = 1);

}  // namespace unidps

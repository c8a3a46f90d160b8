#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "unidps/cli/commands.h"

namespace fs = std::filesystem;

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("unidps");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("UNIDPS_LOG")) {
    const std::string level = env;
    if (level == "error")
      spdlog::set_level(spdlog::level::err);
    else if (level == "debug")
      spdlog::set_level(spdlog::level::debug);
    else if (level != "info")
      spdlog::warn("UNIDPS_LOG={} not recognised; using info", level);
  }
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string predictions;
  std::string checkpoint;
  std::size_t jobs = 1;
  bool resume = false;
  std::size_t stop_at = 0;
  std::string corrupt;
  int table = 5;
};

unidps::ExperimentConfig resolve_config(const Options& o) {
  unidps::ExperimentConfig c =
      o.config.empty() ? unidps::ExperimentConfig{} : unidps::load_experiment_config(o.config);
  if (o.seed) c.seed = *o.seed;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Synthetic depth-aware panoptic segmentation experiments"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  common(gen);
  gen->add_option("--out", o.out, "Dataset directory")->required();

  auto* fit = app.add_subcommand("fit", "Train on a dataset");
  common(fit);
  fit->add_option("--dataset", o.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  fit->add_option("--out", o.out, "Run directory")->required();
  fit->add_flag("--resume", o.resume, "Continue from <out>/checkpoint.bin");
  fit->add_option("--stop-at", o.stop_at, "Interrupt after this step (0 = run to the end)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or exported predictions");
  eval->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--dataset", o.dataset, "Ground-truth dataset")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", o.out, "Report directory")->required();
  auto* ck = eval->add_option("--checkpoint", o.checkpoint, "Checkpoint produced by fit")
                 ->check(CLI::ExistingFile);
  auto* pr = eval->add_option("--predictions", o.predictions, "Directory of exported scenes")
                 ->check(CLI::ExistingDirectory);
  ck->excludes(pr);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
  common(grad);
  grad->add_option("--out", o.out, "Directory for gradcheck.json");
  grad->add_option("--corrupt", o.corrupt, "Scale one term's analytic gradient (negative control)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate an ablation table");
  common(ablate);
  ablate->add_option("--dataset", o.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", o.out, "Output directory")->required();
  ablate->add_option("--table", o.table, "Ablation table (4 or 5)")->check(CLI::IsMember({4, 5}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      unidps::cmd_gen(resolve_config(o), o.out, o.jobs);
    } else if (fit->parsed()) {
      const auto summary = unidps::cmd_fit(resolve_config(o), o.dataset, o.out, o.jobs, o.resume,
                                           o.stop_at);
      if (summary.first && summary.last)
        std::cout << "loss " << summary.first->loss.total << " -> " << summary.last->loss.total
                  << " after " << summary.steps << " steps\n";
    } else if (eval->parsed()) {
      if (o.checkpoint.empty() == o.predictions.empty()) {
        std::cerr << "eval: give exactly one of --checkpoint or --predictions\n";
        return 2;
      }
      unidps::EvalSource source;
      if (!o.checkpoint.empty()) source.checkpoint = o.checkpoint;
      if (!o.predictions.empty()) source.predictions = o.predictions;
      const auto report = unidps::cmd_eval(o.dataset, source, o.out, o.jobs);
      std::cout << report.to_json().dump(2) << '\n';
    } else if (grad->parsed()) {
      std::optional<std::string> corrupt;
      if (!o.corrupt.empty()) corrupt = o.corrupt;
      const auto report = unidps::cmd_gradcheck(resolve_config(o), o.out, corrupt);
      for (const auto& t : report.terms)
        std::cout << t.term << " worst_rel " << t.worst_rel << (t.pass ? " PASS" : " FAIL")
                  << '\n';
      std::cout << "runtime " << report.seconds << " s\n";
      return report.pass ? 0 : 1;
    } else if (ablate->parsed()) {
      const auto table = unidps::cmd_ablate(resolve_config(o), o.dataset, o.out, o.table, o.jobs);
      std::cout << table.dump(2) << '\n';
    }
  } catch (const unidps::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

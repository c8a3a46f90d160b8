#include "unidps/cli/commands.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "unidps/numerics/parallel.h"
#include "unidps/scene/io.h"

namespace unidps {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_config(const ExperimentConfig& config, const fs::path& out) {
  fs::create_directories(out);
  write_json(out / "config.json", config.to_json());
}

std::vector<Scene> training_view(std::vector<Scene> scenes, bool full_supervision) {
  if (full_supervision)
    for (Scene& s : scenes) s.mode = AnnotationMode::kFull;
  return scenes;
}

}  // namespace

Dataset load_dataset(const fs::path& dir, std::size_t jobs) {
  Dataset d;
  d.manifest = read_manifest(dir);
  d.scenes.resize(d.manifest.scenes.size());
  parallel_for(d.scenes.size(), jobs,
               [&](std::size_t i) { d.scenes[i] = read_scene(dir / d.manifest.scenes[i]); });
  return d;
}

void cmd_gen(const ExperimentConfig& config, const fs::path& out, std::size_t jobs) {
  config.validate();
  write_config(config, out);
  const auto modes = config.split.assign(config.scenes, config.seed);
  DatasetManifest manifest;
  manifest.config = config.to_json();
  manifest.seed = config.seed;
  for (std::size_t i = 0; i < config.scenes; ++i) manifest.scenes.push_back(scene_name(i));
  parallel_for(config.scenes, jobs, [&](std::size_t i) {
    Rng rng = Rng::stream(config.seed, i);
    Scene s = generate_scene(config.scene, rng);
    s.mode = modes[i];
    write_scene(s, out / manifest.scenes[i]);
  });
  write_manifest(out, manifest);
  spdlog::info("gen: wrote {} scenes to {}", config.scenes, out.string());
}

FitSummary cmd_fit(const ExperimentConfig& config, const fs::path& dataset, const fs::path& out,
                   std::size_t jobs, bool resume, std::size_t stop_at) {
  config.validate();
  write_config(config, out);
  const std::string config_text = config.to_json().dump();
  const Dataset data = load_dataset(dataset, jobs);
  const std::vector<Scene> scenes = training_view(data.scenes, config.full_supervision);

  const ModelParams init = init_model(config.model, config.seed);
  TrainState state = initial_state(init);
  const fs::path checkpoint = out / "checkpoint.bin";
  const fs::path log_path = out / "loss_log.jsonl";
  if (resume && fs::exists(checkpoint)) {
    std::string stored;
    state = load_checkpoint(checkpoint, init, &stored);
    if (stored != config_text)
      throw ConfigError("fit --resume: checkpoint was produced with a different config");
    // Keep only log lines the checkpoint already covers.
    std::vector<std::string> kept;
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line);)
      if (!line.empty() && json::parse(line).at("step").get<std::size_t>() <= state.step)
        kept.push_back(line);
    std::ofstream rewrite(log_path, std::ios::trunc);
    for (const auto& line : kept) rewrite << line << '\n';
    spdlog::info("fit: resuming at step {}", state.step);
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }

  std::ofstream log(log_path, std::ios::app);
  TrainOptions options;
  options.model = config.model;
  options.loss = config.loss;
  options.optimizer = config.optimizer;
  options.seed = config.seed;
  options.jobs = jobs;
  options.stop_at = stop_at;
  FitSummary summary;
  options.on_step = [&](const StepRecord& rec, const TrainState& s) {
    log << rec.to_json().dump() << '\n';
    log.flush();
    if (!summary.first) summary.first = rec;
    summary.last = rec;
    const bool periodic =
        config.optimizer.checkpoint_every > 0 && rec.step % config.optimizer.checkpoint_every == 0;
    if (periodic) save_checkpoint(checkpoint, s, config_text);
    if (rec.step == 1 || rec.step % 100 == 0 || rec.step == config.optimizer.steps ||
        rec.step == stop_at)
      spdlog::info("fit: step {} stage {} loss {:.5f}", rec.step, rec.stage, rec.loss.total);
  };

  TrainResult result = train(scenes, std::move(state), options);
  save_checkpoint(checkpoint, result.state, config_text);
  summary.steps = result.state.step;
  if (result.diverged) {
    spdlog::error("fit: {}; last finite state saved at step {}", result.message,
                  result.state.step);
    throw DivergenceError(result.message);
  }
  return summary;
}

MetricReport cmd_eval(const fs::path& dataset, const EvalSource& source, const fs::path& out,
                      std::size_t jobs, const CategoryTable& categories) {
  if (source.checkpoint.has_value() == source.predictions.has_value())
    throw std::invalid_argument("eval: give exactly one of --checkpoint or --predictions");
  Dataset data = load_dataset(dataset, jobs);
  for (Scene& s : data.scenes) s.mode = AnnotationMode::kFull;
  CategoryTable table = categories;
  if (data.manifest.config.is_object())
    table = ExperimentConfig::from_json(data.manifest.config).scene.categories;
  fs::create_directories(out);

  const std::size_t n = data.scenes.size();
  std::vector<PanopticMap> pans(n);
  std::vector<DepthMap> depths(n);
  if (source.checkpoint) {
    // The checkpoint stores its config, which fixes the parameter layout.
    const ExperimentConfig stored = ExperimentConfig::from_json(
        json::parse(read_checkpoint_config(*source.checkpoint)));
    const TrainState state =
        load_checkpoint(*source.checkpoint, init_model(stored.model, stored.seed));
    const fs::path pred_dir = out / "predictions";
    parallel_for(n, jobs, [&](std::size_t i) {
      Prediction p = predict(data.scenes[i].image, state.params, stored.model,
                             stored.scene.categories, stored.postprocess);
      pans[i] = std::move(p.panoptic.panoptic);
      depths[i] = std::move(p.depth);
      const fs::path dir = pred_dir / data.manifest.scenes[i];
      fs::create_directories(dir);
      write_panoptic(dir, pans[i], AnnotationMode::kFull);
      write_depth(dir / "depth.png", depths[i]);
    });
  } else {
    parallel_for(n, jobs, [&](std::size_t i) {
      const fs::path dir = *source.predictions / data.manifest.scenes[i];
      pans[i] = read_panoptic(dir);
      depths[i] = read_depth(dir / "depth.png");
    });
  }

  std::vector<SceneEvaluation> evals(n);
  parallel_for(n, jobs,
               [&](std::size_t i) { evals[i] = evaluate_scene(pans[i], depths[i], data.scenes[i]); });
  const MetricReport report = aggregate(evals, table);
  json j = report.to_json();
  json per_scene = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    json row = aggregate({evals[i]}, table).to_json();
    row["scene"] = data.manifest.scenes[i];
    per_scene.push_back(std::move(row));
  }
  j["per_scene"] = std::move(per_scene);
  write_json(out / "report.json", j);
  spdlog::info("eval: PQ {:.1f} DPQ {:.1f} abs rel {:.4f} over {} scenes", report.pq.all * 100,
               report.dpq_mean * 100, report.depth.abs_rel, n);
  return report;
}

GradcheckReport cmd_gradcheck(const ExperimentConfig& config, const fs::path& out,
                              const std::optional<std::string>& corrupt) {
  config.validate();
  ExperimentConfig c = config;
  c.scene.height = config.gradcheck.height;
  c.scene.width = config.gradcheck.width;
  c.scene.validate();
  c.loss.patch = config.gradcheck.patch;
  if (corrupt) {
    const auto& terms = gradcheck_terms();
    if (std::find(terms.begin(), terms.end(), *corrupt) == terms.end())
      throw ConfigError("gradcheck: unknown term '" + *corrupt + "'");
  }
  Rng rng = Rng::stream(c.seed, 0);
  const Scene scene = generate_scene(c.scene, rng);
  const ModelParams params = init_model(c.model, c.seed);
  GradcheckOptions options;
  options.samples = c.gradcheck.samples;
  options.tolerance = c.gradcheck.tolerance;
  options.seed = c.seed;
  options.corrupt = corrupt;
  GradcheckReport report = gradcheck_model(scene, params, c.model, c.loss, options);
  for (const TermCheck& t : report.terms)
    spdlog::info("gradcheck: {} checked {} skipped {} worst rel {:.3e} {}", t.term, t.checked,
                 t.skipped, t.worst_rel, t.pass ? "PASS" : "FAIL");
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(out / "gradcheck.json", report.to_json());
  }
  return report;
}

std::vector<AblationVariant> ablation_variants(const ExperimentConfig& base, int table) {
  std::vector<AblationVariant> rows;
  auto add = [&](std::string name, std::string label, auto&& edit) {
    ExperimentConfig c = base;
    edit(c);
    rows.push_back({std::move(name), std::move(label), std::move(c)});
  };
  if (table == 4) {
    add("A", "global depth map", [](ExperimentConfig& c) {
      c.model.enable_instance_depth = false;
      c.model.enable_enhancement = false;
      c.model.enable_backup = true;
      c.loss.enable_sg = c.loss.enable_dg = false;
    });
    add("B", "+ instance-wise depth", [](ExperimentConfig& c) {
      c.model.enable_instance_depth = c.model.enable_enhancement = true;
      c.model.enable_backup = false;
      c.loss.enable_sg = c.loss.enable_dg = false;
    });
    add("C", "+ backup query", [](ExperimentConfig& c) {
      c.model.enable_instance_depth = c.model.enable_enhancement = c.model.enable_backup = true;
      c.loss.enable_sg = c.loss.enable_dg = false;
    });
    add("D", "+ semantic guidance", [](ExperimentConfig& c) {
      c.model.enable_instance_depth = c.model.enable_enhancement = c.model.enable_backup = true;
      c.loss.enable_sg = true;
      c.loss.enable_dg = false;
    });
    add("E", "+ depth guidance", [](ExperimentConfig& c) {
      c.model.enable_instance_depth = c.model.enable_enhancement = c.model.enable_backup = true;
      c.loss.enable_sg = c.loss.enable_dg = true;
    });
  } else if (table == 5) {
    add("full", "full supervision", [](ExperimentConfig& c) {
      c.full_supervision = true;
      c.loss.enable_sg = c.loss.enable_dg = false;
    });
    add("semi", "semi-supervision", [](ExperimentConfig& c) {
      c.full_supervision = false;
      c.loss.enable_sg = c.loss.enable_dg = false;
    });
    add("semi_dg", "+ depth guidance", [](ExperimentConfig& c) {
      c.full_supervision = false;
      c.loss.enable_sg = false;
      c.loss.enable_dg = true;
    });
    add("semi_sg", "+ semantic guidance", [](ExperimentConfig& c) {
      c.full_supervision = false;
      c.loss.enable_sg = true;
      c.loss.enable_dg = false;
    });
    add("semi_both", "+ both guidance losses", [](ExperimentConfig& c) {
      c.full_supervision = false;
      c.loss.enable_sg = c.loss.enable_dg = true;
    });
  } else {
    throw ConfigError("ablate: table must be 4 or 5");
  }
  return rows;
}

json cmd_ablate(const ExperimentConfig& config, const fs::path& dataset, const fs::path& out,
                int table, std::size_t jobs) {
  const auto variants = ablation_variants(config, table);
  json rows = json::array();
  for (const AblationVariant& v : variants) {
    spdlog::info("ablate: variant {} ({})", v.name, v.label);
    const fs::path dir = out / v.name;
    cmd_fit(v.config, dataset, dir, jobs);
    const MetricReport r = cmd_eval(dataset, EvalSource{dir / "checkpoint.bin", std::nullopt},
                                    dir, jobs, v.config.scene.categories);
    json row = r.to_json();
    row["name"] = v.name;
    row["label"] = v.label;
    rows.push_back(std::move(row));
  }
  json j = {{"table", table}, {"rows", rows}};
  write_json(out / "table.json", j);
  return j;
}

}  // namespace unidps

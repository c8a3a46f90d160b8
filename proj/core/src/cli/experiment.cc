#include "unidps/cli/experiment.h"

#include <cmath>
#include <set>

#include "unidps/scene/io.h"

namespace unidps {

using nlohmann::json;

void SplitConfig::validate() const {
  if (full < 0.0 || panoptic_only < 0.0 || depth_only < 0.0)
    throw ConfigError("split: shares must be non-negative");
  if (std::abs(full + panoptic_only + depth_only - 1.0) > 1e-9)
    throw ConfigError("split: shares must sum to 1");
}

std::vector<AnnotationMode> SplitConfig::assign(std::size_t n, std::uint64_t seed) const {
  const auto count = [n](double share) {
    return static_cast<std::size_t>(std::llround(share * static_cast<double>(n)));
  };
  const std::size_t pan = std::min(n, count(panoptic_only));
  const std::size_t dep = std::min(n - pan, count(depth_only));
  std::vector<AnnotationMode> modes(n, AnnotationMode::kFull);
  for (std::size_t i = 0; i < pan; ++i) modes[i] = AnnotationMode::kPanopticOnly;
  for (std::size_t i = pan; i < pan + dep; ++i) modes[i] = AnnotationMode::kDepthOnly;
  Rng rng = Rng::stream(seed ^ 0x9e3779b97f4a7c15ULL, 0);
  for (std::size_t i = n; i > 1; --i) std::swap(modes[i - 1], modes[rng.below(i)]);
  return modes;
}

void ExperimentConfig::validate() const {
  scene.validate();
  split.validate();
  model.validate();
  loss.validate();
  optimizer.validate();
  if (model.num_classes != static_cast<std::size_t>(scene.categories.num_categories()))
    throw ConfigError("model.num_classes must equal scene.num_stuff + scene.num_thing");
  if (model.max_depth != scene.max_depth)
    throw ConfigError("model.max_depth must equal scene.max_depth");
  if (gradcheck.height % 32 != 0 || gradcheck.width % 32 != 0 || gradcheck.height == 0 ||
      gradcheck.width == 0)
    throw ConfigError("gradcheck: height and width must be positive multiples of 32");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck: tolerance must be positive");
}

namespace {

// Reads known keys from an object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json ExperimentConfig::to_json() const {
  const auto& w = loss.weights;
  return {
      {"seed", seed},
      {"scenes", scenes},
      {"full_supervision", full_supervision},
      {"scene",
       {{"height", scene.height},
        {"width", scene.width},
        {"things", scene.things},
        {"stuff_bands", scene.stuff_bands},
        {"sparsity", scene.sparsity},
        {"max_depth", scene.max_depth},
        {"noise_sigma", scene.noise_sigma},
        {"ellipse_probability", scene.ellipse_probability},
        {"min_thing_area", scene.min_thing_area},
        {"num_stuff", scene.categories.num_stuff},
        {"num_thing", scene.categories.num_thing}}},
      {"split",
       {{"full", split.full}, {"panoptic_only", split.panoptic_only},
        {"depth_only", split.depth_only}}},
      {"model",
       {{"channels", model.channels},
        {"pixel_embed_channels", model.pixel_embed_channels},
        {"depth_embed_channels", model.depth_embed_channels},
        {"num_queries", model.num_queries},
        {"num_latents", model.num_latents},
        {"num_layers", model.num_layers},
        {"ffn_hidden", model.ffn_hidden},
        {"num_classes", model.num_classes},
        {"max_depth", model.max_depth},
        {"enable_enhancement", model.enable_enhancement},
        {"enable_backup", model.enable_backup},
        {"enable_instance_depth", model.enable_instance_depth}}},
      {"loss",
       {{"weights",
         {{"cls", w.cls}, {"mask", w.mask}, {"depth", w.depth}, {"sg", w.sg}, {"dg", w.dg}}},
        {"match_cls", loss.match_cls},
        {"match_mask", loss.match_mask},
        {"alpha", loss.alpha},
        {"patch", loss.patch},
        {"tau", loss.tau},
        {"si_lambda", loss.si_lambda},
        {"no_object_weight", loss.no_object_weight},
        {"target_stride", loss.target_stride},
        {"enable_sg", loss.enable_sg},
        {"enable_dg", loss.enable_dg}}},
      {"optimizer",
       {{"steps", optimizer.steps},
        {"learning_rate", optimizer.learning_rate},
        {"momentum", optimizer.momentum},
        {"clip_norm", optimizer.clip_norm},
        {"stage1_fraction", optimizer.stage1_fraction},
        {"batch_size", optimizer.batch_size},
        {"checkpoint_every", optimizer.checkpoint_every}}},
      {"postprocess",
       {{"score_threshold", postprocess.score_threshold},
        {"mask_threshold", postprocess.mask_threshold},
        {"min_area", postprocess.min_area}}},
      {"gradcheck",
       {{"height", gradcheck.height},
        {"width", gradcheck.width},
        {"patch", gradcheck.patch},
        {"samples", gradcheck.samples},
        {"tolerance", gradcheck.tolerance}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  r.get("seed", c.seed);
  r.get("scenes", c.scenes);
  r.get("full_supervision", c.full_supervision);
  if (const json* s = r.child("scene")) {
    Reader rs(*s, r.path("scene"));
    rs.get("height", c.scene.height);
    rs.get("width", c.scene.width);
    rs.get("things", c.scene.things);
    rs.get("stuff_bands", c.scene.stuff_bands);
    rs.get("sparsity", c.scene.sparsity);
    rs.get("max_depth", c.scene.max_depth);
    rs.get("noise_sigma", c.scene.noise_sigma);
    rs.get("ellipse_probability", c.scene.ellipse_probability);
    rs.get("min_thing_area", c.scene.min_thing_area);
    rs.get("num_stuff", c.scene.categories.num_stuff);
    rs.get("num_thing", c.scene.categories.num_thing);
  }
  if (const json* s = r.child("split")) {
    Reader rs(*s, r.path("split"));
    rs.get("full", c.split.full);
    rs.get("panoptic_only", c.split.panoptic_only);
    rs.get("depth_only", c.split.depth_only);
  }
  if (const json* s = r.child("model")) {
    Reader rs(*s, r.path("model"));
    rs.get("channels", c.model.channels);
    rs.get("pixel_embed_channels", c.model.pixel_embed_channels);
    rs.get("depth_embed_channels", c.model.depth_embed_channels);
    rs.get("num_queries", c.model.num_queries);
    rs.get("num_latents", c.model.num_latents);
    rs.get("num_layers", c.model.num_layers);
    rs.get("ffn_hidden", c.model.ffn_hidden);
    rs.get("num_classes", c.model.num_classes);
    rs.get("max_depth", c.model.max_depth);
    rs.get("enable_enhancement", c.model.enable_enhancement);
    rs.get("enable_backup", c.model.enable_backup);
    rs.get("enable_instance_depth", c.model.enable_instance_depth);
  }
  if (const json* s = r.child("loss")) {
    Reader rs(*s, r.path("loss"));
    if (const json* w = rs.child("weights")) {
      Reader rw(*w, rs.path("weights"));
      rw.get("cls", c.loss.weights.cls);
      rw.get("mask", c.loss.weights.mask);
      rw.get("depth", c.loss.weights.depth);
      rw.get("sg", c.loss.weights.sg);
      rw.get("dg", c.loss.weights.dg);
    }
    rs.get("match_cls", c.loss.match_cls);
    rs.get("match_mask", c.loss.match_mask);
    rs.get("alpha", c.loss.alpha);
    rs.get("patch", c.loss.patch);
    rs.get("tau", c.loss.tau);
    rs.get("si_lambda", c.loss.si_lambda);
    rs.get("no_object_weight", c.loss.no_object_weight);
    rs.get("target_stride", c.loss.target_stride);
    rs.get("enable_sg", c.loss.enable_sg);
    rs.get("enable_dg", c.loss.enable_dg);
  }
  if (const json* s = r.child("optimizer")) {
    Reader rs(*s, r.path("optimizer"));
    rs.get("steps", c.optimizer.steps);
    rs.get("learning_rate", c.optimizer.learning_rate);
    rs.get("momentum", c.optimizer.momentum);
    rs.get("clip_norm", c.optimizer.clip_norm);
    rs.get("stage1_fraction", c.optimizer.stage1_fraction);
    rs.get("batch_size", c.optimizer.batch_size);
    rs.get("checkpoint_every", c.optimizer.checkpoint_every);
  }
  if (const json* s = r.child("postprocess")) {
    Reader rs(*s, r.path("postprocess"));
    rs.get("score_threshold", c.postprocess.score_threshold);
    rs.get("mask_threshold", c.postprocess.mask_threshold);
    rs.get("min_area", c.postprocess.min_area);
  }
  if (const json* s = r.child("gradcheck")) {
    Reader rs(*s, r.path("gradcheck"));
    rs.get("height", c.gradcheck.height);
    rs.get("width", c.gradcheck.width);
    rs.get("patch", c.gradcheck.patch);
    rs.get("samples", c.gradcheck.samples);
    rs.get("tolerance", c.gradcheck.tolerance);
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const json j = read_json(path);
  return ExperimentConfig::from_json(j);
}

}  // namespace unidps

#include "unidps/model/train.h"

#include <cereal/archives/binary.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>

#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include "unidps/scene/generator.h"
#include "unidps/scene/io.h"

namespace unidps {

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("optimizer: learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must be in [0, 1)");
  if (!(clip_norm >= 0.0)) throw ConfigError("optimizer: clip_norm must be >= 0");
  if (!(stage1_fraction >= 0.0 && stage1_fraction <= 1.0))
    throw ConfigError("optimizer: stage1_fraction must be in [0, 1]");
}

std::size_t OptimizerConfig::stage1_steps() const {
  return static_cast<std::size_t>(std::llround(stage1_fraction * static_cast<double>(steps)));
}

double OptimizerConfig::learning_rate_at(std::size_t step) const {
  if (steps == 0) return learning_rate;
  const double t = static_cast<double>(step - 1) / static_cast<double>(steps);
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

TrainState initial_state(const ModelParams& params) {
  return TrainState{params, zeros_like(params), 0};
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j = {{"step", step},         {"stage", stage},   {"lr", learning_rate},
                      {"grad_norm", grad_norm}, {"scenes", scenes}};
  j.update(loss.to_json());
  return j;
}

std::vector<std::size_t> batch_for_step(std::size_t num_scenes, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t step) {
  std::vector<std::size_t> idx(num_scenes);
  std::iota(idx.begin(), idx.end(), 0);
  if (batch_size == 0 || batch_size >= num_scenes) return idx;
  Rng rng = Rng::stream(seed ^ 0x5bd1e995ULL, step);
  for (std::size_t i = 0; i < batch_size; ++i)
    std::swap(idx[i], idx[i + rng.below(num_scenes - i)]);
  idx.resize(batch_size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

std::vector<Tensor*> tensors_of(ModelParams& p) {
  std::vector<Tensor*> out;
  visit_params(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

struct SceneResult {
  bool used = false;
  LossReport report;
};

// Mean of each term over the scenes that carry it.
LossReport mean_report(const std::vector<SceneResult>& results, const LossWeights& w) {
  LossReport m;
  std::size_t n_cls = 0, n_depth = 0, n_sg = 0, n_dg = 0, n = 0;
  double total = 0.0;
  for (const auto& r : results) {
    if (!r.used) continue;
    ++n;
    total += r.report.total;
    if (r.report.has_cls) {
      ++n_cls;
      m.l_cls += r.report.l_cls;
      m.l_mask += r.report.l_mask;
      m.l_ce += r.report.l_ce;
      m.l_dice += r.report.l_dice;
    }
    if (r.report.has_depth) ++n_depth, m.l_depth += r.report.l_depth;
    if (r.report.has_sg) ++n_sg, m.l_sg += r.report.l_sg;
    if (r.report.has_dg) ++n_dg, m.l_dg += r.report.l_dg;
  }
  auto div = [](double& v, std::size_t c) { v = c ? v / static_cast<double>(c) : 0.0; };
  div(m.l_cls, n_cls);
  div(m.l_mask, n_cls);
  div(m.l_ce, n_cls);
  div(m.l_dice, n_cls);
  div(m.l_depth, n_depth);
  div(m.l_sg, n_sg);
  div(m.l_dg, n_dg);
  m.has_cls = m.has_mask = n_cls > 0;
  m.has_depth = n_depth > 0;
  m.has_sg = n_sg > 0;
  m.has_dg = n_dg > 0;
  (void)w;
  m.total = n ? total / static_cast<double>(n) : 0.0;
  return m;
}

bool scene_supervised(const Scene& s, const ModelConfig& model, const LossConfig& loss) {
  const TermGate g = gate_terms(s.mode, model, loss);
  return g.segmentation || g.depth || g.sg || g.dg;
}

}  // namespace

TrainResult train(const std::vector<Scene>& scenes, TrainState state, const TrainOptions& options) {
  const OptimizerConfig& opt = options.optimizer;
  opt.validate();
  options.model.validate();
  options.loss.validate();
  TrainResult result;
  if (scenes.empty() && state.step < opt.steps)
    throw std::invalid_argument("train: no scenes");

  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  std::vector<Tensor*> params = tensors_of(state.params);
  std::vector<Tensor*> velocity = tensors_of(state.momentum);
  ModelParams accum = zeros_like(state.params);
  std::vector<Tensor*> accum_t = tensors_of(accum);
  std::vector<ModelParams> buffers;

  for (std::size_t step = state.step + 1; step <= opt.steps; ++step) {
    LossConfig loss = options.loss;
    const int stage = step <= opt.stage1_steps() ? 1 : 2;
    loss.segmentation_only = stage == 1;

    // Minibatches are drawn from the scenes that supervise this stage.
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < scenes.size(); ++i)
      if (scene_supervised(scenes[i], options.model, loss)) eligible.push_back(i);
    if (eligible.empty())
      throw std::invalid_argument("train: no scene supervises stage " + std::to_string(stage));
    auto batch = batch_for_step(eligible.size(), opt.batch_size, options.seed, step);
    for (std::size_t& b : batch) b = eligible[b];
    std::vector<SceneResult> results(batch.size());
    for (Tensor* t : accum_t) t->fill(0.0);

    try {

      const std::size_t workers = std::min(jobs, batch.size());
      if (workers <= 1) {
        if (buffers.empty()) buffers.push_back(zeros_like(state.params));
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const Scene& s = scenes[batch[b]];
          if (!scene_supervised(s, options.model, loss)) continue;
          visit_params(buffers[0], [](const std::string&, Tensor& t) { t.fill(0.0); });
          results[b] = {true, total_loss(s, state.params, options.model, loss, &buffers[0])};
          const auto g = tensors_of(buffers[0]);
          for (std::size_t i = 0; i < g.size(); ++i) *accum_t[i] += *g[i];
        }
      } else {
        while (buffers.size() < batch.size()) buffers.push_back(zeros_like(state.params));
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w)
          threads.emplace_back([&, w] {
            try {
              for (std::size_t b = w; b < batch.size(); b += workers) {
                const Scene& s = scenes[batch[b]];
                if (!scene_supervised(s, options.model, loss)) continue;
                visit_params(buffers[b], [](const std::string&, Tensor& t) { t.fill(0.0); });
                results[b] = {true, total_loss(s, state.params, options.model, loss, &buffers[b])};
              }
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        for (auto& t : threads) t.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        for (std::size_t b = 0; b < batch.size(); ++b) {
          if (!results[b].used) continue;
          const auto g = tensors_of(buffers[b]);
          for (std::size_t i = 0; i < g.size(); ++i) *accum_t[i] += *g[i];
        }
      }
    } catch (const NonFiniteError& e) {
      result.diverged = true;
      result.message = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }

    StepRecord rec;
    rec.step = step;
    rec.stage = stage;
    rec.learning_rate = opt.learning_rate_at(step);
    rec.loss = mean_report(results, loss.weights);
    for (const auto& r : results) rec.scenes += r.used ? 1 : 0;
    if (rec.scenes == 0) throw std::invalid_argument("train: no scene supervises any loss term");

    const double inv = 1.0 / static_cast<double>(rec.scenes);
    double sq = 0.0;
    for (Tensor* t : accum_t) {
      *t *= inv;
      for (double v : t->data()) sq += v * v;
    }
    rec.grad_norm = std::sqrt(sq);
    if (!std::isfinite(rec.loss.total) || !std::isfinite(rec.grad_norm)) {
      result.diverged = true;
      result.message = "non-finite loss or gradient at step " + std::to_string(step);
      break;
    }
    const double scale =
        opt.clip_norm > 0.0 && rec.grad_norm > opt.clip_norm ? opt.clip_norm / rec.grad_norm : 1.0;
    // The update is checked before it is applied so the returned state stays finite.
    bool finite = true;
    for (std::size_t i = 0; i < params.size() && finite; ++i) {
      const Tensor& v = *velocity[i];
      const Tensor& p = *params[i];
      const Tensor& g = *accum_t[i];
      for (std::size_t k = 0; k < v.size() && finite; ++k) {
        const double nv = opt.momentum * v[k] + scale * g[k];
        finite = std::isfinite(nv) && std::isfinite(p[k] - rec.learning_rate * nv);
      }
    }
    if (!finite) {
      result.diverged = true;
      result.message = "non-finite parameter update at step " + std::to_string(step);
      break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& v = *velocity[i];
      Tensor& p = *params[i];
      const Tensor& g = *accum_t[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = opt.momentum * v[k] + scale * g[k];
        p[k] -= rec.learning_rate * v[k];
      }
    }
    state.step = step;
    result.history.push_back(rec);
    if (options.on_step) options.on_step(rec, state);
    if (options.stop_at != 0 && step >= options.stop_at) break;
  }
  result.state = std::move(state);
  return result;
}

namespace {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(name, shape, data);
  }
};

struct CheckpointFile {
  std::string magic = "unidps-checkpoint-1";
  std::uint64_t step = 0;
  std::string config;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> momentum;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(magic, step, config, params, momentum);
  }
};

std::vector<NamedTensor> dump(const ModelParams& p) {
  std::vector<NamedTensor> out;
  ModelParams copy = p;
  visit_params(copy, [&](const std::string& name, Tensor& t) {
    out.push_back({name, {t.shape().begin(), t.shape().end()}, t.storage()});
  });
  return out;
}

void restore(const std::vector<NamedTensor>& src, ModelParams& p,
             const std::filesystem::path& path) {
  std::size_t i = 0;
  visit_params(p, [&](const std::string& name, Tensor& t) {
    if (i >= src.size() || src[i].name != name || src[i].data.size() != t.size())
      throw ParseError(path.string() + ": checkpoint does not match the model layout at " + name);
    t.storage() = src[i].data;
    ++i;
  });
  if (i != src.size()) throw ParseError(path.string() + ": checkpoint has extra tensors");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const std::string& config_json) {
  CheckpointFile f;
  f.step = state.step;
  f.config = config_json;
  f.params = dump(state.params);
  f.momentum = dump(state.momentum);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    cereal::BinaryOutputArchive ar(os);
    ar(f);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open checkpoint " + path.string());
  CheckpointFile f;
  try {
    cereal::BinaryInputArchive ar(is);
    ar(f);
  } catch (const std::exception& e) {
    throw ParseError(path.string() + ": corrupt checkpoint (" + e.what() + ")");
  }
  if (f.magic != "unidps-checkpoint-1") throw ParseError(path.string() + ": not a checkpoint");
  return f;
}

}  // namespace

std::string read_checkpoint_config(const std::filesystem::path& path) {
  return read_checkpoint_file(path).config;
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelParams& like,
                           std::string* config_json) {
  const CheckpointFile f = read_checkpoint_file(path);
  TrainState s{like, zeros_like(like), f.step};
  restore(f.params, s.params, path);
  restore(f.momentum, s.momentum, path);
  if (config_json) *config_json = f.config;
  return s;
}

}  // namespace unidps

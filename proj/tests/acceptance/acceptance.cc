// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Usage: unidps_acceptance [criterion numbers...]  (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "support/oracles.h"
#include "unidps/cli/commands.h"
#include "unidps/geometry/geometry.h"
#include "unidps/losses/guidance.h"
#include "unidps/losses/matching.h"
#include "unidps/losses/terms.h"
#include "unidps/metrics/metrics.h"
#include "unidps/model/train.h"
#include "unidps/scene/generator.h"

namespace {

using namespace unidps;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unidps_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- 1 ----

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig config;  // 32 x 64 scene, 500 samples, tolerance 1e-4
  const GradcheckReport r = cmd_gradcheck(config, {});
  const double secs = seconds_since(t0);
  std::string detail;
  bool pass = r.terms.size() == gradcheck_terms().size();
  for (const TermCheck& t : r.terms) {
    detail += fmt::format("{} {:.2e} ", t.term, t.worst_rel);
    pass = pass && t.pass && t.checked > 0 && t.worst_rel < 1e-4;
  }
  pass = pass && secs < 60.0;
  return {pass, detail + fmt::format("in {:.1f} s (limit 60 s)", secs)};
}

// ---- 2 ----

Outcome metric_oracle_equivalence() {
  Rng rng(2024);
  std::size_t mismatches = 0, nontrivial = 0;
  for (int i = 0; i < 1000; ++i) {
    const PanopticMap gt = oracle::random_panoptic(rng, 8, 8, 4, 0.1);
    const PanopticMap pred = i % 2 == 0 ? oracle::perturb_panoptic(gt, rng)
                                        : oracle::random_panoptic(rng, 8, 8, 4, 0.1);
    const DepthMap gt_depth = oracle::random_depth(rng, 8, 8, 0.8);
    DepthMap pred_depth = gt_depth;
    for (std::size_t p = 0; p < pred_depth.depth.size(); ++p) {
      pred_depth.depth[p] *= rng.uniform(0.5, 1.5);
      if (rng.uniform() < 0.05) pred_depth.valid[p] = 0;
    }
    const double pq = panoptic_quality(pred, gt);
    if (pq > 0.0 && pq < 1.0) ++nontrivial;
    if (pq != oracle::brute_force_pq(pred, gt)) ++mismatches;
    for (double lambda : kDpqThresholds)
      if (dpq(pred, pred_depth, gt, gt_depth, lambda) !=
          oracle::brute_force_dpq(pred, pred_depth, gt, gt_depth, lambda))
        ++mismatches;
  }
  return {mismatches == 0,
          fmt::format("1000 pairs x 4 scores, {} mismatches, {} with 0 < PQ < 1", mismatches,
                      nontrivial)};
}

// ---- 3 ----

Outcome dpq_identity() {
  SceneConfig sc;
  std::size_t violations = 0;
  double pq_sum = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng = Rng::stream(303, i);
    const Scene s = generate_scene(sc, rng);
    const PanopticMap pred = oracle::perturb_panoptic(s.panoptic, rng, sc.categories);
    const double pq = panoptic_quality(pred, s.panoptic, sc.categories);
    pq_sum += pq;
    for (double lambda : kDpqThresholds)
      if (dpq(pred, s.depth, s.panoptic, s.depth, lambda, sc.categories) != pq) ++violations;
  }
  return {violations == 0, fmt::format("100 scenes x 3 thresholds, {} violations, mean PQ {:.3f}",
                                       violations, pq_sum / 100.0)};
}

// ---- 4 ----

Outcome matching_optimality() {
  Rng rng(404);
  std::size_t mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng.below(7), g = 1 + rng.below(7);
    Tensor cost({n, g});
    for (double& v : cost.data()) v = rng.uniform(-1.0, 5.0);
    if (hungarian_match(cost).total_cost != oracle::brute_force_min_cost(cost)) ++mismatches;
  }
  return {mismatches == 0, fmt::format("200 matrices up to 7 x 7, {} mismatches", mismatches)};
}

// ---- 5 ----

Outcome toy_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const SceneConfig sc;  // 64 x 128
  Scene scene;
  std::uint64_t seed = 0;
  for (;; ++seed) {
    Rng rng(seed);
    scene = generate_scene(sc, rng);
    if (scene.panoptic.segments.size() == 5) break;
  }
  TrainOptions o;  // default config: 2000 steps
  const TrainResult r = train({scene}, initial_state(init_model(o.model, 0)), o);
  const Prediction p = predict(scene.image, r.state.params, o.model, sc.categories);
  const MetricReport m = aggregate({evaluate_scene(p.panoptic.panoptic, p.depth, scene)}, sc.categories);
  const double secs = seconds_since(t0);
  const bool pass = !r.diverged && m.pq.all >= 0.90 && m.depth.abs_rel <= 0.05 &&
                    m.dpq[1].all >= 0.80 && secs < 600.0;
  return {pass, fmt::format("scene seed {}, {} steps: PQ {:.3f} (>= 0.90), abs rel {:.4f} (<= 0.05), "
                            "DPQ@0.25 {:.3f} (>= 0.80), {:.0f} s (limit 600 s)",
                            seed, r.state.step, m.pq.all, m.depth.abs_rel, m.dpq[1].all, secs)};
}

// ---- 6 ----

Outcome backup_completeness() {
  const ModelConfig model;
  SceneConfig sc;
  std::size_t invalid = 0, non_finite = 0, void_pixels = 0, pixels = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng = Rng::stream(606, i);
    const Scene s = generate_scene(sc, rng);
    const ModelParams params = init_model(model, i);
    PostprocessConfig post;
    // Alternate between rejecting every query and starving the survivors of area.
    if (i % 2 == 0) post.score_threshold = 0.999;
    else post.min_area = s.height() * s.width() / 4;
    const Prediction p = predict(s.image, params, model, sc.categories, post);
    for (std::size_t px = 0; px < p.depth.depth.size(); ++px) {
      if (!p.depth.valid[px]) ++invalid;
      if (!std::isfinite(p.depth.depth[px])) ++non_finite;
      if (p.panoptic.owner[px] < 0) ++void_pixels;
    }
    pixels += p.depth.depth.size();
  }
  return {invalid == 0 && non_finite == 0 && void_pixels > 0,
          fmt::format("100 scenes, {:.1f}% pixels unowned, {} invalid, {} non-finite",
                      100.0 * static_cast<double>(void_pixels) / static_cast<double>(pixels),
                      invalid, non_finite)};
}

// ---- 7 ----

// Budget for the guidance comparison; see README for how it was sized.
constexpr std::size_t kGuidanceSteps = 400;
constexpr std::size_t kGuidanceBatch = 6;

Outcome guidance_direction() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = scratch("guidance");
  ExperimentConfig base;
  base.scenes = 30;
  base.scene.height = 64;
  base.scene.width = 128;
  base.split = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  base.optimizer.steps = kGuidanceSteps;
  base.optimizer.batch_size = kGuidanceBatch;
  base.optimizer.checkpoint_every = kGuidanceSteps;
  base.seed = 0;
  cmd_gen(base, root / "data");

  std::string detail;
  double diff_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::map<bool, double> dpq_mean;
    for (bool guided : {false, true}) {
      ExperimentConfig c = base;
      c.seed = seed;
      c.loss.enable_sg = c.loss.enable_dg = guided;
      const fs::path run = root / fmt::format("{}_{}", guided ? "both" : "none", seed);
      cmd_fit(c, root / "data", run);
      const MetricReport m = cmd_eval(root / "data", {run / "checkpoint.bin", std::nullopt},
                                      run / "eval", 1, c.scene.categories);
      dpq_mean[guided] = m.dpq_mean;
    }
    diff_sum += dpq_mean[true] - dpq_mean[false];
    detail += fmt::format("seed {}: {:.1f} vs {:.1f}; ", seed, 100 * dpq_mean[true],
                          100 * dpq_mean[false]);
  }
  const double mean_gain = diff_sum / 3.0;
  fs::remove_all(root);
  return {mean_gain >= 0.0,
          detail + fmt::format("mean DPQ gain {:+.2f} (>= 0), {} steps, {:.0f} s", 100 * mean_gain,
                               kGuidanceSteps, seconds_since(t0))};
}

// ---- 8 ----

Outcome loss_closed_forms() {
  Rng rng(808);
  std::vector<double> gt(100);
  for (double& v : gt) v = rng.uniform(1.0, 80.0);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double c = std::exp(rng.uniform(-2.0, 2.0));
    std::vector<double> d = gt, grad(gt.size());
    for (double& v : d) v *= c;
    const double lc = std::log(c);
    worst = std::max(worst, std::abs(scale_invariant_loss(d, gt, kScaleInvariantLambda, grad) -
                                     0.15 * lc * lc));
  }

  const GridSize g{8, 16};
  std::vector<std::uint32_t> labels(g.area());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = 1000 * (1 + (i % g.width) / 5);
  bool sg_exact = true, dg_exact = true;
  std::string dg_values;
  for (std::size_t k : {3u, 5u}) {
    const Tensor same({g.area(), 16}, 0.4);
    Tensor grad = zeros_like(same);
    sg_exact = sg_exact &&
               semantic_guidance_level(same, build_semantic_patch_index(labels, g, k), 0.3, grad) == 0.3;
    const std::vector<double> depth(g.area(), 17.0);
    const PatchIndex idx = build_depth_patch_index(std::vector<std::uint8_t>(g.area(), 1), g, k);
    Tensor dgrad;
    const double v = depth_guidance_level(same, depth, idx, 10.0, dgrad);
    dg_exact = dg_exact && v == -static_cast<double>(k * k - 1);
    dg_values += fmt::format(" {}", v);
  }
  return {worst <= 1e-12 && sg_exact && dg_exact,
          fmt::format("depth worst error {:.1e} (<= 1e-12), l_sg = alpha {}, l_dg ={} (K = 3, 5)",
                      worst, sg_exact ? "exact" : "inexact", dg_values)};
}

// ---- 9 ----

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

Outcome determinism() {
  const fs::path root = scratch("determinism");
  ExperimentConfig c;
  c.scenes = 4;
  c.scene.height = 32;
  c.scene.width = 64;
  c.split = {0.5, 0.25, 0.25};
  c.model.channels = 32;
  c.model.num_layers = 3;
  c.model.num_queries = 8;
  c.loss.patch = 3;
  c.optimizer.steps = 6;
  c.optimizer.checkpoint_every = 2;
  c.gradcheck.samples = 30;
  c.seed = 9;

  std::vector<std::string> failed;
  auto same = [&](const std::string& what, const fs::path& a, const fs::path& b) {
    if (tree(a) != tree(b)) failed.push_back(what);
  };
  cmd_gen(c, root / "gen1", 1);
  cmd_gen(c, root / "gen2", 3);
  same("gen", root / "gen1", root / "gen2");
  cmd_fit(c, root / "gen1", root / "fit1", 1);
  cmd_fit(c, root / "gen1", root / "fit2", 3);
  cmd_fit(c, root / "gen1", root / "fit3", 1, false, 3);
  cmd_fit(c, root / "gen1", root / "fit3", 2, true);
  same("fit", root / "fit1", root / "fit2");
  same("fit resume", root / "fit1", root / "fit3");
  const EvalSource ckpt{root / "fit1" / "checkpoint.bin", std::nullopt};
  cmd_eval(root / "gen1", ckpt, root / "eval1", 1);
  cmd_eval(root / "gen1", ckpt, root / "eval2", 3);
  same("eval", root / "eval1", root / "eval2");
  cmd_gradcheck(c, root / "gc1");
  cmd_gradcheck(c, root / "gc2");
  same("gradcheck", root / "gc1", root / "gc2");
  cmd_ablate(c, root / "gen1", root / "ab1", 4, 1);
  cmd_ablate(c, root / "gen1", root / "ab2", 4, 2);
  same("ablate", root / "ab1", root / "ab2");
  fs::remove_all(root);
  std::string detail = "gen, fit (jobs 1/3, interrupted + resumed), eval, gradcheck, ablate: ";
  if (failed.empty()) return {true, detail + "byte-identical"};
  for (const auto& f : failed) detail += f + " differs; ";
  return {false, detail};
}

// ---- 10 ----

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t n = t.dim(0), stride = t.size() / n;
  Tensor out(t.shape());
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&t[perm[i] * stride], stride, &out[i * stride]);
  return out;
}

Outcome architecture_invariants() {
  const ModelConfig on;
  SceneConfig sc;
  double worst_dec = 0.0, worst_enh = 0.0;
  bool identical = true;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Rng rng = Rng::stream(1010, trial);
    const Scene s = generate_scene(sc, rng);
    ModelParams params = init_model(on, trial);
    std::vector<std::size_t> perm(on.num_queries);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    const ModelOutput a = forward_model(s.image, params, on);
    // Decoder stack: permuting the learned queries permutes every output row.
    ModelParams permuted = params;
    permuted.segmentation.query_init = permute_rows(params.segmentation.query_init, perm);
    const SegmentationOutput b =
        forward_segmentation(a.features.semantic, permuted.segmentation, false);
    worst_dec = std::max({worst_dec,
                          max_abs_diff(permute_rows(a.segmentation.final_queries.queries, perm),
                                       b.final_queries.queries),
                          max_abs_diff(permute_rows(a.segmentation.prediction.mask_logits, perm),
                                       b.prediction.mask_logits),
                          max_abs_diff(permute_rows(a.segmentation.prediction.class_logits, perm),
                                       b.prediction.class_logits)});
    // Enhancement stack on the permuted query set.
    const EnhancementResult e = enhance_queries(
        QuerySet{permute_rows(a.segmentation.final_queries.queries, perm)},
        {params.geometry.latent_init}, a.features.depth,
        permute_rows(a.segmentation.prediction.mask_logits, perm), params.geometry);
    worst_enh = std::max({worst_enh,
                          max_abs_diff(permute_rows(a.enhanced.queries, perm), e.enhanced.queries),
                          max_abs_diff(a.latent.latent, e.latent.latent)});
    // Geometry module off: segmentation bit-identical.
    ModelConfig off = on;
    off.enable_enhancement = off.enable_backup = false;
    const ModelOutput c = forward_model(s.image, params, off);
    identical = identical &&
                a.segmentation.prediction.class_logits == c.segmentation.prediction.class_logits &&
                a.segmentation.prediction.mask_logits == c.segmentation.prediction.mask_logits &&
                a.segmentation.final_queries.queries == c.segmentation.final_queries.queries;
  }
  return {worst_dec <= 1e-12 && worst_enh <= 1e-12 && identical,
          fmt::format("decoder {:.1e}, enhancement {:.1e} (<= 1e-12); segmentation with geometry "
                      "off {}",
                      worst_dec, worst_enh, identical ? "bit-identical" : "differs")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradient_correctness},
      {2, "metric oracle equivalence", metric_oracle_equivalence},
      {3, "DPQ identity", dpq_identity},
      {4, "matching optimality", matching_optimality},
      {5, "toy overfit", toy_overfit},
      {6, "backup completeness", backup_completeness},
      {7, "guidance direction", guidance_direction},
      {8, "loss closed forms", loss_closed_forms},
      {9, "determinism", determinism},
      {10, "architecture invariants", architecture_invariants},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

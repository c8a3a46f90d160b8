#include "unidps/losses/total.h"

#include <stdexcept>

#include "unidps/numerics/trace.h"
#include "unidps/scene/generator.h"

namespace unidps {

void LossConfig::validate() const {
  if (target_stride != 1 && target_stride != kEmbeddingStride)
    throw ConfigError("target_stride must be 1 or 4");
  if (patch < 3 || patch % 2 == 0) throw ConfigError("guidance patch size must be odd and >= 3");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
}

void LossReport::finalize(const LossWeights& w) {
  total = 0.0;
  if (has_cls) total += w.cls * l_cls;
  if (has_mask) total += w.mask * l_mask;
  if (has_depth) total += w.depth * l_depth;
  if (has_sg) total += w.sg * l_sg;
  if (has_dg) total += w.dg * l_dg;
}

nlohmann::json LossReport::to_json() const {
  return {{"l_cls", l_cls},   {"l_mask", l_mask}, {"l_ce", l_ce}, {"l_dice", l_dice},
          {"l_depth", l_depth}, {"l_sg", l_sg},   {"l_dg", l_dg}, {"total", total}};
}

TermGate gate_terms(AnnotationMode mode, const ModelConfig& model, const LossConfig& loss) {
  const bool pan = mode != AnnotationMode::kDepthOnly;
  const bool dep = mode != AnnotationMode::kPanopticOnly;
  TermGate g;
  g.segmentation = pan;
  if (loss.segmentation_only) return g;
  // Without panoptic labels only the backup map can be supervised.
  const bool seg_depth = pan && model.enable_instance_depth;
  g.depth = dep && (seg_depth || model.enable_backup);
  g.sg = pan && loss.enable_sg;
  g.dg = dep && loss.enable_dg;
  return g;
}

namespace {

struct Resampler {
  GridSize from, to;
  std::optional<BilinearPlan> plan;

  Resampler(GridSize f, GridSize t) : from(f), to(t) {
    if (!(f == t)) plan.emplace(f, t);
  }
  Tensor up(const Tensor& maps, std::size_t rows) const {
    const Tensor m = maps.reshaped({rows, from.area()});
    return plan ? plan->apply_maps(m) : m;
  }
  Tensor down(const Tensor& dmaps, std::size_t rows) const {
    const Tensor d = dmaps.reshaped({rows, to.area()});
    return plan ? plan->transpose_maps(d) : d;
  }
};

void record_match(const MatchResult& m) {
  if (trace::Recorder* rec = trace::active())
    for (const auto& [q, g] : m.assignment) {
      rec->add(q);
      rec->add(g);
    }
}

}  // namespace

LossReport total_loss(const Scene& scene, const ModelParams& params, const ModelConfig& model,
                      const LossConfig& loss, ModelParams* grads) {
  const TermGate gate = gate_terms(scene.mode, model, loss);
  if (!gate.segmentation && !gate.depth && !gate.sg && !gate.dg)
    throw std::invalid_argument("total_loss: scene supervises no loss term");

  ModelCache cache;
  const ModelOutput out = forward_model(scene.image, params, model, gate.segmentation, &cache);
  const GridSize embed_grid = out.depth.grid;
  const GridSize full = scene.panoptic.grid();
  const LossTargets targets = make_targets(scene, loss.target_stride);
  const Resampler rs(embed_grid, targets.grid);
  const std::size_t n = model.num_queries;
  const LossWeights& w = loss.weights;

  LossReport report;
  std::vector<Tensor> dclass(model.num_layers), dmask(model.num_layers);
  MatchResult final_match;

  if (gate.segmentation) {
    report.has_cls = report.has_mask = true;
    const auto& preds = out.segmentation.aux;
    for (std::size_t l = 0; l < preds.size(); ++l) {
      const Tensor logits = rs.up(preds[l].mask_logits, n);
      const Tensor cost = matching_cost(preds[l].class_probs, logits, targets, loss.match_cls, loss.match_mask);
      MatchResult match = hungarian_match(cost);
      record_match(match);
      const TermResult cls =
          loss_cls(preds[l].class_logits, match, targets.categories, loss.no_object_weight);
      const MaskTermResult msk = loss_mask(logits, targets, match);
      report.l_cls += cls.value;
      report.l_mask += msk.value;
      report.l_ce += msk.bce;
      report.l_dice += msk.dice;
      if (grads) {
        dclass[l] = cls.grad * w.cls;
        dmask[l] = rs.down(msk.grad, n) * w.mask;
      }
      if (l + 1 == preds.size()) final_match = std::move(match);
    }
  }

  Tensor dsegment_depth, dbackup_depth;
  if (gate.depth) {
    const bool use_segments = gate.segmentation && model.enable_instance_depth;
    const Tensor seg = use_segments ? rs.up(out.depth.per_segment_depth, n) : Tensor();
    const Tensor backup =
        model.enable_backup ? rs.up(out.depth.backup_depth, 1) : Tensor();
    const DepthTermResult d = loss_depth(seg, backup, targets, final_match, loss.si_lambda);
    report.has_depth = d.segments_used > 0 || d.backup_used;
    report.l_depth = d.value;
    if (grads && report.has_depth) {
      if (!d.segment_grad.empty()) dsegment_depth = rs.down(d.segment_grad, n) * w.depth;
      if (!d.backup_grad.empty()) dbackup_depth = rs.down(d.backup_grad, 1) * w.depth;
    }
  }

  std::array<FeatureMap, kNumLevels> semantic_levels = out.features.semantic.levels;
  std::array<FeatureMap, kNumLevels> depth_levels = out.features.depth.levels;
  GuidanceResult sg, dg;
  if (gate.sg) {
    std::array<std::vector<std::uint32_t>, kNumLevels> labels;
    for (std::size_t l = 0; l < kNumLevels; ++l)
      labels[l] = downsample_labels(scene.panoptic.ids, full, depth_levels[l].grid);
    sg = loss_semantic_guidance(depth_levels, labels, loss.patch, loss.alpha);
    report.has_sg = sg.active_levels > 0;
    report.l_sg = sg.value;
  }
  if (gate.dg) {
    std::array<std::vector<double>, kNumLevels> depth;
    std::array<std::vector<std::uint8_t>, kNumLevels> valid;
    for (std::size_t l = 0; l < kNumLevels; ++l)
      downsample_depth(scene.depth.depth, scene.depth.valid, full, semantic_levels[l].grid,
                       depth[l], valid[l]);
    dg = loss_depth_guidance(semantic_levels, depth, valid, loss.patch, loss.tau);
    report.has_dg = dg.active_levels > 0;
    report.l_dg = dg.value;
  }
  report.finalize(w);
  if (!grads) return report;

  // ---- backward ----
  EncodedFeatureGrads fg;
  for (std::size_t l = 0; l < kNumLevels; ++l) fg.depth[l] = zeros_like(depth_levels[l].tokens);
  fg.depth_embedding = zeros_like(out.features.depth.embedding.tokens);

  Tensor dx_o;
  if (!dsegment_depth.empty()) {
    const Tensor dx_d =
        depth_head_backward(params.geometry, out.features.depth.embedding, cache.depth.segments,
                            dsegment_depth, model.max_depth, fg.depth_embedding, grads->geometry);
    if (model.enable_enhancement) {
      EnhancementBackwardResult eb = enhance_queries_backward(
          out.features.depth, params.geometry, cache.enhancement, dx_d, grads->geometry);
      for (std::size_t l = 0; l < kNumLevels; ++l) fg.depth[l] += eb.depth_levels[l];
      dx_o = std::move(eb.x_o);
    } else {
      dx_o = dx_d;
    }
  }
  if (!dbackup_depth.empty()) {
    const Tensor db =
        depth_head_backward(params.geometry, out.features.depth.embedding, cache.depth.backup,
                            dbackup_depth, model.max_depth, fg.depth_embedding, grads->geometry);
    update_backup_query_backward(params.geometry, cache.backup, db, fg.depth, grads->geometry);
  }
  if (report.has_sg)
    for (std::size_t l = 0; l < kNumLevels; ++l) fg.depth[l] += sg.grad[l] * w.sg;

  if (gate.segmentation) {
    SegmentationBackwardResult sb =
        segmentation_backward(out.features.semantic, params.segmentation, cache.segmentation,
                              dclass, dmask, dx_o, grads->segmentation);
    for (std::size_t l = 0; l < kNumLevels; ++l) fg.semantic[l] = std::move(sb.levels[l]);
    fg.pixel_embedding = std::move(sb.pixel_embedding);
  }
  if (report.has_dg)
    for (std::size_t l = 0; l < kNumLevels; ++l) accumulate(fg.semantic[l], dg.grad[l] * w.dg);

  encode_features_backward(params.encoder, cache.encoder, fg, grads->encoder);
  return report;
}

}  // namespace unidps

#pragma once

#include <nlohmann/json.hpp>

#include "unidps/losses/guidance.h"
#include "unidps/losses/terms.h"
#include "unidps/model/model.h"

namespace unidps {

struct LossWeights {
  double cls = 2.0;
  double mask = 5.0;
  double depth = 2.5;
  double sg = 0.1;
  double dg = 0.1;
};

struct LossConfig {
  LossWeights weights;
  // Matching cost weights, kept apart from `weights` so that reweighting the
  // loss never changes which query is matched to which segment.
  double match_cls = 2.0;
  double match_mask = 5.0;
  double alpha = kTripletMargin;
  std::size_t patch = kGuidancePatch;
  double tau = kDepthTemperature;
  double si_lambda = kScaleInvariantLambda;
  double no_object_weight = kNoObjectWeight;
  // Resolution divisor of the grid where mask and depth losses are compared
  // with ground truth: 1 upsamples predictions to full resolution, 4 keeps
  // them at the embedding grid.
  std::size_t target_stride = 1;
  bool enable_sg = true;
  bool enable_dg = true;
  bool segmentation_only = false;  // first training stage: l_cls and l_mask only

  void validate() const;
};

struct LossReport {
  double l_cls = 0.0;
  double l_mask = 0.0;
  double l_ce = 0.0;
  double l_dice = 0.0;
  double l_depth = 0.0;
  double l_sg = 0.0;
  double l_dg = 0.0;
  double total = 0.0;
  bool has_cls = false, has_mask = false, has_depth = false, has_sg = false, has_dg = false;

  // Weighted sum of the terms present.
  void finalize(const LossWeights& w);
  nlohmann::json to_json() const;
};

// Which terms a scene contributes, from its annotation mode and the toggles.
struct TermGate {
  bool segmentation = false;
  bool depth = false;
  bool sg = false;
  bool dg = false;
};
TermGate gate_terms(AnnotationMode mode, const ModelConfig& model, const LossConfig& loss);

// Loss of one scene plus, when `grads` is non-null, the gradient of
// report.total w.r.t. every parameter (accumulated into *grads). Throws
// std::invalid_argument when the scene supervises no term.
LossReport total_loss(const Scene& scene, const ModelParams& params, const ModelConfig& model,
                      const LossConfig& loss, ModelParams* grads = nullptr);

}  // namespace unidps

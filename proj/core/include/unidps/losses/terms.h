#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "unidps/losses/matching.h"
#include "unidps/numerics/grid.h"
#include "unidps/scene/types.h"

namespace unidps {

inline constexpr double kScaleInvariantLambda = 0.85;
inline constexpr double kNoObjectWeight = 0.1;
inline constexpr double kLogClamp = 1e-12;

// Ground truth rasterised onto the grid where mask and depth losses are
// evaluated.
struct LossTargets {
  GridSize grid;
  std::vector<int> segment;               // per pixel: gt segment index, -1 = void
  std::vector<std::uint32_t> categories;  // per gt segment
  std::vector<std::size_t> areas;         // per gt segment, pixels on `grid`
  std::vector<double> depth;              // empty when the scene has no depth
  std::vector<std::uint8_t> valid;

  std::size_t num_segments() const { return categories.size(); }
  bool has_depth() const { return !depth.empty(); }
};

// stride 1 keeps full resolution. Larger strides sample panoptic labels at
// cell centres and depth at the valid pixel closest to the cell centre
// (invalid when the cell has none).
LossTargets make_targets(const Scene& scene, std::size_t stride);

// Nearest-label downsampling of an id map to `to` (cell centres).
std::vector<std::uint32_t> downsample_labels(const std::vector<std::uint32_t>& ids, GridSize from,
                                             GridSize to);

// Valid-aware nearest downsampling of a depth map.
void downsample_depth(const std::vector<double>& depth, const std::vector<std::uint8_t>& valid,
                      GridSize from, GridSize to, std::vector<double>& out_depth,
                      std::vector<std::uint8_t>& out_valid);

struct TermResult {
  double value = 0.0;
  Tensor grad;  // same shape as the differentiated input
};

// Matching cost w_cls * (-p(class)) + w_mask * (BCE + dice) for every
// (query, gt segment) pair. logits are [N, P] on targets.grid.
Tensor matching_cost(const Tensor& class_probs, const Tensor& logits, const LossTargets& targets,
                     double w_cls, double w_mask);

// Weighted mean cross-entropy over all queries. Matched queries target
// their gt category, the rest the no-object class (last column) with weight
// no_object_weight. Gradient is w.r.t. the logits.
TermResult loss_cls(const Tensor& class_logits, const MatchResult& match,
                    const std::vector<std::uint32_t>& categories,
                    double no_object_weight = kNoObjectWeight);

struct MaskTermResult : TermResult {
  double bce = 0.0;
  double dice = 0.0;
};

// Mean over matched pairs of pixel-mean BCE plus soft dice
// 1 - (2 sum(p g) + 1) / (sum p + sum g + 1). logits are [N, P].
MaskTermResult loss_mask(const Tensor& logits, const LossTargets& targets,
                         const MatchResult& match);

// Scale-invariant log loss (1/n) sum g^2 - (lambda/n^2) (sum g)^2 with
// g = log pred - log gt. Adds dL/dpred into grad (same length as pred).
double scale_invariant_loss(std::span<const double> pred, std::span<const double> gt,
                            double lambda, std::span<double> grad);

struct DepthTermResult {
  double value = 0.0;
  double segment_term = 0.0;  // mean over matched segments with valid pixels
  double backup_term = 0.0;
  std::size_t segments_used = 0;
  bool backup_used = false;
  Tensor segment_grad;  // [N, P]
  Tensor backup_grad;   // [P]
};

// Per matched segment over (gt mask & valid) plus the backup map over all
// valid pixels. Either input may be empty to drop its part.
DepthTermResult loss_depth(const Tensor& segment_depth, const Tensor& backup_depth,
                           const LossTargets& targets, const MatchResult& match,
                           double lambda = kScaleInvariantLambda);

}  // namespace unidps

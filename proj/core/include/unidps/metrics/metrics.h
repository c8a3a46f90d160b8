#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "unidps/scene/types.h"

namespace unidps {

inline constexpr std::array<double, 3> kDpqThresholds{0.1, 0.25, 0.5};

struct ClassStats {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double iou_sum = 0.0;

  double pq() const;
};

// Per-category counts, keyed by category id.
struct PanopticStats {
  std::map<std::uint32_t, ClassStats> classes;

  void merge(const PanopticStats& other);
};

struct QualityScores {
  double all = 0.0;
  double thing = 0.0;
  double stuff = 0.0;
};

// Matching of prediction and ground-truth segments: same category and
// IoU > 0.5, with GT-void pixels removed from the union. Unmatched
// predictions lying more than half on GT void are not false positives.
// Matched IoUs are summed in ascending gt id order. Throws DimensionError on
// size mismatch and InvalidPanopticMap on unlisted ids.
PanopticStats panoptic_stats(const PanopticMap& pred, const PanopticMap& gt);

// Mean of per-class PQ over classes with at least one gt segment, in
// ascending category order; thing/stuff use the same rule on their subsets.
QualityScores quality(const PanopticStats& stats, const CategoryTable& categories);

double panoptic_quality(const PanopticMap& pred, const PanopticMap& gt,
                        const CategoryTable& categories = {});

// Prediction with every pixel voided whose gt depth is valid and whose
// relative depth error exceeds lambda (or whose predicted depth is invalid).
PanopticMap void_by_depth(const PanopticMap& pred, const DepthMap& pred_depth,
                          const DepthMap& gt_depth, double lambda);

double dpq(const PanopticMap& pred_pan, const DepthMap& pred_depth, const PanopticMap& gt_pan,
           const DepthMap& gt_depth, double lambda, const CategoryTable& categories = {});

struct DepthStats {
  std::size_t count = 0;
  std::size_t missing = 0;  // valid gt pixels without a predicted depth
  double abs_rel_sum = 0.0;
  double log_sq_sum = 0.0;
  std::array<std::size_t, 3> delta_count{};

  void merge(const DepthStats& other);
};

struct DepthScores {
  double coverage = 1.0;  // share of valid gt pixels with a prediction
  double abs_rel = 0.0;
  double rmse_log = 0.0;
  std::array<double, 3> delta{};
};

// Over pixels where both maps are valid; valid gt pixels lacking a
// prediction are counted in `missing` (only possible without the backup map).
DepthStats depth_stats(const DepthMap& pred, const DepthMap& gt);
// Throws std::invalid_argument when no pixel was counted.
DepthScores depth_scores(const DepthStats& stats);
DepthScores depth_metrics(const DepthMap& pred, const DepthMap& gt);

struct SceneEvaluation {
  bool has_panoptic = false;
  bool has_depth = false;
  PanopticStats pq;
  std::array<PanopticStats, kDpqThresholds.size()> dpq;
  DepthStats depth;
};

// Terms whose ground truth is missing (annotation mode) are skipped.
SceneEvaluation evaluate_scene(const PanopticMap& pred_pan, const DepthMap& pred_depth,
                               const Scene& gt);

struct MetricReport {
  std::size_t scenes = 0;
  QualityScores pq;
  std::array<QualityScores, kDpqThresholds.size()> dpq;
  double dpq_mean = 0.0;
  DepthScores depth;
  bool has_panoptic = false;
  bool has_depth = false;
  PanopticStats counts;

  // Quality values as percentages with one decimal. Depth errors are null
  // when no ground-truth depth pixel received a prediction.
  nlohmann::json to_json() const;
};

// Pools counts over scenes before forming ratios. Throws on an empty list.
MetricReport aggregate(const std::vector<SceneEvaluation>& scenes, const CategoryTable& categories);

}  // namespace unidps

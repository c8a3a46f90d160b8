#pragma once

#include <vector>

#include "unidps/scene/types.h"
#include "unidps/segmentation/decoder.h"

namespace unidps {

struct PostprocessConfig {
  double score_threshold = 0.5;  // per-query confidence
  double mask_threshold = 0.5;   // winning mask probability must exceed this
  std::size_t min_area = 32;     // full-resolution pixels
};

struct PanopticResult {
  PanopticMap panoptic;                   // full resolution
  std::vector<int> owner;                 // per pixel: owning query, -1 = void
  std::vector<std::size_t> kept_query_ids;  // ascending
  std::vector<double> confidence;         // per query: max real-class probability
  std::vector<std::uint32_t> query_category;  // 0 when the query is not kept
};

// Confidence-filtered panoptic inference. A query is a candidate when its
// best real class reaches score_threshold and beats the no-object class.
// Each pixel goes to the candidate maximising score * mask probability
// (lowest index on ties); mask logits are bilinearly upsampled to full
// resolution before the sigmoid. Pixels whose winning probability is not
// above mask_threshold, and candidates left with fewer than min_area pixels,
// become void. Queries predicting the same stuff category share one segment.
PanopticResult panoptic_postprocess(const SegPrediction& pred, GridSize full,
                                    const CategoryTable& categories,
                                    const PostprocessConfig& config = {});

}  // namespace unidps

#include "unidps/segmentation/postprocess.h"

#include <map>

namespace unidps {

PanopticResult panoptic_postprocess(const SegPrediction& pred, GridSize full,
                                    const CategoryTable& categories,
                                    const PostprocessConfig& config) {
  const std::size_t n = pred.class_probs.rows();
  const std::size_t k = pred.class_probs.cols() - 1;  // real classes
  PanopticResult res;
  res.panoptic = PanopticMap(full.height, full.width);
  res.owner.assign(full.area(), -1);
  res.confidence.assign(n, 0.0);
  res.query_category.assign(n, 0);

  std::vector<std::size_t> candidates;
  std::vector<std::uint32_t> cls(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = pred.class_probs.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (p[c] > p[best]) best = c;
    res.confidence[i] = p[best];
    cls[i] = static_cast<std::uint32_t>(best + 1);
    const bool no_object_wins = p[k] > p[best];
    if (!no_object_wins && p[best] >= config.score_threshold) candidates.push_back(i);
  }

  if (!candidates.empty()) {
    const BilinearPlan plan(pred.grid, full);
    const std::size_t area4 = pred.grid.area();
    std::vector<double> best_prob(full.area(), 0.0);
    std::vector<double> best_score(full.area(), -1.0);
    for (std::size_t i : candidates) {
      const double* logits = &pred.mask_logits[i * area4];
      for (std::size_t px = 0; px < full.area(); ++px) {
        const double prob = sigmoid(plan.sample(logits, px));
        const double score = res.confidence[i] * prob;
        if (score > best_score[px]) {
          best_score[px] = score;
          best_prob[px] = prob;
          res.owner[px] = static_cast<int>(i);
        }
      }
    }
    std::vector<std::size_t> area(n, 0);
    for (std::size_t px = 0; px < full.area(); ++px) {
      if (res.owner[px] >= 0 && !(best_prob[px] > config.mask_threshold)) res.owner[px] = -1;
      if (res.owner[px] >= 0) ++area[res.owner[px]];
    }
    for (std::size_t i : candidates)
      if (area[i] >= config.min_area) res.kept_query_ids.push_back(i);
    std::vector<char> kept(n, 0);
    for (std::size_t i : res.kept_query_ids) kept[i] = 1;
    for (int& o : res.owner)
      if (o >= 0 && !kept[o]) o = -1;

    std::vector<std::uint32_t> segment_id(n, kVoidId);
    std::map<std::uint32_t, std::uint32_t> instances;
    for (std::size_t i : res.kept_query_ids) {
      const std::uint32_t c = cls[i];
      res.query_category[i] = c;
      const bool thing = categories.is_thing(c);
      const std::uint32_t id = thing ? encode_panoptic_id(c, ++instances[c])
                                     : encode_panoptic_id(c, 0);
      segment_id[i] = id;
      if (!res.panoptic.find(id)) res.panoptic.segments.push_back({id, c, thing});
    }
    for (std::size_t px = 0; px < full.area(); ++px)
      if (res.owner[px] >= 0) res.panoptic.ids[px] = segment_id[res.owner[px]];
  }
  return res;
}

}  // namespace unidps

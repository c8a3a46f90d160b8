#include "unidps/metrics/metrics.h"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_map>

namespace unidps {

double ClassStats::pq() const {
  const double denom = static_cast<double>(tp) + 0.5 * static_cast<double>(fp) +
                       0.5 * static_cast<double>(fn);
  return denom > 0.0 ? iou_sum / denom : 0.0;
}

void PanopticStats::merge(const PanopticStats& other) {
  for (const auto& [cat, s] : other.classes) {
    ClassStats& d = classes[cat];
    d.tp += s.tp;
    d.fp += s.fp;
    d.fn += s.fn;
    d.iou_sum += s.iou_sum;
  }
}

PanopticStats panoptic_stats(const PanopticMap& pred, const PanopticMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("panoptic_stats: prediction and ground truth sizes differ");
  pred.validate();
  gt.validate();

  std::map<std::uint32_t, std::size_t> pred_area, gt_area, pred_void;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;  // (gt, pred)
  for (std::size_t px = 0; px < pred.ids.size(); ++px) {
    const std::uint32_t p = pred.ids[px], g = gt.ids[px];
    if (p != kVoidId) ++pred_area[p];
    if (g != kVoidId) ++gt_area[g];
    if (p != kVoidId && g == kVoidId) ++pred_void[p];
    if (p != kVoidId && g != kVoidId) ++inter[{g, p}];
  }

  std::unordered_map<std::uint32_t, std::uint32_t> pred_cat, gt_cat;
  for (const auto& s : pred.segments) pred_cat[s.id] = s.category_id;
  for (const auto& s : gt.segments) gt_cat[s.id] = s.category_id;

  PanopticStats stats;
  std::map<std::uint32_t, bool> pred_matched, gt_matched;
  // inter is ordered by gt id, so IoUs accumulate in ascending gt id order.
  for (const auto& [key, count] : inter) {
    const auto [g, p] = key;
    if (gt_cat[g] != pred_cat[p]) continue;
    const double uni = static_cast<double>(pred_area[p] + gt_area[g] - count) -
                       static_cast<double>(pred_void[p]);
    const double iou = static_cast<double>(count) / uni;
    if (iou > 0.5) {
      if (gt_matched[g] || pred_matched[p])
        throw std::logic_error("panoptic_stats: segment matched twice");
      gt_matched[g] = pred_matched[p] = true;
      ClassStats& s = stats.classes[gt_cat[g]];
      ++s.tp;
      s.iou_sum += iou;
    }
  }
  for (const auto& [g, area] : gt_area)
    if (!gt_matched[g]) ++stats.classes[gt_cat[g]].fn;
  for (const auto& [p, area] : pred_area) {
    if (pred_matched[p]) continue;
    if (static_cast<double>(pred_void[p]) / static_cast<double>(area) > 0.5) continue;
    ++stats.classes[pred_cat[p]].fp;
  }
  return stats;
}

QualityScores quality(const PanopticStats& stats, const CategoryTable& categories) {
  QualityScores q;
  double sum_all = 0.0, sum_thing = 0.0, sum_stuff = 0.0;
  std::size_t n_all = 0, n_thing = 0, n_stuff = 0;
  for (const auto& [cat, s] : stats.classes) {
    if (s.tp + s.fn == 0) continue;  // absent from ground truth
    const double v = s.pq();
    sum_all += v;
    ++n_all;
    if (categories.is_thing(cat)) {
      sum_thing += v;
      ++n_thing;
    } else {
      sum_stuff += v;
      ++n_stuff;
    }
  }
  if (n_all) q.all = sum_all / static_cast<double>(n_all);
  if (n_thing) q.thing = sum_thing / static_cast<double>(n_thing);
  if (n_stuff) q.stuff = sum_stuff / static_cast<double>(n_stuff);
  return q;
}

double panoptic_quality(const PanopticMap& pred, const PanopticMap& gt,
                        const CategoryTable& categories) {
  return quality(panoptic_stats(pred, gt), categories).all;
}

PanopticMap void_by_depth(const PanopticMap& pred, const DepthMap& pred_depth,
                          const DepthMap& gt_depth, double lambda) {
  if (pred_depth.grid() != pred.grid() || gt_depth.grid() != pred.grid())
    throw DimensionError("void_by_depth: depth and panoptic sizes differ");
  PanopticMap out = pred;
  for (std::size_t px = 0; px < out.ids.size(); ++px) {
    if (!gt_depth.valid[px]) continue;
    const double g = gt_depth.depth[px];
    const bool ok = pred_depth.valid[px] && std::abs(pred_depth.depth[px] - g) <= lambda * g;
    if (!ok) out.ids[px] = kVoidId;
  }
  return out;
}

double dpq(const PanopticMap& pred_pan, const DepthMap& pred_depth, const PanopticMap& gt_pan,
           const DepthMap& gt_depth, double lambda, const CategoryTable& categories) {
  return panoptic_quality(void_by_depth(pred_pan, pred_depth, gt_depth, lambda), gt_pan,
                          categories);
}

void DepthStats::merge(const DepthStats& other) {
  count += other.count;
  missing += other.missing;
  abs_rel_sum += other.abs_rel_sum;
  log_sq_sum += other.log_sq_sum;
  for (std::size_t k = 0; k < delta_count.size(); ++k) delta_count[k] += other.delta_count[k];
}

DepthStats depth_stats(const DepthMap& pred, const DepthMap& gt) {
  if (pred.grid() != gt.grid()) throw DimensionError("depth_stats: sizes differ");
  DepthStats s;
  for (std::size_t px = 0; px < gt.depth.size(); ++px) {
    if (!gt.valid[px]) continue;
    if (!pred.valid[px]) {
      ++s.missing;
      continue;
    }
    const double d = pred.depth[px], g = gt.depth[px];
    ++s.count;
    s.abs_rel_sum += std::abs(d - g) / g;
    const double lg = std::log(d) - std::log(g);
    s.log_sq_sum += lg * lg;
    const double ratio = std::max(d / g, g / d);
    double thr = 1.25;
    for (std::size_t k = 0; k < 3; ++k, thr *= 1.25)
      if (ratio < thr) ++s.delta_count[k];
  }
  return s;
}

DepthScores depth_scores(const DepthStats& s) {
  if (s.count == 0) throw std::invalid_argument("depth metrics: no valid ground-truth pixel");
  const double n = static_cast<double>(s.count);
  DepthScores r;
  r.coverage = n / static_cast<double>(s.count + s.missing);
  r.abs_rel = s.abs_rel_sum / n;
  r.rmse_log = std::sqrt(s.log_sq_sum / n);
  for (std::size_t k = 0; k < 3; ++k) r.delta[k] = static_cast<double>(s.delta_count[k]) / n;
  return r;
}

DepthScores depth_metrics(const DepthMap& pred, const DepthMap& gt) {
  return depth_scores(depth_stats(pred, gt));
}

SceneEvaluation evaluate_scene(const PanopticMap& pred_pan, const DepthMap& pred_depth,
                               const Scene& gt) {
  SceneEvaluation e;
  e.has_panoptic = gt.has_panoptic();
  e.has_depth = gt.has_depth();
  if (e.has_panoptic) {
    e.pq = panoptic_stats(pred_pan, gt.panoptic);
    for (std::size_t k = 0; k < kDpqThresholds.size(); ++k) {
      const PanopticMap voided =
          e.has_depth ? void_by_depth(pred_pan, pred_depth, gt.depth, kDpqThresholds[k])
                      : pred_pan;
      e.dpq[k] = panoptic_stats(voided, gt.panoptic);
    }
  }
  if (e.has_depth) e.depth = depth_stats(pred_depth, gt.depth);
  return e;
}

MetricReport aggregate(const std::vector<SceneEvaluation>& scenes,
                       const CategoryTable& categories) {
  if (scenes.empty()) throw std::invalid_argument("aggregate: no scenes");
  MetricReport r;
  r.scenes = scenes.size();
  std::array<PanopticStats, kDpqThresholds.size()> dpq;
  DepthStats depth;
  for (const auto& s : scenes) {
    if (s.has_panoptic) {
      r.has_panoptic = true;
      r.counts.merge(s.pq);
      for (std::size_t k = 0; k < dpq.size(); ++k) dpq[k].merge(s.dpq[k]);
    }
    if (s.has_depth) depth.merge(s.depth);
  }
  if (r.has_panoptic) {
    r.pq = quality(r.counts, categories);
    for (std::size_t k = 0; k < dpq.size(); ++k) {
      r.dpq[k] = quality(dpq[k], categories);
      r.dpq_mean += r.dpq[k].all / static_cast<double>(dpq.size());
    }
  }
  if (depth.count > 0) {
    r.has_depth = true;
    r.depth = depth_scores(depth);
  } else if (depth.missing > 0) {
    // Depth ground truth exists but nothing was predicted on it.
    r.has_depth = true;
    r.depth.coverage = 0.0;
  }
  return r;
}

namespace {

double percent(double v) { return std::round(v * 1000.0) / 10.0; }
double round_to(double v, double scale) { return std::round(v * scale) / scale; }

nlohmann::json quality_json(const QualityScores& q) {
  return {{"all", percent(q.all)}, {"thing", percent(q.thing)}, {"stuff", percent(q.stuff)}};
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["scenes"] = scenes;
  if (has_panoptic) {
    j["pq"] = quality_json(pq);
    nlohmann::json d = nlohmann::json::object();
    for (std::size_t k = 0; k < kDpqThresholds.size(); ++k) {
      char key[16];
      std::snprintf(key, sizeof key, "%.2g", kDpqThresholds[k]);
      d[key] = quality_json(dpq[k]);
    }
    j["dpq"] = d;
    j["dpq_mean"] = percent(dpq_mean);
    nlohmann::json c = nlohmann::json::object();
    for (const auto& [cat, s] : counts.classes)
      c[std::to_string(cat)] = {{"tp", s.tp}, {"fp", s.fp}, {"fn", s.fn},
                                {"iou_sum", round_to(s.iou_sum, 1e6)}};
    j["counts"] = c;
  }
  if (has_depth) {
    j["depth_coverage"] = percent(depth.coverage);
    if (depth.coverage > 0.0) {
      j["abs_rel"] = round_to(depth.abs_rel, 1e4);
      j["rmse_log"] = round_to(depth.rmse_log, 1e4);
      j["delta"] = {percent(depth.delta[0]), percent(depth.delta[1]), percent(depth.delta[2])};
    } else {
      j["abs_rel"] = j["rmse_log"] = j["delta"] = nullptr;
    }
  }
  return j;
}

}  // namespace unidps

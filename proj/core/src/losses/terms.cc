#include "unidps/losses/terms.h"

#include <cmath>
#include <limits>

#include "unidps/numerics/ops.h"

namespace unidps {

std::vector<std::uint32_t> downsample_labels(const std::vector<std::uint32_t>& ids, GridSize from,
                                             GridSize to) {
  const std::size_t fy = from.height / to.height, fx = from.width / to.width;
  std::vector<std::uint32_t> out(to.area());
  for (std::size_t y = 0; y < to.height; ++y)
    for (std::size_t x = 0; x < to.width; ++x)
      out[y * to.width + x] = ids[cell_center(y, fy) * from.width + cell_center(x, fx)];
  return out;
}

void downsample_depth(const std::vector<double>& depth, const std::vector<std::uint8_t>& valid,
                      GridSize from, GridSize to, std::vector<double>& out_depth,
                      std::vector<std::uint8_t>& out_valid) {
  const std::size_t fy = from.height / to.height, fx = from.width / to.width;
  out_depth.assign(to.area(), 0.0);
  out_valid.assign(to.area(), 0);
  for (std::size_t y = 0; y < to.height; ++y)
    for (std::size_t x = 0; x < to.width; ++x) {
      const long cy = static_cast<long>(cell_center(y, fy));
      const long cx = static_cast<long>(cell_center(x, fx));
      long best = std::numeric_limits<long>::max();
      for (std::size_t yy = y * fy; yy < (y + 1) * fy; ++yy)
        for (std::size_t xx = x * fx; xx < (x + 1) * fx; ++xx) {
          const std::size_t src = yy * from.width + xx;
          if (!valid[src]) continue;
          const long dy = static_cast<long>(yy) - cy, dx = static_cast<long>(xx) - cx;
          const long d2 = dy * dy + dx * dx;
          if (d2 < best) {
            best = d2;
            out_depth[y * to.width + x] = depth[src];
            out_valid[y * to.width + x] = 1;
          }
        }
    }
}

LossTargets make_targets(const Scene& scene, std::size_t stride) {
  const GridSize full = scene.panoptic.grid();
  const GridSize grid{full.height / stride, full.width / stride};
  LossTargets t;
  t.grid = grid;
  if (scene.has_panoptic()) {
    const auto ids = stride == 1 ? scene.panoptic.ids
                                 : downsample_labels(scene.panoptic.ids, full, grid);
    t.segment.assign(grid.area(), -1);
    for (std::size_t s = 0; s < scene.panoptic.segments.size(); ++s)
      t.categories.push_back(scene.panoptic.segments[s].category_id);
    t.areas.assign(t.categories.size(), 0);
    for (std::size_t px = 0; px < grid.area(); ++px) {
      if (ids[px] == kVoidId) continue;
      for (std::size_t s = 0; s < scene.panoptic.segments.size(); ++s)
        if (scene.panoptic.segments[s].id == ids[px]) {
          t.segment[px] = static_cast<int>(s);
          ++t.areas[s];
          break;
        }
    }
  } else {
    t.segment.assign(grid.area(), -1);
  }
  if (scene.has_depth()) {
    if (stride == 1) {
      t.depth = scene.depth.depth;
      t.valid = scene.depth.valid;
    } else {
      downsample_depth(scene.depth.depth, scene.depth.valid, full, grid, t.depth, t.valid);
    }
  }
  return t;
}

namespace {

struct QuerySums {
  double softplus = 0.0;
  double prob = 0.0;
  std::vector<double> logit_in;  // per gt segment
  std::vector<double> prob_in;
};

QuerySums query_sums(const double* x, const LossTargets& t) {
  QuerySums s;
  s.logit_in.assign(t.num_segments(), 0.0);
  s.prob_in.assign(t.num_segments(), 0.0);
  for (std::size_t px = 0; px < t.grid.area(); ++px) {
    const double p = sigmoid(x[px]);
    s.softplus += softplus(x[px]);
    s.prob += p;
    if (const int g = t.segment[px]; g >= 0) {
      s.logit_in[g] += x[px];
      s.prob_in[g] += p;
    }
  }
  return s;
}

double dice_from_sums(double prob_in, double prob, double area) {
  return 1.0 - (2.0 * prob_in + 1.0) / (prob + area + 1.0);
}

}  // namespace

Tensor matching_cost(const Tensor& class_probs, const Tensor& logits, const LossTargets& targets,
                     double w_cls, double w_mask) {
  const std::size_t n = class_probs.rows(), g = targets.num_segments();
  const double area = static_cast<double>(targets.grid.area());
  Tensor cost({n, g});
  for (std::size_t i = 0; i < n; ++i) {
    const QuerySums s = query_sums(&logits[i * targets.grid.area()], targets);
    for (std::size_t j = 0; j < g; ++j) {
      const double bce = (s.softplus - s.logit_in[j]) / area;
      const double dice =
          dice_from_sums(s.prob_in[j], s.prob, static_cast<double>(targets.areas[j]));
      const double p = class_probs(i, targets.categories[j] - 1);
      cost(i, j) = w_cls * (-p) + w_mask * (bce + dice);
    }
  }
  return cost;
}

TermResult loss_cls(const Tensor& class_logits, const MatchResult& match,
                    const std::vector<std::uint32_t>& categories, double no_object_weight) {
  const std::size_t n = class_logits.rows(), k1 = class_logits.cols();
  const Tensor probs = softmax(class_logits, -1);
  std::vector<std::size_t> target(n, k1 - 1);
  std::vector<double> weight(n, no_object_weight);
  for (const auto& [q, g] : match.assignment) {
    target[q] = categories[g] - 1;
    weight[q] = 1.0;
  }
  double wsum = 0.0;
  for (double w : weight) wsum += w;

  TermResult r;
  r.grad = zeros_like(class_logits);
  if (wsum <= 0.0) return r;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs(i, target[i]);
    const double wi = weight[i] / wsum;
    if (p > kLogClamp) {
      r.value -= wi * std::log(p);
      for (std::size_t c = 0; c < k1; ++c)
        r.grad(i, c) = wi * (probs(i, c) - (c == target[i] ? 1.0 : 0.0));
    } else {
      r.value -= wi * std::log(kLogClamp);
    }
  }
  return r;
}

MaskTermResult loss_mask(const Tensor& logits, const LossTargets& targets,
                         const MatchResult& match) {
  MaskTermResult r;
  r.grad = zeros_like(logits);
  if (match.assignment.empty()) return r;
  const std::size_t area = targets.grid.area();
  const double inv_pairs = 1.0 / static_cast<double>(match.assignment.size());
  const double inv_area = 1.0 / static_cast<double>(area);
  for (const auto& [q, g] : match.assignment) {
    const double* x = &logits[q * area];
    double* dx = &r.grad[q * area];
    double bce = 0.0, prob = 0.0, inter = 0.0;
    for (std::size_t px = 0; px < area; ++px) {
      const double gt = targets.segment[px] == static_cast<int>(g) ? 1.0 : 0.0;
      const double p = sigmoid(x[px]);
      bce += softplus(x[px]) - gt * x[px];
      prob += p;
      inter += p * gt;
    }
    const double denom = prob + static_cast<double>(targets.areas[g]) + 1.0;
    const double numer = 2.0 * inter + 1.0;
    r.bce += bce * inv_area * inv_pairs;
    r.dice += (1.0 - numer / denom) * inv_pairs;
    for (std::size_t px = 0; px < area; ++px) {
      const double gt = targets.segment[px] == static_cast<int>(g) ? 1.0 : 0.0;
      const double p = sigmoid(x[px]);
      const double dbce = (p - gt) * inv_area;
      const double ddice_dp = -(2.0 * gt * denom - numer) / (denom * denom);
      dx[px] = (dbce + ddice_dp * p * (1.0 - p)) * inv_pairs;
    }
  }
  r.value = r.bce + r.dice;
  return r;
}

double scale_invariant_loss(std::span<const double> pred, std::span<const double> gt,
                            double lambda, std::span<double> grad) {
  const std::size_t n = pred.size();
  if (n == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0, sum_sq = 0.0;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = std::log(pred[i]) - std::log(gt[i]);
    sum += g[i];
    sum_sq += g[i] * g[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    grad[i] += 2.0 * inv_n * (g[i] - lambda * inv_n * sum) / pred[i];
  return sum_sq * inv_n - lambda * sum * sum * inv_n * inv_n;
}

DepthTermResult loss_depth(const Tensor& segment_depth, const Tensor& backup_depth,
                           const LossTargets& targets, const MatchResult& match, double lambda) {
  DepthTermResult r;
  const std::size_t area = targets.grid.area();
  if (!targets.has_depth()) return r;

  if (!segment_depth.empty()) {
    r.segment_grad = zeros_like(segment_depth);
    std::vector<std::pair<std::size_t, std::vector<std::size_t>>> pixel_sets;
    for (const auto& [q, g] : match.assignment) {
      std::vector<std::size_t> pixels;
      for (std::size_t px = 0; px < area; ++px)
        if (targets.valid[px] && targets.segment[px] == static_cast<int>(g)) pixels.push_back(px);
      if (!pixels.empty()) pixel_sets.emplace_back(q, std::move(pixels));
    }
    r.segments_used = pixel_sets.size();
    const double w = pixel_sets.empty() ? 0.0 : 1.0 / static_cast<double>(pixel_sets.size());
    for (const auto& [q, pixels] : pixel_sets) {
      std::vector<double> pred, gt, grad(pixels.size(), 0.0);
      for (std::size_t px : pixels) {
        pred.push_back(segment_depth[q * area + px]);
        gt.push_back(targets.depth[px]);
      }
      r.segment_term += w * scale_invariant_loss(pred, gt, lambda, grad);
      for (std::size_t i = 0; i < pixels.size(); ++i)
        r.segment_grad[q * area + pixels[i]] += w * grad[i];
    }
  }

  if (!backup_depth.empty()) {
    r.backup_grad = zeros_like(backup_depth);
    std::vector<std::size_t> pixels;
    for (std::size_t px = 0; px < area; ++px)
      if (targets.valid[px]) pixels.push_back(px);
    if (!pixels.empty()) {
      r.backup_used = true;
      std::vector<double> pred, gt, grad(pixels.size(), 0.0);
      for (std::size_t px : pixels) {
        pred.push_back(backup_depth[px]);
        gt.push_back(targets.depth[px]);
      }
      r.backup_term = scale_invariant_loss(pred, gt, lambda, grad);
      for (std::size_t i = 0; i < pixels.size(); ++i) r.backup_grad[pixels[i]] = grad[i];
    }
  }
  r.value = r.segment_term + r.backup_term;
  return r;
}

}  // namespace unidps

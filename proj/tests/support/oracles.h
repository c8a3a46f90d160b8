#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They favour obvious loops over speed and share no code with core
// beyond the data types.

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "unidps/numerics/ops.h"
#include "unidps/numerics/rng.h"
#include "unidps/scene/types.h"

namespace unidps::oracle {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0);

Tensor naive_matmul(const Tensor& a, const Tensor& b);

// softmax(q k^T / sqrt(C)) computed as an explicit probability table, then
// the weighted sum of v rows. Rows with no allowed key use every key.
Tensor explicit_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          const AttentionMask* mask = nullptr);

// Central difference of f at x[i] with step h.
double central_difference(const std::function<double()>& f, double& x, double h);

// Minimum total cost over every injection of the smaller side into the
// larger one; summation in ascending gt (column) order.
double brute_force_min_cost(const Tensor& cost);

struct RefCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;
};

// Pair enumeration over all (gt, pred) segments of equal category.
std::map<std::uint32_t, RefCounts> brute_force_counts(const PanopticMap& pred,
                                                      const PanopticMap& gt);
double brute_force_pq(const PanopticMap& pred, const PanopticMap& gt,
                      const CategoryTable& categories = {});
// Voids prediction pixels that fail |d - g| <= lambda * g at valid gt
// pixels, then scores with brute_force_pq.
double brute_force_dpq(const PanopticMap& pred, const DepthMap& pred_depth, const PanopticMap& gt,
                       const DepthMap& gt_depth, double lambda,
                       const CategoryTable& categories = {});

// Random h x w panoptic map with at most max_segments segments drawn as
// axis-aligned rectangles over a random stuff background; void pixels appear
// when void_probability > 0.
PanopticMap random_panoptic(Rng& rng, std::size_t h, std::size_t w, int max_segments,
                            double void_probability, const CategoryTable& categories = {});
// Copy of `base` with some rectangles moved, relabelled or erased.
PanopticMap perturb_panoptic(const PanopticMap& base, Rng& rng,
                             const CategoryTable& categories = {});
DepthMap random_depth(Rng& rng, std::size_t h, std::size_t w, double valid_probability);

}  // namespace unidps::oracle

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "unidps/numerics/tensor.h"

namespace unidps {

struct MatchResult {
  // (query, gt segment) pairs sorted by query index.
  std::vector<std::pair<std::size_t, std::size_t>> assignment;
  std::vector<std::size_t> unmatched_queries;
  double total_cost = 0.0;  // summed in ascending gt order

  // gt index matched to each query, -1 when unmatched.
  std::vector<int> gt_for_query(std::size_t num_queries) const;
};

// Minimum-cost one-to-one assignment for a [N, G] cost matrix with
// min(N, G) pairs (shortest augmenting path with potentials). Throws
// NonFiniteError on non-finite costs.
MatchResult hungarian_match(const Tensor& cost);

}  // namespace unidps

#include "unidps/losses/matching.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace unidps {

std::vector<int> MatchResult::gt_for_query(std::size_t num_queries) const {
  std::vector<int> out(num_queries, -1);
  for (const auto& [q, g] : assignment) out[q] = static_cast<int>(g);
  return out;
}

namespace {

// Rows <= cols. Returns the column assigned to each row.
std::vector<std::size_t> solve(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  const std::size_t m = n ? a[0].size() : 0;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) col[p[j] - 1] = j - 1;
  return col;
}

}  // namespace

MatchResult hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("hungarian_match: cost must be a matrix");
  const std::size_t n = cost.dim(0), g = cost.dim(1);
  for (double c : cost.data())
    if (!std::isfinite(c)) throw NonFiniteError("hungarian_match: non-finite cost");

  MatchResult r;
  if (n > 0 && g > 0) {
    const bool transpose = g > n;  // solver wants rows <= cols
    const std::size_t rows = transpose ? n : g;
    const std::size_t cols = transpose ? g : n;
    std::vector<std::vector<double>> a(rows, std::vector<double>(cols));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) a[i][j] = transpose ? cost(i, j) : cost(j, i);
    const auto col = solve(a);
    for (std::size_t i = 0; i < rows; ++i) {
      if (transpose)
        r.assignment.emplace_back(i, col[i]);
      else
        r.assignment.emplace_back(col[i], i);
    }
  }
  std::sort(r.assignment.begin(), r.assignment.end());

  std::vector<std::pair<std::size_t, std::size_t>> by_gt;
  for (const auto& [q, gt] : r.assignment) by_gt.emplace_back(gt, q);
  std::sort(by_gt.begin(), by_gt.end());
  for (const auto& [gt, q] : by_gt) r.total_cost += cost(q, gt);

  std::vector<char> matched(n, 0);
  for (const auto& pr : r.assignment) matched[pr.first] = 1;
  for (std::size_t q = 0; q < n; ++q)
    if (!matched[q]) r.unmatched_queries.push_back(q);
  return r;
}

}  // namespace unidps

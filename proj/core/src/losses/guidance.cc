#include "unidps/losses/guidance.h"

#include <cmath>

#include "unidps/numerics/trace.h"
#include "unidps/scene/generator.h"

namespace unidps {

namespace {

void check_patch(GridSize grid, std::size_t k) {
  if (k < 3 || k % 2 == 0)
    throw ConfigError("patch size must be odd and at least 3, got " + std::to_string(k));
  if (!patch_fits(grid, k))
    throw ConfigError("patch size " + std::to_string(k) + " exceeds grid " +
                      std::to_string(grid.height) + "x" + std::to_string(grid.width));
}

template <typename Fn>
void for_each_window(GridSize grid, std::size_t k, Fn&& fn) {
  const std::size_t r = k / 2;
  for (std::size_t y = r; y + r < grid.height; ++y)
    for (std::size_t x = r; x + r < grid.width; ++x) {
      std::vector<std::size_t> neighbours;
      for (std::size_t yy = y - r; yy <= y + r; ++yy)
        for (std::size_t xx = x - r; xx <= x + r; ++xx)
          if (yy != y || xx != x) neighbours.push_back(yy * grid.width + xx);
      fn(y * grid.width + x, neighbours);
    }
}

double distance(const Tensor& f, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t c = 0; c < f.cols(); ++c) {
    const double d = f(a, c) - f(b, c);
    s += d * d;
  }
  return std::sqrt(s);
}

// Adds w * d||f_a - f_b|| / d(f_a, f_b); zero at coincident points.
void add_distance_grad(const Tensor& f, std::size_t a, std::size_t b, double dist, double w,
                       Tensor& grad) {
  if (dist <= 0.0) return;
  for (std::size_t c = 0; c < f.cols(); ++c) {
    const double g = w * (f(a, c) - f(b, c)) / dist;
    grad(a, c) += g;
    grad(b, c) -= g;
  }
}

Tensor normalize_rows(const Tensor& f, std::vector<double>& scale) {
  Tensor out = f;
  scale.assign(f.rows(), 0.0);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double s = kNormalizeEps * kNormalizeEps;
    for (double v : f.row(r)) s += v * v;
    scale[r] = 1.0 / std::sqrt(s);
    for (double& v : out.row(r)) v *= scale[r];
  }
  return out;
}

// Chain rule through f / sqrt(|f|^2 + eps^2).
Tensor normalize_rows_backward(const Tensor& f, const std::vector<double>& scale,
                               const Tensor& dnormed) {
  Tensor df = zeros_like(f);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < f.cols(); ++c) dot += f(r, c) * dnormed(r, c);
    const double s = scale[r], s3 = s * s * s;
    for (std::size_t c = 0; c < f.cols(); ++c) df(r, c) = s * dnormed(r, c) - s3 * f(r, c) * dot;
  }
  return df;
}

}  // namespace

bool patch_fits(GridSize grid, std::size_t k) { return k <= grid.height && k <= grid.width; }

PatchIndex build_semantic_patch_index(const std::vector<std::uint32_t>& labels, GridSize grid,
                                      std::size_t k) {
  check_patch(grid, k);
  PatchIndex index{k, grid, {}};
  for_each_window(grid, k, [&](std::size_t center, const std::vector<std::size_t>& nb) {
    if (labels[center] == 0) return;
    PatchAnchor a;
    a.center = center;
    for (std::size_t j : nb) {
      if (labels[j] == 0) continue;
      (labels[j] == labels[center] ? a.positives : a.negatives).push_back(j);
    }
    if (!a.negatives.empty()) index.anchors.push_back(std::move(a));
  });
  return index;
}

PatchIndex build_depth_patch_index(const std::vector<std::uint8_t>& valid, GridSize grid,
                                   std::size_t k) {
  check_patch(grid, k);
  PatchIndex index{k, grid, {}};
  for_each_window(grid, k, [&](std::size_t center, const std::vector<std::size_t>& nb) {
    if (!valid[center]) return;
    PatchAnchor a;
    a.center = center;
    for (std::size_t j : nb)
      if (valid[j]) a.positives.push_back(j);
    if (!a.positives.empty()) index.anchors.push_back(std::move(a));
  });
  return index;
}

double semantic_guidance_level(const Tensor& features, const PatchIndex& index, double alpha,
                               Tensor& grad) {
  if (index.anchors.empty()) return 0.0;
  std::vector<double> scale;
  const Tensor f = normalize_rows(features, scale);
  Tensor dnormed = zeros_like(f);
  trace::Recorder* rec = trace::active();
  const double w = 1.0 / static_cast<double>(index.anchors.size());
  // Running mean over anchors: identical per-anchor values come out exactly.
  double mean = 0.0;
  std::size_t seen = 0;
  for (const PatchAnchor& a : index.anchors) {
    ++seen;
    double dpos = 0.0, dneg = 0.0;
    std::size_t jpos = a.center, jneg = a.center;
    bool first = true;
    for (std::size_t j : a.positives) {
      const double d = distance(f, a.center, j);
      if (first || d > dpos) {
        dpos = d;
        jpos = j;
        first = false;
      }
    }
    first = true;
    for (std::size_t j : a.negatives) {
      const double d = distance(f, a.center, j);
      if (first || d < dneg) {
        dneg = d;
        jneg = j;
        first = false;
      }
    }
    const double hinge = alpha + dpos - dneg;
    if (rec) {
      rec->add(jpos);
      rec->add(jneg);
      rec->add(hinge > 0.0);
    }
    if (hinge <= 0.0) {
      mean -= mean / static_cast<double>(seen);
      continue;
    }
    mean += (hinge - mean) / static_cast<double>(seen);
    if (jpos != a.center) add_distance_grad(f, a.center, jpos, dpos, w, dnormed);
    add_distance_grad(f, a.center, jneg, dneg, -w, dnormed);
  }
  accumulate(grad, normalize_rows_backward(features, scale, dnormed));
  return mean;
}

double depth_guidance_level(const Tensor& features, const std::vector<double>& depth,
                            const PatchIndex& index, double tau, Tensor& grad) {
  if (index.anchors.empty()) return 0.0;
  if (grad.empty()) grad = zeros_like(features);
  const double w = 1.0 / static_cast<double>(index.anchors.size());
  double mean = 0.0;
  std::size_t seen = 0;
  for (const PatchAnchor& a : index.anchors) {
    double inner = 0.0;
    for (std::size_t j : a.positives) {
      const double wd = std::exp(-std::abs(depth[a.center] - depth[j]) / tau);
      const double dist = distance(features, a.center, j);
      const double term = wd * std::exp(-dist);
      inner -= term;
      // d(-w * term)/d dist = w * term
      add_distance_grad(features, a.center, j, dist, w * term, grad);
    }
    mean += (inner - mean) / static_cast<double>(++seen);
  }
  return mean;
}

GuidanceResult loss_semantic_guidance(const std::array<FeatureMap, kNumLevels>& features,
                                      const std::array<std::vector<std::uint32_t>, kNumLevels>& labels,
                                      std::size_t k, double alpha) {
  GuidanceResult r;
  std::array<double, kNumLevels> values{};
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    r.grad[l] = zeros_like(features[l].tokens);
    if (!patch_fits(features[l].grid, k)) continue;
    const PatchIndex index = build_semantic_patch_index(labels[l], features[l].grid, k);
    if (index.anchors.empty()) continue;
    values[l] = semantic_guidance_level(features[l].tokens, index, alpha, r.grad[l]);
    ++r.active_levels;
  }
  if (r.active_levels == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.active_levels);
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    r.value += values[l] * inv;
    r.grad[l] *= inv;
  }
  return r;
}

GuidanceResult loss_depth_guidance(const std::array<FeatureMap, kNumLevels>& features,
                                   const std::array<std::vector<double>, kNumLevels>& depth,
                                   const std::array<std::vector<std::uint8_t>, kNumLevels>& valid,
                                   std::size_t k, double tau) {
  GuidanceResult r;
  std::array<double, kNumLevels> values{};
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    r.grad[l] = zeros_like(features[l].tokens);
    if (!patch_fits(features[l].grid, k)) continue;
    const PatchIndex index = build_depth_patch_index(valid[l], features[l].grid, k);
    if (index.anchors.empty()) continue;
    values[l] = depth_guidance_level(features[l].tokens, depth[l], index, tau, r.grad[l]);
    ++r.active_levels;
  }
  if (r.active_levels == 0) return r;
  const double inv = 1.0 / static_cast<double>(r.active_levels);
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    r.value += values[l] * inv;
    r.grad[l] *= inv;
  }
  return r;
}

}  // namespace unidps

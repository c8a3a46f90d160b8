#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "unidps/numerics/grid.h"
#include "unidps/scene/encoder.h"

namespace unidps {

inline constexpr double kTripletMargin = 0.3;
inline constexpr std::size_t kGuidancePatch = 5;
inline constexpr double kDepthTemperature = 10.0;
inline constexpr double kNormalizeEps = 1e-8;

struct PatchAnchor {
  std::size_t center = 0;              // row-major pixel index
  std::vector<std::size_t> positives;  // same label (semantic) or valid neighbours (depth)
  std::vector<std::size_t> negatives;  // different label; unused for depth
};

struct PatchIndex {
  std::size_t k = 0;
  GridSize grid;
  std::vector<PatchAnchor> anchors;
};

// K x K windows, stride 1, fully inside the grid; the anchor is the window
// centre and is excluded from both sets. Void (0) pixels are neither anchors
// nor neighbours. Only anchors with at least one negative are kept.
// Throws ConfigError when K is even, below 3, or exceeds the grid.
PatchIndex build_semantic_patch_index(const std::vector<std::uint32_t>& labels, GridSize grid,
                                      std::size_t k);

// Anchors need valid depth and at least one valid neighbour; neighbours are
// restricted to valid pixels and stored in `positives`.
PatchIndex build_depth_patch_index(const std::vector<std::uint8_t>& valid, GridSize grid,
                                   std::size_t k);

// True when a K x K window fits in the grid.
bool patch_fits(GridSize grid, std::size_t k);

struct GuidanceResult {
  double value = 0.0;
  std::size_t active_levels = 0;
  std::array<Tensor, kNumLevels> grad;  // dL/dfeatures per level (zeros when inactive)
};

// Triplet hinge max(0, alpha + d+max - d-min) on L2-normalised features,
// mean over anchors per level, then mean over levels that have anchors.
// labels[l] is the panoptic id map sampled onto level l.
GuidanceResult loss_semantic_guidance(const std::array<FeatureMap, kNumLevels>& features,
                                      const std::array<std::vector<std::uint32_t>, kNumLevels>& labels,
                                      std::size_t k = kGuidancePatch,
                                      double alpha = kTripletMargin);

// -(1/N) sum_i sum_j exp(-|d_i - d_j| / tau) exp(-||F_i - F_j||) on raw
// features, per level over anchors with valid depth, then mean over levels
// that have anchors.
GuidanceResult loss_depth_guidance(const std::array<FeatureMap, kNumLevels>& features,
                                   const std::array<std::vector<double>, kNumLevels>& depth,
                                   const std::array<std::vector<std::uint8_t>, kNumLevels>& valid,
                                   std::size_t k = kGuidancePatch,
                                   double tau = kDepthTemperature);

// Single-level forms used by the multi-level losses; `grad` is accumulated.
double semantic_guidance_level(const Tensor& features, const PatchIndex& index, double alpha,
                               Tensor& grad);
double depth_guidance_level(const Tensor& features, const std::vector<double>& depth,
                            const PatchIndex& index, double tau, Tensor& grad);

}  // namespace unidps

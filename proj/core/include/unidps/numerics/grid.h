#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "unidps/numerics/tensor.h"

// Spatial helpers for row-major 2-D grids. Feature maps are stored
// channels-last as [h*w, C] ("tokens"); stacks of scalar maps are stored
// map-major as [N, h*w] (or [N, h, w]).
namespace unidps {

struct GridSize {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t area() const { return height * width; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

// Source index along one axis when sampling a coarse cell of a finer grid:
// the cell's centre pixel, rounding towards the lower index.
inline std::size_t cell_center(std::size_t coarse_index, std::size_t factor) {
  return coarse_index * factor + (factor - 1) / 2;
}

// Bilinear resampling with half-pixel centres (align_corners = false) and
// edge clamping, precomputed as four taps per output pixel.
class BilinearPlan {
 public:
  BilinearPlan(GridSize from, GridSize to);

  GridSize from() const { return from_; }
  GridSize to() const { return to_; }

  // [from.area(), C] -> [to.area(), C]
  Tensor apply_tokens(const Tensor& x) const;
  // adjoint of apply_tokens
  Tensor transpose_tokens(const Tensor& dy) const;
  // [N, from.area()] -> [N, to.area()]
  Tensor apply_maps(const Tensor& x) const;
  Tensor transpose_maps(const Tensor& dy) const;
  // Single output pixel of a single map.
  double sample(const double* map, std::size_t out_index) const;

 private:
  struct Tap {
    std::array<std::size_t, 4> src;
    std::array<double, 4> weight;
  };
  GridSize from_;
  GridSize to_;
  std::vector<Tap> taps_;
};

// 2x2 mean pooling of a token grid; grid dims must be even.
Tensor avg_pool2(const Tensor& tokens, GridSize grid);
Tensor avg_pool2_backward(const Tensor& dy, GridSize grid);

// Fixed 2-D sinusoidal encoding [h*w, C]; C must be divisible by 4.
Tensor sinusoidal_positions(GridSize grid, std::size_t channels);

}  // namespace unidps

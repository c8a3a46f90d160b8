#pragma once

#include <array>
#include <stdexcept>

#include "unidps/numerics/rng.h"
#include "unidps/scene/types.h"

namespace unidps {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 128;
  int things = 3;           // [0, 8]
  int stuff_bands = 2;      // [1, 4]
  double sparsity = 1.0;    // fraction of depth pixels kept, (0, 1]
  double max_depth = kDefaultMaxDepth;
  double noise_sigma = 0.02;
  double ellipse_probability = 0.5;
  std::size_t min_thing_area = 64;  // visible pixels required per thing
  CategoryTable categories;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

// Horizontal stuff bands with planar depth, overlaid by rectangular or
// elliptical things with planar depth. Each pixel shows the nearest surface;
// the image is category colour times depth shading plus Gaussian noise,
// quantised to 8 bits. Depth is quantised to 1/256 m.
Scene generate_scene(const SceneConfig& config, Rng& rng);

// RGB base colour of a category, components in [0, 1].
std::array<double, 3> category_color(std::uint32_t category);

}  // namespace unidps

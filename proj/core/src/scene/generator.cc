#include "unidps/scene/generator.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace unidps {

namespace {

struct Plane {
  double base, slope_x, slope_y;
};

struct Thing {
  std::uint32_t category;
  bool ellipse;
  double cx, cy, rx, ry;
  Plane plane;

  bool covers(std::size_t x, std::size_t y) const {
    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
    if (ellipse) return dx * dx + dy * dy <= 1.0;
    return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  }
  double depth(std::size_t x, std::size_t y, double max_depth) const {
    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
    return std::clamp(plane.base + plane.slope_x * dx + plane.slope_y * dy, 1.0, max_depth);
  }
};

struct Band {
  std::uint32_t category;
  std::size_t top, bottom;  // rows [top, bottom)
  Plane plane;

  double depth(std::size_t x, std::size_t y, std::size_t w, std::size_t h,
               double max_depth) const {
    const double nx = (static_cast<double>(x) + 0.5) / w - 0.5;
    const double ny = (static_cast<double>(y) + 0.5) / h - 0.5;
    return std::clamp(plane.base + plane.slope_x * nx + plane.slope_y * ny, 1.0, max_depth);
  }
};

// Index of the visible thing per pixel (-1 = none): nearest surface wins,
// lower index on exact ties.
std::vector<int> visible_things(const std::vector<Thing>& things, std::size_t h, std::size_t w,
                                double max_depth) {
  std::vector<int> owner(h * w, -1);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double best = 0.0;
      for (std::size_t t = 0; t < things.size(); ++t) {
        if (!things[t].covers(x, y)) continue;
        const double d = things[t].depth(x, y, max_depth);
        if (owner[y * w + x] < 0 || d < best) {
          owner[y * w + x] = static_cast<int>(t);
          best = d;
        }
      }
    }
  }
  return owner;
}

double quantize(double v, double levels) { return std::round(v * levels) / levels; }

std::vector<std::size_t> band_cuts(const SceneConfig& c, Rng& rng) {
  const std::size_t s = static_cast<std::size_t>(c.stuff_bands);
  const std::size_t min_gap = std::max<std::size_t>(4, c.height / (2 * s));
  for (;;) {
    std::vector<std::size_t> cuts{0};
    for (std::size_t i = 1; i < s; ++i)
      cuts.push_back(static_cast<std::size_t>(rng.range(1, static_cast<std::int64_t>(c.height) - 1)));
    cuts.push_back(c.height);
    std::sort(cuts.begin(), cuts.end());
    bool ok = true;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) ok &= cuts[i + 1] - cuts[i] >= min_gap;
    if (ok) return cuts;
  }
}

}  // namespace

void SceneConfig::validate() const {
  if (height == 0 || width == 0 || height % 32 || width % 32)
    throw ConfigError("scene: height and width must be positive multiples of 32");
  if (things < 0 || things > 8) throw ConfigError("scene: things must be in [0, 8]");
  if (stuff_bands < 1 || stuff_bands > 4)
    throw ConfigError("scene: stuff_bands must be in [1, 4]");
  if (stuff_bands > categories.num_stuff)
    throw ConfigError("scene: stuff_bands exceeds the number of stuff categories");
  if (things > 0 && categories.num_thing < 1)
    throw ConfigError("scene: things requested but no thing categories");
  if (!(sparsity > 0.0 && sparsity <= 1.0))
    throw ConfigError("scene: sparsity must be in (0, 1]");
  if (!(max_depth > 1.0)) throw ConfigError("scene: max_depth must exceed 1");
  if (noise_sigma < 0.0) throw ConfigError("scene: noise_sigma must be >= 0");
  if (ellipse_probability < 0.0 || ellipse_probability > 1.0)
    throw ConfigError("scene: ellipse_probability must be in [0, 1]");
}

std::array<double, 3> category_color(std::uint32_t category) {
  static constexpr std::array<std::array<double, 3>, 12> kPalette{{
      {0.55, 0.75, 0.95},  // sky-like
      {0.60, 0.60, 0.62},
      {0.45, 0.80, 0.35},
      {0.85, 0.75, 0.50},
      {0.95, 0.20, 0.20},
      {0.20, 0.30, 0.95},
      {0.95, 0.85, 0.10},
      {0.80, 0.30, 0.90},
      {0.10, 0.90, 0.85},
      {0.95, 0.55, 0.10},
      {0.50, 0.20, 0.10},
      {0.98, 0.98, 0.98},
  }};
  if (category == 0) return {0.0, 0.0, 0.0};
  return kPalette[(category - 1) % kPalette.size()];
}

Scene generate_scene(const SceneConfig& config, Rng& rng) {
  config.validate();
  const std::size_t h = config.height, w = config.width;
  const double dmax = config.max_depth;

  // Stuff bands with distinct categories.
  std::vector<std::uint32_t> stuff_cats(config.categories.num_stuff);
  std::iota(stuff_cats.begin(), stuff_cats.end(), 1u);
  for (std::size_t i = stuff_cats.size(); i > 1; --i)
    std::swap(stuff_cats[i - 1], stuff_cats[rng.below(i)]);
  const auto cuts = band_cuts(config, rng);
  std::vector<Band> bands;
  for (int b = 0; b < config.stuff_bands; ++b) {
    Plane p{rng.uniform(40.0, 75.0), rng.uniform(-5.0, 5.0), rng.uniform(-10.0, 0.0)};
    bands.push_back(Band{stuff_cats[b], cuts[b], cuts[b + 1], p});
  }

  // Things, rejecting placements that would leave any thing too occluded.
  std::vector<Thing> things;
  for (int t = 0; t < config.things; ++t) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Thing cand;
      cand.category = static_cast<std::uint32_t>(
          config.categories.num_stuff + 1 +
          static_cast<int>(rng.below(static_cast<std::uint64_t>(config.categories.num_thing))));
      cand.ellipse = rng.uniform() < config.ellipse_probability;
      cand.rx = rng.uniform(w / 12.0, w / 6.0);
      cand.ry = rng.uniform(h / 8.0, h / 4.0);
      cand.cx = rng.uniform(cand.rx, w - cand.rx);
      cand.cy = rng.uniform(cand.ry, h - cand.ry);
      cand.plane = Plane{rng.uniform(6.0, 30.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      auto trial = things;
      trial.push_back(cand);
      const auto owner = visible_things(trial, h, w, dmax);
      std::vector<std::size_t> area(trial.size(), 0);
      for (int o : owner)
        if (o >= 0) ++area[o];
      if (std::all_of(area.begin(), area.end(),
                      [&](std::size_t a) { return a >= config.min_thing_area; })) {
        things = std::move(trial);
        break;
      }
    }
  }

  Scene scene;
  scene.panoptic = PanopticMap(h, w);
  scene.depth = DepthMap(h, w);
  scene.image = Tensor({3, h, w});

  std::vector<std::uint32_t> thing_ids;
  std::vector<std::uint32_t> instance_counter(config.categories.num_categories() + 1, 0);
  for (const auto& b : bands)
    scene.panoptic.segments.push_back({encode_panoptic_id(b.category, 0), b.category, false});
  for (const auto& t : things) {
    const std::uint32_t id = encode_panoptic_id(t.category, ++instance_counter[t.category]);
    thing_ids.push_back(id);
    scene.panoptic.segments.push_back({id, t.category, true});
  }

  const auto owner = visible_things(things, h, w, dmax);
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t band = 0;
    while (band + 1 < bands.size() && y >= bands[band].bottom) ++band;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      std::uint32_t cat;
      double d;
      if (owner[i] >= 0) {
        const Thing& t = things[owner[i]];
        scene.panoptic.ids[i] = thing_ids[owner[i]];
        cat = t.category;
        d = t.depth(x, y, dmax);
      } else {
        scene.panoptic.ids[i] = encode_panoptic_id(bands[band].category, 0);
        cat = bands[band].category;
        d = bands[band].depth(x, y, w, h, dmax);
      }
      d = std::clamp(quantize(d, 256.0), 1.0, dmax);
      scene.depth.depth[i] = d;
      scene.depth.valid[i] = 1;
      const auto color = category_color(cat);
      const double shade = 0.3 + 0.7 * std::exp(-d / 30.0);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = color[ch] * shade + rng.normal(0.0, config.noise_sigma);
        scene.image[(ch * h + y) * w + x] = quantize(std::clamp(v, 0.0, 1.0), 255.0);
      }
    }
  }
  scene.panoptic.prune_empty_segments();

  if (config.sparsity < 1.0) {
    const std::size_t n = h * w;
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.sparsity * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < keep; ++i)
      std::swap(order[i], order[i + rng.below(n - i)]);
    std::fill(scene.depth.valid.begin(), scene.depth.valid.end(), 0);
    for (std::size_t i = 0; i < keep; ++i) scene.depth.valid[order[i]] = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (!scene.depth.valid[i]) scene.depth.depth[i] = 0.0;
  }
  return scene;
}

}  // namespace unidps

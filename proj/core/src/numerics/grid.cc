#include "unidps/numerics/grid.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace unidps {

namespace {

struct AxisTap {
  std::size_t lo, hi;
  double w_hi;
};

AxisTap axis_tap(std::size_t out, std::size_t in_size, std::size_t out_size) {
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  double src = (static_cast<double>(out) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const auto lo = static_cast<std::size_t>(std::floor(src));
  const std::size_t hi = std::min(lo + 1, in_size - 1);
  return AxisTap{lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

BilinearPlan::BilinearPlan(GridSize from, GridSize to) : from_(from), to_(to) {
  if (from.area() == 0 || to.area() == 0) throw DimensionError("bilinear: empty grid");
  std::vector<AxisTap> ys(to.height), xs(to.width);
  for (std::size_t y = 0; y < to.height; ++y) ys[y] = axis_tap(y, from.height, to.height);
  for (std::size_t x = 0; x < to.width; ++x) xs[x] = axis_tap(x, from.width, to.width);
  taps_.resize(to.area());
  for (std::size_t y = 0; y < to.height; ++y) {
    for (std::size_t x = 0; x < to.width; ++x) {
      const AxisTap& ty = ys[y];
      const AxisTap& tx = xs[x];
      Tap& t = taps_[y * to.width + x];
      t.src = {ty.lo * from.width + tx.lo, ty.lo * from.width + tx.hi,
               ty.hi * from.width + tx.lo, ty.hi * from.width + tx.hi};
      t.weight = {(1 - ty.w_hi) * (1 - tx.w_hi), (1 - ty.w_hi) * tx.w_hi,
                  ty.w_hi * (1 - tx.w_hi), ty.w_hi * tx.w_hi};
    }
  }
}

Tensor BilinearPlan::apply_tokens(const Tensor& x) const {
  if (x.rows() != from_.area()) throw DimensionError("bilinear: token count mismatch");
  const std::size_t c = x.cols();
  Tensor y({to_.area(), c});
  for (std::size_t o = 0; o < taps_.size(); ++o) {
    double* out = &y[o * c];
    for (int t = 0; t < 4; ++t) {
      const double w = taps_[o].weight[t];
      if (w == 0.0) continue;
      const double* in = &x[taps_[o].src[t] * c];
      for (std::size_t j = 0; j < c; ++j) out[j] += w * in[j];
    }
  }
  return y;
}

Tensor BilinearPlan::transpose_tokens(const Tensor& dy) const {
  if (dy.rows() != to_.area()) throw DimensionError("bilinear: token count mismatch");
  const std::size_t c = dy.cols();
  Tensor dx({from_.area(), c});
  for (std::size_t o = 0; o < taps_.size(); ++o) {
    const double* g = &dy[o * c];
    for (int t = 0; t < 4; ++t) {
      const double w = taps_[o].weight[t];
      if (w == 0.0) continue;
      double* out = &dx[taps_[o].src[t] * c];
      for (std::size_t j = 0; j < c; ++j) out[j] += w * g[j];
    }
  }
  return dx;
}

double BilinearPlan::sample(const double* map, std::size_t out_index) const {
  const Tap& t = taps_[out_index];
  double v = 0.0;
  for (int i = 0; i < 4; ++i) v += t.weight[i] * map[t.src[i]];
  return v;
}

Tensor BilinearPlan::apply_maps(const Tensor& x) const {
  const std::size_t n = x.size() / from_.area();
  if (n * from_.area() != x.size()) throw DimensionError("bilinear: map size mismatch");
  Tensor y({n, to_.area()});
  for (std::size_t m = 0; m < n; ++m) {
    const double* in = &x[m * from_.area()];
    double* out = &y[m * to_.area()];
    for (std::size_t o = 0; o < taps_.size(); ++o) out[o] = sample(in, o);
  }
  return y;
}

Tensor BilinearPlan::transpose_maps(const Tensor& dy) const {
  const std::size_t n = dy.size() / to_.area();
  if (n * to_.area() != dy.size()) throw DimensionError("bilinear: map size mismatch");
  Tensor dx({n, from_.area()});
  for (std::size_t m = 0; m < n; ++m) {
    const double* g = &dy[m * to_.area()];
    double* out = &dx[m * from_.area()];
    for (std::size_t o = 0; o < taps_.size(); ++o) {
      const Tap& t = taps_[o];
      for (int i = 0; i < 4; ++i) out[t.src[i]] += t.weight[i] * g[o];
    }
  }
  return dx;
}

Tensor avg_pool2(const Tensor& tokens, GridSize grid) {
  if (grid.height % 2 || grid.width % 2 || tokens.rows() != grid.area())
    throw DimensionError("avg_pool2: grid must be even and match token count");
  const std::size_t c = tokens.cols();
  const std::size_t oh = grid.height / 2, ow = grid.width / 2;
  Tensor y({oh * ow, c});
  for (std::size_t y0 = 0; y0 < oh; ++y0) {
    for (std::size_t x0 = 0; x0 < ow; ++x0) {
      double* out = &y[(y0 * ow + x0) * c];
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const double* in = &tokens[((2 * y0 + dy) * grid.width + 2 * x0 + dx) * c];
          for (std::size_t j = 0; j < c; ++j) out[j] += 0.25 * in[j];
        }
    }
  }
  return y;
}

Tensor avg_pool2_backward(const Tensor& dy, GridSize grid) {
  const std::size_t c = dy.cols();
  const std::size_t oh = grid.height / 2, ow = grid.width / 2;
  Tensor dx({grid.area(), c});
  for (std::size_t y0 = 0; y0 < oh; ++y0)
    for (std::size_t x0 = 0; x0 < ow; ++x0) {
      const double* g = &dy[(y0 * ow + x0) * c];
      for (std::size_t ddy = 0; ddy < 2; ++ddy)
        for (std::size_t ddx = 0; ddx < 2; ++ddx) {
          double* out = &dx[((2 * y0 + ddy) * grid.width + 2 * x0 + ddx) * c];
          for (std::size_t j = 0; j < c; ++j) out[j] += 0.25 * g[j];
        }
    }
  return dx;
}

Tensor sinusoidal_positions(GridSize grid, std::size_t channels) {
  if (channels % 4) throw DimensionError("sinusoidal_positions: channels must be /4");
  const std::size_t freqs = channels / 4;
  Tensor p({grid.area(), channels});
  for (std::size_t y = 0; y < grid.height; ++y) {
    for (std::size_t x = 0; x < grid.width; ++x) {
      const double ny = (static_cast<double>(y) + 0.5) / grid.height * 2.0 * std::numbers::pi;
      const double nx = (static_cast<double>(x) + 0.5) / grid.width * 2.0 * std::numbers::pi;
      double* out = &p[(y * grid.width + x) * channels];
      for (std::size_t f = 0; f < freqs; ++f) {
        const double omega = std::pow(10000.0, -static_cast<double>(f) / freqs);
        out[4 * f + 0] = std::sin(ny * omega);
        out[4 * f + 1] = std::cos(ny * omega);
        out[4 * f + 2] = std::sin(nx * omega);
        out[4 * f + 3] = std::cos(nx * omega);
      }
    }
  }
  return p;
}

}  // namespace unidps

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidps/numerics/grid.h"
#include "unidps/numerics/tensor.h"

namespace unidps {

inline constexpr std::uint32_t kVoidId = 0;
inline constexpr std::uint32_t kLabelDivisor = 1000;
inline constexpr double kDefaultMaxDepth = 80.0;

// category * 1000 + instance; stuff segments use instance 0.
constexpr std::uint32_t encode_panoptic_id(std::uint32_t category, std::uint32_t instance) {
  return category * kLabelDivisor + instance;
}
constexpr std::uint32_t category_of(std::uint32_t id) { return id / kLabelDivisor; }

struct SegmentInfo {
  std::uint32_t id = 0;
  std::uint32_t category_id = 0;
  bool is_thing = false;

  friend bool operator==(const SegmentInfo&, const SegmentInfo&) = default;
};

class InvalidPanopticMap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PanopticMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> ids;  // row-major, 0 = void
  std::vector<SegmentInfo> segments;

  PanopticMap() = default;
  PanopticMap(std::size_t h, std::size_t w) : height(h), width(w), ids(h * w, kVoidId) {}

  GridSize grid() const { return {height, width}; }
  std::uint32_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  const SegmentInfo* find(std::uint32_t id) const;
  // Pixel count per entry of `segments`.
  std::vector<std::size_t> areas() const;
  // Throws InvalidPanopticMap when an id is unlisted, listed twice, or the
  // buffer size disagrees with the dimensions.
  void validate() const;
  // Drops listed segments that own no pixel.
  void prune_empty_segments();

  friend bool operator==(const PanopticMap&, const PanopticMap&) = default;
};

struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> depth;       // metres
  std::vector<std::uint8_t> valid;  // 1 = usable

  DepthMap() = default;
  DepthMap(std::size_t h, std::size_t w)
      : height(h), width(w), depth(h * w, 0.0), valid(h * w, 0) {}

  GridSize grid() const { return {height, width}; }
  std::size_t valid_count() const;
  bool all_valid() const { return valid_count() == valid.size(); }

  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

enum class AnnotationMode { kFull, kPanopticOnly, kDepthOnly };

std::string to_string(AnnotationMode mode);
AnnotationMode annotation_mode_from_string(const std::string& s);

struct Scene {
  Tensor image;  // [3, H, W] in [0, 1]
  PanopticMap panoptic;
  DepthMap depth;
  AnnotationMode mode = AnnotationMode::kFull;

  std::size_t height() const { return panoptic.height; }
  std::size_t width() const { return panoptic.width; }
  bool has_panoptic() const { return mode != AnnotationMode::kDepthOnly; }
  bool has_depth() const { return mode != AnnotationMode::kPanopticOnly; }

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Per-category metadata shared by generation and evaluation.
struct CategoryTable {
  int num_stuff = 4;
  int num_thing = 4;

  int num_categories() const { return num_stuff + num_thing; }
  // Categories 1..num_stuff are stuff, the rest are things.
  bool is_thing(std::uint32_t category) const {
    return static_cast<int>(category) > num_stuff;
  }
};

}  // namespace unidps

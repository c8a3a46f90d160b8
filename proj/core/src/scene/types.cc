#include "unidps/scene/types.h"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace unidps {

const SegmentInfo* PanopticMap::find(std::uint32_t id) const {
  for (const auto& s : segments)
    if (s.id == id) return &s;
  return nullptr;
}

std::vector<std::size_t> PanopticMap::areas() const {
  std::unordered_map<std::uint32_t, std::size_t> index;
  for (std::size_t i = 0; i < segments.size(); ++i) index[segments[i].id] = i;
  std::vector<std::size_t> out(segments.size(), 0);
  for (std::uint32_t id : ids) {
    if (id == kVoidId) continue;
    auto it = index.find(id);
    if (it != index.end()) ++out[it->second];
  }
  return out;
}

void PanopticMap::validate() const {
  if (ids.size() != height * width) {
    throw InvalidPanopticMap("panoptic: buffer has " + std::to_string(ids.size()) +
                             " pixels, expected " + std::to_string(height * width));
  }
  std::unordered_set<std::uint32_t> listed;
  for (const auto& s : segments) {
    if (s.id == kVoidId) throw InvalidPanopticMap("panoptic: segment with void id");
    if (!listed.insert(s.id).second) {
      throw InvalidPanopticMap("panoptic: segment id " + std::to_string(s.id) +
                               " listed twice");
    }
  }
  for (std::uint32_t id : ids) {
    if (id != kVoidId && !listed.count(id)) {
      throw InvalidPanopticMap("panoptic: id " + std::to_string(id) +
                               " present in map but absent from segments");
    }
  }
}

void PanopticMap::prune_empty_segments() {
  const auto a = areas();
  std::vector<SegmentInfo> kept;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (a[i] > 0) kept.push_back(segments[i]);
  segments = std::move(kept);
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

std::string to_string(AnnotationMode mode) {
  switch (mode) {
    case AnnotationMode::kFull:
      return "full";
    case AnnotationMode::kPanopticOnly:
      return "panoptic_only";
    case AnnotationMode::kDepthOnly:
      return "depth_only";
  }
  return "full";
}

AnnotationMode annotation_mode_from_string(const std::string& s) {
  if (s == "full") return AnnotationMode::kFull;
  if (s == "panoptic_only") return AnnotationMode::kPanopticOnly;
  if (s == "depth_only") return AnnotationMode::kDepthOnly;
  throw std::invalid_argument("annotation_mode: unknown value '" + s + "'");
}

}  // namespace unidps

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unidps/scene/types.h"

// On-disk interchange format. A scene directory holds
//   image.ppm     P6, 8-bit RGB
//   panoptic.png  16-bit grayscale, category * 1000 + instance, 0 = void
//   depth.png     16-bit grayscale, metres * 256, 0 = invalid
//   meta.json     {"segments": [{id, category_id, is_thing}], "annotation_mode"}
// A dataset directory holds scene directories plus manifest.json
//   {"scenes": [names...], "config": {...}, "seed": n}.
namespace unidps {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDepthScale = 256.0;

// metres -> stored 16-bit value (0 for invalid pixels).
std::uint16_t encode_depth(double metres);
double decode_depth(std::uint16_t stored);

struct Gray16 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> pixels;
};

void write_png16(const std::filesystem::path& path, const Gray16& img);
Gray16 read_png16(const std::filesystem::path& path);

// Image tensor [3, H, W] in [0, 1] <-> binary PPM.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

void write_panoptic(const std::filesystem::path& dir, const PanopticMap& pan,
                    AnnotationMode mode);
PanopticMap read_panoptic(const std::filesystem::path& dir, AnnotationMode* mode = nullptr);
void write_depth(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth(const std::filesystem::path& path);

void write_scene(const Scene& scene, const std::filesystem::path& dir);
Scene read_scene(const std::filesystem::path& dir);

struct DatasetManifest {
  std::vector<std::string> scenes;
  nlohmann::json config;
  std::uint64_t seed = 0;
};

void write_manifest(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

std::string scene_name(std::size_t index);

// JSON file helpers; read_json throws ParseError on missing or malformed files.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace unidps

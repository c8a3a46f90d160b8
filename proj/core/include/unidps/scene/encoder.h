#pragma once

#include <array>

#include "unidps/numerics/grid.h"
#include "unidps/numerics/layers.h"
#include "unidps/scene/types.h"

namespace unidps {

inline constexpr std::size_t kPatchSize = 8;
inline constexpr std::size_t kNumLevels = 3;
// Level 0 is 1/8, level 1 is 1/16, level 2 is 1/32.
inline constexpr std::array<std::size_t, kNumLevels> kLevelStrides{8, 16, 32};
inline constexpr std::size_t kEmbeddingStride = 4;

struct FeatureMap {
  GridSize grid;
  Tensor tokens;  // [h*w, C]

  std::size_t channels() const { return tokens.cols(); }
  // (C, h, w) as in channel-first notation.
  Shape chw() const { return {channels(), grid.height, grid.width}; }
};

struct FeaturePyramid {
  std::array<FeatureMap, kNumLevels> levels;
  FeatureMap embedding;  // 1/4 resolution
};

struct EncoderConfig {
  std::size_t channels = 64;
  std::size_t pixel_embed_channels = 32;
  std::size_t depth_embed_channels = 32;
};

// Stand-in for backbone + pixel decoders: an 8x8 patch embedding produces a
// 1/8 base grid; mean pooling yields 1/16 and 1/32; each path (semantic,
// depth) has its own linear projection per level; a 2x bilinear upsample of
// the base grid followed by a linear map gives the 1/4 embeddings.
struct EncoderParams {
  Linear patch;
  std::array<Linear, kNumLevels> semantic;
  std::array<Linear, kNumLevels> depth;
  Linear pixel_embed;
  Linear depth_embed;
};

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng);
void visit_params(EncoderParams& p, const std::string& prefix, const ParamVisitor& f);

struct EncoderCache {
  GridSize image_grid;
  Tensor patches;  // [P8, 3*8*8]
  std::array<Tensor, kNumLevels> pooled;  // base grid and its pooled versions
  std::array<GridSize, kNumLevels> level_grids;
  Tensor upsampled;  // base grid at 1/4
};

struct EncodedFeatures {
  FeaturePyramid semantic;  // F and E_pixel
  FeaturePyramid depth;     // F_d and E_depth
};

struct EncodedFeatureGrads {
  std::array<Tensor, kNumLevels> semantic;
  std::array<Tensor, kNumLevels> depth;
  Tensor pixel_embedding;
  Tensor depth_embedding;
};

// Throws DimensionError unless H and W are multiples of 32.
EncodedFeatures encode_features(const Tensor& image, const EncoderParams& params,
                                EncoderCache* cache = nullptr);
inline EncodedFeatures encode_features(const Scene& scene, const EncoderParams& params) {
  return encode_features(scene.image, params);
}

// Missing (empty) entries in `grads` are treated as zero.
void encode_features_backward(const EncoderParams& params, const EncoderCache& cache,
                              const EncodedFeatureGrads& grads, EncoderParams& param_grads);

}  // namespace unidps

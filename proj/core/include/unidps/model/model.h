#pragma once

#include <cstdint>

#include "unidps/geometry/geometry.h"
#include "unidps/scene/encoder.h"
#include "unidps/segmentation/decoder.h"
#include "unidps/segmentation/postprocess.h"

namespace unidps {

struct ModelConfig {
  std::size_t channels = 64;
  std::size_t pixel_embed_channels = 32;  // C_e
  std::size_t depth_embed_channels = 32;  // C_d
  std::size_t num_queries = 20;           // N
  std::size_t num_latents = 32;           // M
  std::size_t num_layers = 9;
  std::size_t ffn_hidden = 128;
  std::size_t num_classes = 8;
  double max_depth = kDefaultMaxDepth;
  bool enable_enhancement = true;
  bool enable_backup = true;
  bool enable_instance_depth = true;  // false: depth comes from the backup map alone

  EncoderConfig encoder() const;
  DecoderConfig decoder() const;
  GeometryConfig geometry() const;
  // Throws ConfigError on inconsistent sizes.
  void validate() const;
};

struct ModelParams {
  EncoderParams encoder;
  SegmentationParams segmentation;
  GeometryParams geometry;
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);
void visit_params(ModelParams& p, const ParamVisitor& f);
// Same structure, all zeros.
ModelParams zeros_like(const ModelParams& p);
std::size_t parameter_count(const ModelParams& p);

struct ModelCache {
  EncoderCache encoder;
  SegmentationCache segmentation;
  EnhancementCache enhancement;
  BackupCache backup;
  DepthPredictionCache depth;
};

struct ModelOutput {
  EncodedFeatures features;
  SegmentationOutput segmentation;
  QuerySet enhanced;  // X_d (equals X_o when enhancement is off)
  LatentState latent;
  BackupQuery backup;  // empty when the backup query is off
  DepthPrediction depth;
};

ModelOutput forward_model(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                          bool with_aux = false, ModelCache* cache = nullptr);

struct Prediction {
  PanopticResult panoptic;
  DepthMap depth;
};

// Forward pass, panoptic post-processing and depth aggregation.
Prediction predict(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                   const CategoryTable& categories, const PostprocessConfig& post = {});

}  // namespace unidps

#pragma once

#include <optional>
#include <vector>

#include "unidps/numerics/layers.h"
#include "unidps/scene/encoder.h"

namespace unidps {

struct DecoderConfig {
  std::size_t channels = 64;
  std::size_t num_queries = 20;
  std::size_t num_classes = 8;  // real categories; the no-object class is appended
  std::size_t num_layers = 9;
  std::size_t ffn_hidden = 128;
  std::size_t mask_embed_channels = 32;
  std::size_t mask_head_layers = 3;
  std::size_t class_head_layers = 1;
};

struct QuerySet {
  Tensor queries;  // [N, C]

  std::size_t size() const { return queries.rows(); }
};

struct SegPrediction {
  GridSize grid;        // 1/4 resolution
  Tensor class_logits;  // [N, K+1]
  Tensor class_probs;   // softmax(class_logits)
  Tensor mask_logits;   // [N, h4, w4]
};

struct DecoderLayerParams {
  LayerNorm ln_cross;
  Attention cross;
  LayerNorm ln_self;
  Attention self;
  LayerNorm ln_ffn;
  Mlp ffn;
};

struct SegmentationParams {
  Tensor query_init;  // [N, C]
  std::vector<DecoderLayerParams> layers;
  LayerNorm ln_out;
  Mlp class_head;
  Mlp mask_head;
};

SegmentationParams init_segmentation(const DecoderConfig& config, Rng& rng);
void visit_params(DecoderLayerParams& p, const std::string& prefix, const ParamVisitor& f);
void visit_params(SegmentationParams& p, const std::string& prefix, const ParamVisitor& f);

// Pyramid level read by decoder layer `layer`: coarse to fine, repeating
// (1/32, 1/16, 1/8, 1/32, ...).
constexpr std::size_t level_for_layer(std::size_t layer) { return kNumLevels - 1 - layer % kNumLevels; }

// Per-query key mask at `level_grid`: a key is allowed when the query's mask
// probability at the nearest 1/4 pixel exceeds 0.5.
AttentionMask mask_from_logits(const Tensor& mask_logits, GridSize embed_grid,
                               GridSize level_grid);

struct DecoderLayerCache {
  LayerNormCache ln_cross, ln_self, ln_ffn;
  AttentionCache cross, self;
  MlpCache ffn;
};

// Pre-norm residual sublayers: masked cross-attention to the level features
// (keys carry a fixed sinusoidal position code), self-attention over the
// queries, then the FFN.
QuerySet decoder_layer(const QuerySet& q, const FeatureMap& level_features,
                       const AttentionMask* mask, const DecoderLayerParams& params,
                       DecoderLayerCache* cache = nullptr);
// Convenience form that derives the mask from the previous layer's logits
// (no mask when prev_mask_logits is empty).
QuerySet decoder_layer(const QuerySet& q, const FeatureMap& level_features,
                       const Tensor& prev_mask_logits, GridSize embed_grid,
                       const DecoderLayerParams& params);

struct HeadCache {
  LayerNormCache ln_out;
  Tensor normed;
  MlpCache class_head, mask_head;
  Tensor mask_embed;  // [N, C_e]
};

SegPrediction predict_heads(const QuerySet& q, const FeatureMap& pixel_embedding,
                            const SegmentationParams& params, HeadCache* cache = nullptr);

struct SegmentationCache {
  std::vector<Tensor> layer_inputs;  // queries entering each layer
  std::vector<DecoderLayerCache> layers;
  std::vector<HeadCache> heads;
  std::vector<std::optional<AttentionMask>> masks;
};

struct SegmentationOutput {
  QuerySet final_queries;  // X_o after the last layer (residual stream)
  SegPrediction prediction;
  std::vector<SegPrediction> aux;  // one per layer, last equals `prediction`
};

SegmentationOutput forward_segmentation(const FeaturePyramid& pyramid,
                                        const SegmentationParams& params,
                                        bool with_aux = true,
                                        SegmentationCache* cache = nullptr);

struct SegmentationBackwardResult {
  std::array<Tensor, kNumLevels> levels;  // dL/dF per level
  Tensor pixel_embedding;                 // dL/dE_pixel
};

// dclass_logits / dmask_logits hold one entry per layer (empty = zero);
// dfinal_queries is the gradient arriving at X_o from the depth branch.
SegmentationBackwardResult segmentation_backward(
    const FeaturePyramid& pyramid, const SegmentationParams& params,
    const SegmentationCache& cache, const std::vector<Tensor>& dclass_logits,
    const std::vector<Tensor>& dmask_logits, const Tensor& dfinal_queries,
    SegmentationParams& grads);

}  // namespace unidps

#pragma once

#include <array>

#include "unidps/numerics/layers.h"
#include "unidps/scene/encoder.h"
#include "unidps/segmentation/decoder.h"
#include "unidps/segmentation/postprocess.h"

namespace unidps {

struct GeometryConfig {
  std::size_t channels = 64;
  std::size_t num_latents = 32;
  std::size_t depth_embed_channels = 32;
  std::size_t depth_head_layers = 3;
  std::size_t ffn_hidden = 128;
  double max_depth = kDefaultMaxDepth;
};

// Latent tokens R^l that mediate between depth features and queries.
struct LatentState {
  Tensor latent;  // [M, C]

  std::size_t size() const { return latent.rows(); }
};

struct BackupQuery {
  Tensor query;  // [1, C]
};

struct DepthPrediction {
  GridSize grid;             // 1/4 resolution
  Tensor per_segment_depth;  // [N, h4, w4], metres
  Tensor backup_depth;       // [h4, w4], metres (empty when disabled)
};

struct EnhancementBlockParams {
  LayerNorm ln_latent_cross;
  Attention latent_cross;
  LayerNorm ln_latent_self;
  Attention latent_self;
  LayerNorm ln_query_cross;
  Attention query_cross;
};

struct GeometryParams {
  Tensor latent_init;  // R^0, [M, C]
  std::array<EnhancementBlockParams, kNumLevels> blocks;
  LayerNorm ln_depth;
  Mlp depth_head;  // psi: C -> C_d
  Tensor backup_init;  // [1, C]
  std::array<LayerNorm, kNumLevels> ln_backup;
  std::array<Attention, kNumLevels> backup_cross;
  LayerNorm ln_backup_ffn;
  Mlp backup_ffn;
};

GeometryParams init_geometry(const GeometryConfig& config, Rng& rng);
void visit_params(GeometryParams& p, const std::string& prefix, const ParamVisitor& f);

// Single mask shared by all latent tokens: a depth-feature key is allowed
// when at least one query's mask probability exceeds 0.5 at the nearest 1/4
// pixel. Empty unions fall back to attending everywhere.
AttentionMask union_mask(const Tensor& mask_logits, GridSize embed_grid, GridSize level_grid,
                         std::size_t num_latents);

struct EnhancementBlockCache {
  AttentionMask mask;
  LayerNormCache ln_latent_cross, ln_latent_self, ln_query_cross;
  AttentionCache latent_cross, latent_self, query_cross;
};

struct EnhancementCache {
  std::array<EnhancementBlockCache, kNumLevels> blocks;
};

struct EnhancementResult {
  QuerySet enhanced;  // X_d
  LatentState latent;
};

// Three blocks, one per depth level from 1/32 to 1/8. Each block lets the
// latent cross-attend to the masked depth features, self-attend, and then
// lets the query stream cross-attend to the latent. X_o is only read.
EnhancementResult enhance_queries(const QuerySet& x_o, const LatentState& latent,
                                  const FeaturePyramid& depth_pyramid, const Tensor& mask_logits,
                                  const GeometryParams& params, EnhancementCache* cache = nullptr);

struct BackupCache {
  std::array<LayerNormCache, kNumLevels> ln;
  std::array<AttentionCache, kNumLevels> cross;
  LayerNormCache ln_ffn;
  MlpCache ffn;
};

// Unmasked cross-attention of the backup query to every depth level, then an
// FFN sublayer.
BackupQuery update_backup_query(const BackupQuery& init, const FeaturePyramid& depth_pyramid,
                                const GeometryParams& params, BackupCache* cache = nullptr);

struct DepthHeadCache {
  LayerNormCache ln;
  MlpCache head;
  Tensor embed;  // psi output [rows, C_d]
  Tensor depth;  // [rows, P4]
};

// d = D_max * sigmoid(psi(LN(x)) . E_depth), row by row.
Tensor depth_head(const Tensor& queries, const FeatureMap& depth_embedding,
                  const GeometryParams& params, double max_depth, DepthHeadCache* cache = nullptr);

struct DepthPredictionCache {
  DepthHeadCache segments;
  DepthHeadCache backup;
};

// Per-segment depth maps from X_d and the backup map from the updated backup
// query (backup may be null, leaving backup_depth empty).
DepthPrediction predict_segment_depths(const QuerySet& x_d, const BackupQuery* backup,
                                       const FeatureMap& depth_embedding,
                                       const GeometryParams& params, double max_depth,
                                       DepthPredictionCache* cache = nullptr);

// Every pixel owned by a kept query takes that query's depth; unowned pixels
// take the backup depth. Both are bilinearly upsampled to full resolution.
// Without a backup map unowned pixels are marked invalid.
DepthMap aggregate_depth(const Tensor& per_segment_depth, const Tensor& backup_depth,
                         GridSize embed_grid, const PanopticResult& panres);

// ---- backward ----

// Given dL/dd on the depth head output rows, returns dL/dqueries and adds
// dL/dE_depth into dembedding.
Tensor depth_head_backward(const GeometryParams& params, const FeatureMap& depth_embedding,
                           const DepthHeadCache& cache, const Tensor& ddepth, double max_depth,
                           Tensor& dembedding, GeometryParams& grads);

struct EnhancementBackwardResult {
  Tensor x_o;  // dL/dX_o
  std::array<Tensor, kNumLevels> depth_levels;
};

EnhancementBackwardResult enhance_queries_backward(const FeaturePyramid& depth_pyramid,
                                                   const GeometryParams& params,
                                                   const EnhancementCache& cache,
                                                   const Tensor& dx_d, GeometryParams& grads);

// Adds dL/dF_d into depth_levels.
void update_backup_query_backward(const GeometryParams& params, const BackupCache& cache,
                                  const Tensor& dbackup,
                                  std::array<Tensor, kNumLevels>& depth_levels,
                                  GeometryParams& grads);

}  // namespace unidps

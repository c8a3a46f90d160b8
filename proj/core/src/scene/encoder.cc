#include "unidps/scene/encoder.h"

namespace unidps {

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng) {
  EncoderParams p;
  const std::size_t c = config.channels;
  p.patch = make_linear(3 * kPatchSize * kPatchSize, c, rng);
  for (std::size_t l = 0; l < kNumLevels; ++l) p.semantic[l] = make_linear(c, c, rng);
  for (std::size_t l = 0; l < kNumLevels; ++l) p.depth[l] = make_linear(c, c, rng);
  p.pixel_embed = make_linear(c, config.pixel_embed_channels, rng);
  p.depth_embed = make_linear(c, config.depth_embed_channels, rng);
  return p;
}

void visit_params(EncoderParams& p, const std::string& prefix, const ParamVisitor& f) {
  visit_params(p.patch, prefix + ".patch", f);
  for (std::size_t l = 0; l < kNumLevels; ++l)
    visit_params(p.semantic[l], prefix + ".semantic" + std::to_string(l), f);
  for (std::size_t l = 0; l < kNumLevels; ++l)
    visit_params(p.depth[l], prefix + ".depth" + std::to_string(l), f);
  visit_params(p.pixel_embed, prefix + ".pixel_embed", f);
  visit_params(p.depth_embed, prefix + ".depth_embed", f);
}

namespace {

Tensor extract_patches(const Tensor& image, GridSize grid) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t dim = 3 * kPatchSize * kPatchSize;
  Tensor patches({grid.area(), dim});
  for (std::size_t py = 0; py < grid.height; ++py)
    for (std::size_t px = 0; px < grid.width; ++px) {
      double* out = &patches[(py * grid.width + px) * dim];
      std::size_t k = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < kPatchSize; ++dy)
          for (std::size_t dx = 0; dx < kPatchSize; ++dx)
            out[k++] = image[(c * h + py * kPatchSize + dy) * w + px * kPatchSize + dx];
    }
  return patches;
}

}  // namespace

EncodedFeatures encode_features(const Tensor& image, const EncoderParams& params,
                                EncoderCache* cache) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("encode_features: image must be [3, H, W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h == 0 || w == 0 || h % 32 || w % 32)
    throw DimensionError("encode_features: H and W must be multiples of 32, got " +
                         std::to_string(h) + "x" + std::to_string(w));

  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.image_grid = {h, w};
  for (std::size_t l = 0; l < kNumLevels; ++l)
    c.level_grids[l] = {h / kLevelStrides[l], w / kLevelStrides[l]};
  c.patches = extract_patches(image, c.level_grids[0]);
  c.pooled[0] = linear_forward(params.patch, c.patches);
  for (std::size_t l = 1; l < kNumLevels; ++l)
    c.pooled[l] = avg_pool2(c.pooled[l - 1], c.level_grids[l - 1]);
  const GridSize embed_grid{h / kEmbeddingStride, w / kEmbeddingStride};
  c.upsampled = BilinearPlan(c.level_grids[0], embed_grid).apply_tokens(c.pooled[0]);

  EncodedFeatures out;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    out.semantic.levels[l] = {c.level_grids[l], linear_forward(params.semantic[l], c.pooled[l])};
    out.depth.levels[l] = {c.level_grids[l], linear_forward(params.depth[l], c.pooled[l])};
  }
  out.semantic.embedding = {embed_grid, linear_forward(params.pixel_embed, c.upsampled)};
  out.depth.embedding = {embed_grid, linear_forward(params.depth_embed, c.upsampled)};
  return out;
}

void encode_features_backward(const EncoderParams& params, const EncoderCache& cache,
                              const EncodedFeatureGrads& grads, EncoderParams& param_grads) {
  std::array<Tensor, kNumLevels> dpooled;
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    dpooled[l] = zeros_like(cache.pooled[l]);
    if (!grads.semantic[l].empty())
      dpooled[l] += linear_backward(params.semantic[l], cache.pooled[l], grads.semantic[l],
                                    param_grads.semantic[l]);
    if (!grads.depth[l].empty())
      dpooled[l] += linear_backward(params.depth[l], cache.pooled[l], grads.depth[l],
                                    param_grads.depth[l]);
  }
  Tensor dup = zeros_like(cache.upsampled);
  if (!grads.pixel_embedding.empty())
    dup += linear_backward(params.pixel_embed, cache.upsampled, grads.pixel_embedding,
                           param_grads.pixel_embed);
  if (!grads.depth_embedding.empty())
    dup += linear_backward(params.depth_embed, cache.upsampled, grads.depth_embedding,
                           param_grads.depth_embed);
  for (std::size_t l = kNumLevels - 1; l > 0; --l)
    dpooled[l - 1] += avg_pool2_backward(dpooled[l], cache.level_grids[l - 1]);
  const GridSize embed_grid{cache.image_grid.height / kEmbeddingStride,
                            cache.image_grid.width / kEmbeddingStride};
  dpooled[0] += BilinearPlan(cache.level_grids[0], embed_grid).transpose_tokens(dup);
  linear_backward(params.patch, cache.patches, dpooled[0], param_grads.patch);
}

}  // namespace unidps

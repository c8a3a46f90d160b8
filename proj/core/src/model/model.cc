#include "unidps/model/model.h"

#include "unidps/scene/generator.h"

namespace unidps {

EncoderConfig ModelConfig::encoder() const {
  return {channels, pixel_embed_channels, depth_embed_channels};
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  d.channels = channels;
  d.num_queries = num_queries;
  d.num_classes = num_classes;
  d.num_layers = num_layers;
  d.ffn_hidden = ffn_hidden;
  d.mask_embed_channels = pixel_embed_channels;
  return d;
}

GeometryConfig ModelConfig::geometry() const {
  GeometryConfig g;
  g.channels = channels;
  g.num_latents = num_latents;
  g.depth_embed_channels = depth_embed_channels;
  g.ffn_hidden = ffn_hidden;
  g.max_depth = max_depth;
  return g;
}

void ModelConfig::validate() const {
  if (channels == 0 || channels % 4 != 0)
    throw ConfigError("model channels must be a positive multiple of 4");
  if (pixel_embed_channels == 0 || depth_embed_channels == 0)
    throw ConfigError("embedding widths must be positive");
  if (num_queries == 0) throw ConfigError("num_queries must be positive");
  if (num_latents == 0) throw ConfigError("num_latents must be positive");
  if (num_layers == 0) throw ConfigError("num_layers must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (!(max_depth > 0.0)) throw ConfigError("max_depth must be positive");
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  p.encoder = init_encoder(config.encoder(), rng);
  p.segmentation = init_segmentation(config.decoder(), rng);
  p.geometry = init_geometry(config.geometry(), rng);
  return p;
}

void visit_params(ModelParams& p, const ParamVisitor& f) {
  visit_params(p.encoder, "encoder", f);
  visit_params(p.segmentation, "segmentation", f);
  visit_params(p.geometry, "geometry", f);
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  visit_params(z, [](const std::string&, Tensor& t) { t.fill(0.0); });
  return z;
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  ModelParams copy = p;
  visit_params(copy, [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

ModelOutput forward_model(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                          bool with_aux, ModelCache* cache) {
  ModelOutput out;
  out.features = encode_features(image, params.encoder, cache ? &cache->encoder : nullptr);
  out.segmentation = forward_segmentation(out.features.semantic, params.segmentation, with_aux,
                                          cache ? &cache->segmentation : nullptr);
  const FeaturePyramid& dpyr = out.features.depth;
  if (config.enable_enhancement) {
    EnhancementResult e =
        enhance_queries(out.segmentation.final_queries, LatentState{params.geometry.latent_init},
                        dpyr, out.segmentation.prediction.mask_logits, params.geometry,
                        cache ? &cache->enhancement : nullptr);
    out.enhanced = std::move(e.enhanced);
    out.latent = std::move(e.latent);
  } else {
    out.enhanced = out.segmentation.final_queries;
  }
  if (config.enable_backup)
    out.backup = update_backup_query(BackupQuery{params.geometry.backup_init}, dpyr,
                                     params.geometry, cache ? &cache->backup : nullptr);
  out.depth = predict_segment_depths(out.enhanced, config.enable_backup ? &out.backup : nullptr,
                                     dpyr.embedding, params.geometry, config.max_depth,
                                     cache ? &cache->depth : nullptr);
  return out;
}

Prediction predict(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                   const CategoryTable& categories, const PostprocessConfig& post) {
  const ModelOutput out = forward_model(image, params, config);
  const GridSize full{image.dim(1), image.dim(2)};
  Prediction p;
  p.panoptic = panoptic_postprocess(out.segmentation.prediction, full, categories, post);
  if (config.enable_instance_depth) {
    p.depth = aggregate_depth(out.depth.per_segment_depth, out.depth.backup_depth,
                              out.depth.grid, p.panoptic);
  } else {
    PanopticResult unowned = p.panoptic;
    unowned.owner.assign(unowned.owner.size(), -1);
    p.depth = aggregate_depth(out.depth.per_segment_depth, out.depth.backup_depth, out.depth.grid,
                              unowned);
  }
  return p;
}

}  // namespace unidps

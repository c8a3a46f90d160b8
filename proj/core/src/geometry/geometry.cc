#include "unidps/geometry/geometry.h"

#include <limits>

#include "unidps/numerics/trace.h"

namespace unidps {

namespace {

Tensor normal_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Enhancement block b reads pyramid level kNumLevels - 1 - b (1/32 first).
constexpr std::size_t level_for_block(std::size_t block) { return kNumLevels - 1 - block; }

Tensor keys_with_positions(const FeatureMap& f) {
  return f.tokens + sinusoidal_positions(f.grid, f.channels());
}

Tensor sum_inputs(const AttentionInputGrads& g) {
  Tensor d = g.q_in;
  d += g.k_in;
  d += g.v_in;
  return d;
}

}  // namespace

GeometryParams init_geometry(const GeometryConfig& config, Rng& rng) {
  const std::size_t c = config.channels;
  GeometryParams p;
  p.latent_init = normal_tensor({config.num_latents, c}, rng);
  for (auto& b : p.blocks) {
    b.ln_latent_cross = make_layer_norm(c);
    b.latent_cross = make_attention(c, rng);
    b.ln_latent_self = make_layer_norm(c);
    b.latent_self = make_attention(c, rng);
    b.ln_query_cross = make_layer_norm(c);
    b.query_cross = make_attention(c, rng);
  }
  p.ln_depth = make_layer_norm(c);
  std::vector<std::size_t> widths(config.depth_head_layers, c);
  widths.push_back(config.depth_embed_channels);
  p.depth_head = make_mlp(widths, rng);
  p.backup_init = normal_tensor({1, c}, rng);
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    p.ln_backup[l] = make_layer_norm(c);
    p.backup_cross[l] = make_attention(c, rng);
  }
  p.ln_backup_ffn = make_layer_norm(c);
  p.backup_ffn = make_mlp({c, config.ffn_hidden, c}, rng);
  return p;
}

void visit_params(GeometryParams& p, const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".latent_init", p.latent_init);
  for (std::size_t b = 0; b < kNumLevels; ++b) {
    const std::string s = prefix + ".block" + std::to_string(b);
    auto& blk = p.blocks[b];
    visit_params(blk.ln_latent_cross, s + ".ln_latent_cross", f);
    visit_params(blk.latent_cross, s + ".latent_cross", f);
    visit_params(blk.ln_latent_self, s + ".ln_latent_self", f);
    visit_params(blk.latent_self, s + ".latent_self", f);
    visit_params(blk.ln_query_cross, s + ".ln_query_cross", f);
    visit_params(blk.query_cross, s + ".query_cross", f);
  }
  visit_params(p.ln_depth, prefix + ".ln_depth", f);
  visit_params(p.depth_head, prefix + ".depth_head", f);
  f(prefix + ".backup_init", p.backup_init);
  for (std::size_t l = 0; l < kNumLevels; ++l) {
    visit_params(p.ln_backup[l], prefix + ".ln_backup" + std::to_string(l), f);
    visit_params(p.backup_cross[l], prefix + ".backup_cross" + std::to_string(l), f);
  }
  visit_params(p.ln_backup_ffn, prefix + ".ln_backup_ffn", f);
  visit_params(p.backup_ffn, prefix + ".backup_ffn", f);
}

AttentionMask union_mask(const Tensor& mask_logits, GridSize embed_grid, GridSize level_grid,
                         std::size_t num_latents) {
  AttentionMask mask(num_latents, level_grid.area(), true);
  if (mask_logits.empty()) return mask;
  const std::size_t n = mask_logits.size() / embed_grid.area();
  const std::size_t fy = embed_grid.height / level_grid.height;
  const std::size_t fx = embed_grid.width / level_grid.width;
  std::vector<std::uint8_t> keep(level_grid.area(), 0);
  for (std::size_t y = 0; y < level_grid.height; ++y)
    for (std::size_t x = 0; x < level_grid.width; ++x) {
      const std::size_t src = cell_center(y, fy) * embed_grid.width + cell_center(x, fx);
      for (std::size_t q = 0; q < n && !keep[y * level_grid.width + x]; ++q)
        if (mask_logits[q * embed_grid.area() + src] > 0.0) keep[y * level_grid.width + x] = 1;
    }
  if (trace::Recorder* rec = trace::active())
    for (auto k : keep) rec->add(k);
  for (std::size_t m = 0; m < num_latents; ++m)
    for (std::size_t k = 0; k < keep.size(); ++k) mask.set(m, k, keep[k] != 0);
  return mask;
}

EnhancementResult enhance_queries(const QuerySet& x_o, const LatentState& latent,
                                  const FeaturePyramid& depth_pyramid, const Tensor& mask_logits,
                                  const GeometryParams& params, EnhancementCache* cache) {
  if (x_o.queries.cols() != latent.latent.cols() ||
      latent.latent.cols() != depth_pyramid.levels[0].channels())
    throw DimensionError("enhance_queries: channel mismatch between queries, latent and features");
  Tensor x = x_o.queries;
  Tensor r = latent.latent;
  for (std::size_t b = 0; b < kNumLevels; ++b) {
    const auto& blk = params.blocks[b];
    EnhancementBlockCache* c = cache ? &cache->blocks[b] : nullptr;
    const FeatureMap& level = depth_pyramid.levels[level_for_block(b)];
    AttentionMask mask = union_mask(mask_logits, depth_pyramid.embedding.grid, level.grid, r.rows());
    const Tensor keys = keys_with_positions(level);

    Tensor n1 = layer_norm_forward(blk.ln_latent_cross, r, c ? &c->ln_latent_cross : nullptr);
    r += attention_forward(blk.latent_cross, n1, keys, level.tokens, &mask,
                           c ? &c->latent_cross : nullptr);
    Tensor n2 = layer_norm_forward(blk.ln_latent_self, r, c ? &c->ln_latent_self : nullptr);
    r += attention_forward(blk.latent_self, n2, n2, n2, nullptr, c ? &c->latent_self : nullptr);
    Tensor n3 = layer_norm_forward(blk.ln_query_cross, x, c ? &c->ln_query_cross : nullptr);
    x += attention_forward(blk.query_cross, n3, r, r, nullptr, c ? &c->query_cross : nullptr);
    if (c) c->mask = std::move(mask);
  }
  return {QuerySet{std::move(x)}, LatentState{std::move(r)}};
}

BackupQuery update_backup_query(const BackupQuery& init, const FeaturePyramid& depth_pyramid,
                                const GeometryParams& params, BackupCache* cache) {
  Tensor b = init.query;
  for (std::size_t i = 0; i < kNumLevels; ++i) {
    const std::size_t l = level_for_block(i);
    const FeatureMap& level = depth_pyramid.levels[l];
    Tensor n = layer_norm_forward(params.ln_backup[l], b, cache ? &cache->ln[l] : nullptr);
    b += attention_forward(params.backup_cross[l], n, keys_with_positions(level), level.tokens,
                           nullptr, cache ? &cache->cross[l] : nullptr);
  }
  Tensor n = layer_norm_forward(params.ln_backup_ffn, b, cache ? &cache->ln_ffn : nullptr);
  b += mlp_forward(params.backup_ffn, n, cache ? &cache->ffn : nullptr);
  return BackupQuery{std::move(b)};
}

Tensor depth_head(const Tensor& queries, const FeatureMap& depth_embedding,
                  const GeometryParams& params, double max_depth, DepthHeadCache* cache) {
  DepthHeadCache local;
  DepthHeadCache& c = cache ? *cache : local;
  const Tensor normed = layer_norm_forward(params.ln_depth, queries, &c.ln);
  c.embed = mlp_forward(params.depth_head, normed, &c.head);
  Tensor d = matmul_nt(c.embed, depth_embedding.tokens);
  for (double& v : d.data())
    v = std::max(max_depth * sigmoid(v), std::numeric_limits<double>::min());
  c.depth = d;
  return d;
}

DepthPrediction predict_segment_depths(const QuerySet& x_d, const BackupQuery* backup,
                                       const FeatureMap& depth_embedding,
                                       const GeometryParams& params, double max_depth,
                                       DepthPredictionCache* cache) {
  const GridSize g = depth_embedding.grid;
  DepthPrediction out;
  out.grid = g;
  out.per_segment_depth =
      depth_head(x_d.queries, depth_embedding, params, max_depth, cache ? &cache->segments : nullptr)
          .reshaped({x_d.size(), g.height, g.width});
  if (backup)
    out.backup_depth = depth_head(backup->query, depth_embedding, params, max_depth,
                                  cache ? &cache->backup : nullptr)
                           .reshaped({g.height, g.width});
  return out;
}

DepthMap aggregate_depth(const Tensor& per_segment_depth, const Tensor& backup_depth,
                         GridSize embed_grid, const PanopticResult& panres) {
  const GridSize full = panres.panoptic.grid();
  DepthMap out(full.height, full.width);
  const BilinearPlan plan(embed_grid, full);
  const std::size_t area4 = embed_grid.area();
  for (std::size_t px = 0; px < full.area(); ++px) {
    const int owner = panres.owner[px];
    if (owner >= 0) {
      out.depth[px] = plan.sample(&per_segment_depth[owner * area4], px);
      out.valid[px] = 1;
    } else if (!backup_depth.empty()) {
      out.depth[px] = plan.sample(backup_depth.data().data(), px);
      out.valid[px] = 1;
    }
  }
  return out;
}

Tensor depth_head_backward(const GeometryParams& params, const FeatureMap& depth_embedding,
                           const DepthHeadCache& cache, const Tensor& ddepth, double max_depth,
                           Tensor& dembedding, GeometryParams& grads) {
  const Tensor dd = ddepth.reshaped(cache.depth.shape());
  Tensor dz = dd;
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const double d = cache.depth[i];
    dz[i] *= d * (1.0 - d / max_depth);
  }
  const Tensor dembed = matmul(dz, depth_embedding.tokens);
  accumulate(dembedding, matmul_tn(dz, cache.embed));
  const Tensor dnormed = mlp_backward(params.depth_head, cache.head, dembed, grads.depth_head);
  return layer_norm_backward(params.ln_depth, cache.ln, dnormed, grads.ln_depth);
}

EnhancementBackwardResult enhance_queries_backward(const FeaturePyramid& depth_pyramid,
                                                   const GeometryParams& params,
                                                   const EnhancementCache& cache,
                                                   const Tensor& dx_d, GeometryParams& grads) {
  EnhancementBackwardResult r;
  for (std::size_t l = 0; l < kNumLevels; ++l)
    r.depth_levels[l] = zeros_like(depth_pyramid.levels[l].tokens);
  Tensor dx = dx_d;
  Tensor dr = zeros_like(params.latent_init);
  for (std::size_t b = kNumLevels; b-- > 0;) {
    const auto& blk = params.blocks[b];
    auto& g = grads.blocks[b];
    const EnhancementBlockCache& c = cache.blocks[b];
    {
      const auto ga = attention_backward(blk.query_cross, c.query_cross, dx, g.query_cross);
      dr += ga.k_in;
      dr += ga.v_in;
      dx += layer_norm_backward(blk.ln_query_cross, c.ln_query_cross, ga.q_in, g.ln_query_cross);
    }
    {
      const auto ga = attention_backward(blk.latent_self, c.latent_self, dr, g.latent_self);
      dr += layer_norm_backward(blk.ln_latent_self, c.ln_latent_self, sum_inputs(ga),
                                g.ln_latent_self);
    }
    {
      const auto ga = attention_backward(blk.latent_cross, c.latent_cross, dr, g.latent_cross);
      Tensor& dlevel = r.depth_levels[level_for_block(b)];
      dlevel += ga.k_in;
      dlevel += ga.v_in;
      dr += layer_norm_backward(blk.ln_latent_cross, c.ln_latent_cross, ga.q_in,
                                g.ln_latent_cross);
    }
  }
  grads.latent_init += dr;
  r.x_o = std::move(dx);
  return r;
}

void update_backup_query_backward(const GeometryParams& params, const BackupCache& cache,
                                  const Tensor& dbackup,
                                  std::array<Tensor, kNumLevels>& depth_levels,
                                  GeometryParams& grads) {
  Tensor db = dbackup;
  {
    const Tensor dn = mlp_backward(params.backup_ffn, cache.ffn, db, grads.backup_ffn);
    db += layer_norm_backward(params.ln_backup_ffn, cache.ln_ffn, dn, grads.ln_backup_ffn);
  }
  for (std::size_t i = kNumLevels; i-- > 0;) {
    const std::size_t l = level_for_block(i);
    const auto ga = attention_backward(params.backup_cross[l], cache.cross[l], db,
                                       grads.backup_cross[l]);
    accumulate(depth_levels[l], ga.k_in);
    depth_levels[l] += ga.v_in;
    db += layer_norm_backward(params.ln_backup[l], cache.ln[l], ga.q_in, grads.ln_backup[l]);
  }
  grads.backup_init += db;
}

}  // namespace unidps

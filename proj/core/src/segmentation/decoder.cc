#include "unidps/segmentation/decoder.h"

#include "unidps/numerics/trace.h"

namespace unidps {

SegmentationParams init_segmentation(const DecoderConfig& config, Rng& rng) {
  const std::size_t c = config.channels;
  SegmentationParams p;
  p.query_init = Tensor({config.num_queries, c});
  for (double& v : p.query_init.data()) v = rng.normal();
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    DecoderLayerParams layer;
    layer.ln_cross = make_layer_norm(c);
    layer.cross = make_attention(c, rng);
    layer.ln_self = make_layer_norm(c);
    layer.self = make_attention(c, rng);
    layer.ln_ffn = make_layer_norm(c);
    layer.ffn = make_mlp({c, config.ffn_hidden, c}, rng);
    p.layers.push_back(std::move(layer));
  }
  p.ln_out = make_layer_norm(c);
  std::vector<std::size_t> cls(config.class_head_layers, c);
  cls.push_back(config.num_classes + 1);
  p.class_head = make_mlp(cls, rng);
  std::vector<std::size_t> msk(config.mask_head_layers, c);
  msk.push_back(config.mask_embed_channels);
  p.mask_head = make_mlp(msk, rng);
  return p;
}

void visit_params(DecoderLayerParams& p, const std::string& prefix, const ParamVisitor& f) {
  visit_params(p.ln_cross, prefix + ".ln_cross", f);
  visit_params(p.cross, prefix + ".cross", f);
  visit_params(p.ln_self, prefix + ".ln_self", f);
  visit_params(p.self, prefix + ".self", f);
  visit_params(p.ln_ffn, prefix + ".ln_ffn", f);
  visit_params(p.ffn, prefix + ".ffn", f);
}

void visit_params(SegmentationParams& p, const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".query_init", p.query_init);
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    visit_params(p.layers[l], prefix + ".layer" + std::to_string(l), f);
  visit_params(p.ln_out, prefix + ".ln_out", f);
  visit_params(p.class_head, prefix + ".class_head", f);
  visit_params(p.mask_head, prefix + ".mask_head", f);
}

AttentionMask mask_from_logits(const Tensor& mask_logits, GridSize embed_grid,
                               GridSize level_grid) {
  const std::size_t n = mask_logits.size() / embed_grid.area();
  const std::size_t fy = embed_grid.height / level_grid.height;
  const std::size_t fx = embed_grid.width / level_grid.width;
  AttentionMask mask(n, level_grid.area(), false);
  trace::Recorder* rec = trace::active();
  for (std::size_t q = 0; q < n; ++q) {
    const double* logits = &mask_logits[q * embed_grid.area()];
    for (std::size_t y = 0; y < level_grid.height; ++y)
      for (std::size_t x = 0; x < level_grid.width; ++x) {
        const double v = logits[cell_center(y, fy) * embed_grid.width + cell_center(x, fx)];
        const bool allowed = v > 0.0;
        if (rec) rec->add(allowed);
        mask.set(q, y * level_grid.width + x, allowed);
      }
  }
  return mask;
}

QuerySet decoder_layer(const QuerySet& q, const FeatureMap& level_features,
                       const AttentionMask* mask, const DecoderLayerParams& params,
                       DecoderLayerCache* cache) {
  const Tensor& feats = level_features.tokens;
  const Tensor keys = feats + sinusoidal_positions(level_features.grid, feats.cols());

  Tensor x = q.queries;
  Tensor n1 = layer_norm_forward(params.ln_cross, x, cache ? &cache->ln_cross : nullptr);
  x += attention_forward(params.cross, n1, keys, feats, mask, cache ? &cache->cross : nullptr);

  Tensor n2 = layer_norm_forward(params.ln_self, x, cache ? &cache->ln_self : nullptr);
  x += attention_forward(params.self, n2, n2, n2, nullptr, cache ? &cache->self : nullptr);

  Tensor n3 = layer_norm_forward(params.ln_ffn, x, cache ? &cache->ln_ffn : nullptr);
  x += mlp_forward(params.ffn, n3, cache ? &cache->ffn : nullptr);
  return QuerySet{std::move(x)};
}

QuerySet decoder_layer(const QuerySet& q, const FeatureMap& level_features,
                       const Tensor& prev_mask_logits, GridSize embed_grid,
                       const DecoderLayerParams& params) {
  if (prev_mask_logits.empty()) return decoder_layer(q, level_features, nullptr, params);
  const AttentionMask mask = mask_from_logits(prev_mask_logits, embed_grid, level_features.grid);
  return decoder_layer(q, level_features, &mask, params);
}

SegPrediction predict_heads(const QuerySet& q, const FeatureMap& pixel_embedding,
                            const SegmentationParams& params, HeadCache* cache) {
  HeadCache local;
  HeadCache& c = cache ? *cache : local;
  c.normed = layer_norm_forward(params.ln_out, q.queries, &c.ln_out);
  SegPrediction pred;
  pred.grid = pixel_embedding.grid;
  pred.class_logits = mlp_forward(params.class_head, c.normed, &c.class_head);
  pred.class_probs = softmax(pred.class_logits, -1);
  c.mask_embed = mlp_forward(params.mask_head, c.normed, &c.mask_head);
  pred.mask_logits = matmul_nt(c.mask_embed, pixel_embedding.tokens)
                         .reshaped({q.size(), pred.grid.height, pred.grid.width});
  return pred;
}

SegmentationOutput forward_segmentation(const FeaturePyramid& pyramid,
                                        const SegmentationParams& params, bool with_aux,
                                        SegmentationCache* cache) {
  SegmentationOutput out;
  QuerySet x{params.query_init};
  const std::size_t layers = params.layers.size();
  if (cache) {
    cache->layer_inputs.assign(layers, Tensor());
    cache->layers.assign(layers, DecoderLayerCache());
    cache->heads.assign(layers, HeadCache());
    cache->masks.assign(layers, std::nullopt);
  }
  Tensor prev_logits;
  for (std::size_t l = 0; l < layers; ++l) {
    const FeatureMap& level = pyramid.levels[level_for_layer(l)];
    std::optional<AttentionMask> mask;
    if (!prev_logits.empty())
      mask = mask_from_logits(prev_logits, pyramid.embedding.grid, level.grid);
    if (cache) cache->layer_inputs[l] = x.queries;
    x = decoder_layer(x, level, mask ? &*mask : nullptr, params.layers[l],
                      cache ? &cache->layers[l] : nullptr);
    SegPrediction pred =
        predict_heads(x, pyramid.embedding, params, cache ? &cache->heads[l] : nullptr);
    prev_logits = pred.mask_logits;
    if (cache) cache->masks[l] = std::move(mask);
    if (l + 1 == layers) out.prediction = pred;
    if (with_aux) out.aux.push_back(std::move(pred));
  }
  out.final_queries = std::move(x);
  return out;
}

namespace {

// Returns dL/dx for the layer input; adds dL/dF into dlevel.
Tensor decoder_layer_backward(const DecoderLayerParams& params, const DecoderLayerCache& c,
                              const Tensor& dout, DecoderLayerParams& g, Tensor& dlevel) {
  Tensor dx = dout;
  {
    const Tensor dn3 = mlp_backward(params.ffn, c.ffn, dout, g.ffn);
    dx += layer_norm_backward(params.ln_ffn, c.ln_ffn, dn3, g.ln_ffn);
  }
  {
    const auto ga = attention_backward(params.self, c.self, dx, g.self);
    Tensor dn2 = ga.q_in;
    dn2 += ga.k_in;
    dn2 += ga.v_in;
    dx += layer_norm_backward(params.ln_self, c.ln_self, dn2, g.ln_self);
  }
  {
    const auto ga = attention_backward(params.cross, c.cross, dx, g.cross);
    accumulate(dlevel, ga.k_in);
    dlevel += ga.v_in;
    dx += layer_norm_backward(params.ln_cross, c.ln_cross, ga.q_in, g.ln_cross);
  }
  return dx;
}

}  // namespace

SegmentationBackwardResult segmentation_backward(
    const FeaturePyramid& pyramid, const SegmentationParams& params,
    const SegmentationCache& cache, const std::vector<Tensor>& dclass_logits,
    const std::vector<Tensor>& dmask_logits, const Tensor& dfinal_queries,
    SegmentationParams& grads) {
  SegmentationBackwardResult r;
  for (std::size_t l = 0; l < kNumLevels; ++l) r.levels[l] = zeros_like(pyramid.levels[l].tokens);
  r.pixel_embedding = zeros_like(pyramid.embedding.tokens);

  const std::size_t layers = params.layers.size();
  Tensor dx = dfinal_queries.empty() ? zeros_like(params.query_init) : dfinal_queries;
  for (std::size_t l = layers; l-- > 0;) {
    const HeadCache& hc = cache.heads[l];
    const bool has_cls = l < dclass_logits.size() && !dclass_logits[l].empty();
    const bool has_mask = l < dmask_logits.size() && !dmask_logits[l].empty();
    if (has_cls || has_mask) {
      Tensor dnormed = zeros_like(hc.normed);
      if (has_cls)
        dnormed += mlp_backward(params.class_head, hc.class_head, dclass_logits[l],
                                grads.class_head);
      if (has_mask) {
        const Tensor dm = dmask_logits[l].reshaped({hc.mask_embed.rows(), r.pixel_embedding.rows()});
        const Tensor dembed = matmul(dm, pyramid.embedding.tokens);
        r.pixel_embedding += matmul_tn(dm, hc.mask_embed);
        dnormed += mlp_backward(params.mask_head, hc.mask_head, dembed, grads.mask_head);
      }
      dx += layer_norm_backward(params.ln_out, hc.ln_out, dnormed, grads.ln_out);
    }
    dx = decoder_layer_backward(params.layers[l], cache.layers[l], dx, grads.layers[l],
                                r.levels[level_for_layer(l)]);
  }
  grads.query_init += dx;
  return r;
}

}  // namespace unidps

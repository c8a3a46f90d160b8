#include "unidps/numerics/layers.h"

#include <cmath>

#include "unidps/numerics/trace.h"

namespace unidps {

void accumulate(Tensor& into, const Tensor& g) {
  if (into.empty() && !g.empty()) {
    into = g;
    return;
  }
  into += g;
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  Linear p = zeros_linear(in, out);
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& w : p.weight.data()) w = rng.uniform(-limit, limit);
  return p;
}

Linear zeros_linear(std::size_t in, std::size_t out) {
  return Linear{Tensor({in, out}), Tensor({out})};
}

Tensor linear_forward(const Linear& p, const Tensor& x) {
  Tensor y = matmul(x, p.weight);
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += p.bias[j];
  return y;
}

Tensor linear_backward(const Linear& p, const Tensor& x, const Tensor& dy, Linear& grad) {
  grad.weight += matmul_tn(x, dy);
  const std::size_t n = dy.cols();
  for (std::size_t r = 0; r < dy.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) grad.bias[j] += dy[r * n + j];
  return matmul_nt(dy, p.weight);
}

void visit_params(Linear& p, const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".weight", p.weight);
  f(prefix + ".bias", p.bias);
}

LayerNorm make_layer_norm(std::size_t features) {
  return LayerNorm{Tensor({features}, 1.0), Tensor({features}, 0.0)};
}

Tensor layer_norm_forward(const LayerNorm& p, const Tensor& x, LayerNormCache* cache) {
  const std::size_t c = x.cols();
  const std::size_t rows = x.rows();
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    auto out = xhat.row(r);
    for (std::size_t j = 0; j < c; ++j) out[j] = (in[j] - mean) * inv_std[r];
  }
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      y[r * c + j] = p.gain[j] * xhat[r * c + j] + p.bias[j];
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor layer_norm_backward(const LayerNorm& p, const LayerNormCache& cache, const Tensor& dy,
                           LayerNorm& grad) {
  const Tensor& xhat = cache.normalized;
  const std::size_t c = xhat.cols();
  const double inv_c = 1.0 / static_cast<double>(c);
  Tensor dx(xhat.shape());
  std::vector<double> dxhat(c);
  for (std::size_t r = 0; r < xhat.rows(); ++r) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double g = dy[r * c + j];
      grad.gain[j] += g * xhat[r * c + j];
      grad.bias[j] += g;
      dxhat[j] = g * p.gain[j];
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xhat[r * c + j];
    }
    mean_d *= inv_c;
    mean_dx *= inv_c;
    for (std::size_t j = 0; j < c; ++j)
      dx[r * c + j] = cache.inv_std[r] * (dxhat[j] - mean_d - xhat[r * c + j] * mean_dx);
  }
  return dx;
}

void visit_params(LayerNorm& p, const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".gain", p.gain);
  f(prefix + ".bias", p.bias);
}

Mlp make_mlp(const std::vector<std::size_t>& widths, Rng& rng) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(make_linear(widths[i], widths[i + 1], rng));
  return m;
}

Tensor mlp_forward(const Mlp& p, const Tensor& x, MlpCache* cache) {
  if (p.layers.empty()) return x;
  trace::Recorder* rec = trace::active();
  Tensor h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (h.cols() != p.layers[l].in_features()) {
      throw DimensionError("mlp: layer " + std::to_string(l) + " expects " +
                           std::to_string(p.layers[l].in_features()) + " features, got " +
                           shape_to_string(h.shape()));
    }
    Tensor z = linear_forward(p.layers[l], h);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    if (l + 1 < p.layers.size()) {
      for (double& v : z.data()) {
        if (rec) rec->add(v > 0.0);
        if (v < 0.0) v = 0.0;
      }
    }
    h = std::move(z);
  }
  return h;
}

Tensor mlp(const Tensor& x, const Mlp& params) { return mlp_forward(params, x, nullptr); }

Tensor mlp_backward(const Mlp& p, const MlpCache& cache, const Tensor& dy, Mlp& grad) {
  Tensor d = dy;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    if (l + 1 < p.layers.size()) {
      const Tensor& z = cache.pre[l];
      for (std::size_t i = 0; i < d.size(); ++i)
        if (z[i] <= 0.0) d[i] = 0.0;
    }
    d = linear_backward(p.layers[l], cache.inputs[l], d, grad.layers[l]);
  }
  return d;
}

void visit_params(Mlp& p, const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    visit_params(p.layers[l], prefix + "." + std::to_string(l), f);
}

Attention make_attention(std::size_t channels, Rng& rng) {
  Attention a;
  a.q = make_linear(channels, channels, rng);
  a.k = make_linear(channels, channels, rng);
  a.v = make_linear(channels, channels, rng);
  a.out = make_linear(channels, channels, rng);
  return a;
}

Tensor attention_forward(const Attention& p, const Tensor& q_in, const Tensor& k_in,
                         const Tensor& v_in, const AttentionMask* mask, AttentionCache* cache) {
  Tensor q = linear_forward(p.q, q_in);
  Tensor k = linear_forward(p.k, k_in);
  Tensor v = linear_forward(p.v, v_in);
  Tensor probs = attention_weights(q, k, mask);
  Tensor context = matmul(probs, v);
  Tensor out = linear_forward(p.out, context);
  if (cache) {
    cache->q_in = q_in;
    cache->k_in = k_in;
    cache->v_in = v_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return out;
}

AttentionInputGrads attention_backward(const Attention& p, const AttentionCache& cache,
                                       const Tensor& dout, Attention& grad) {
  const Tensor dcontext = linear_backward(p.out, cache.context, dout, grad.out);
  const Tensor& a = cache.probs;
  const Tensor dprobs = matmul_nt(dcontext, cache.v);
  const Tensor dv = matmul_tn(a, dcontext);
  const std::size_t nq = a.dim(0), nk = a.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cache.q.dim(1)));
  Tensor dscores({nq, nk});
  for (std::size_t i = 0; i < nq; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < nk; ++j) dot += a[i * nk + j] * dprobs[i * nk + j];
    for (std::size_t j = 0; j < nk; ++j)
      dscores[i * nk + j] = a[i * nk + j] * (dprobs[i * nk + j] - dot) * scale;
  }
  const Tensor dq = matmul(dscores, cache.k);
  const Tensor dk = matmul_tn(dscores, cache.q);
  AttentionInputGrads g;
  g.q_in = linear_backward(p.q, cache.q_in, dq, grad.q);
  g.k_in = linear_backward(p.k, cache.k_in, dk, grad.k);
  g.v_in = linear_backward(p.v, cache.v_in, dv, grad.v);
  return g;
}

void visit_params(Attention& p, const std::string& prefix, const ParamVisitor& f) {
  visit_params(p.q, prefix + ".q", f);
  visit_params(p.k, prefix + ".k", f);
  visit_params(p.v, prefix + ".v", f);
  visit_params(p.out, prefix + ".out", f);
}

}  // namespace unidps

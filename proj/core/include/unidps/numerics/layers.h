#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unidps/numerics/ops.h"
#include "unidps/numerics/rng.h"
#include "unidps/numerics/tensor.h"

// Trainable building blocks with hand-written backward passes. Every
// *_backward function accumulates parameter gradients into a structure of the
// same type as the parameters and returns the gradient w.r.t. its input(s).
namespace unidps {

using ParamVisitor = std::function<void(const std::string&, Tensor&)>;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

Linear make_linear(std::size_t in, std::size_t out, Rng& rng);
Linear zeros_linear(std::size_t in, std::size_t out);
Tensor linear_forward(const Linear& p, const Tensor& x);
Tensor linear_backward(const Linear& p, const Tensor& x, const Tensor& dy, Linear& grad);
void visit_params(Linear& p, const std::string& prefix, const ParamVisitor& f);

struct LayerNorm {
  Tensor gain;
  Tensor bias;
};

struct LayerNormCache {
  Tensor normalized;  // pre-affine
  std::vector<double> inv_std;
};

LayerNorm make_layer_norm(std::size_t features);
Tensor layer_norm_forward(const LayerNorm& p, const Tensor& x, LayerNormCache* cache);
Tensor layer_norm_backward(const LayerNorm& p, const LayerNormCache& cache, const Tensor& dy,
                           LayerNorm& grad);
void visit_params(LayerNorm& p, const std::string& prefix, const ParamVisitor& f);

// Linear layers with a rectifier between consecutive layers (none after the
// last one).
struct Mlp {
  std::vector<Linear> layers;
};

struct MlpCache {
  std::vector<Tensor> inputs;  // input of each linear layer
  std::vector<Tensor> pre;     // pre-activation output of each linear layer
};

// widths = {in, hidden..., out}
Mlp make_mlp(const std::vector<std::size_t>& widths, Rng& rng);
Tensor mlp(const Tensor& x, const Mlp& params);
Tensor mlp_forward(const Mlp& p, const Tensor& x, MlpCache* cache);
Tensor mlp_backward(const Mlp& p, const MlpCache& cache, const Tensor& dy, Mlp& grad);
void visit_params(Mlp& p, const std::string& prefix, const ParamVisitor& f);

// Single-head attention with input/output projections.
struct Attention {
  Linear q, k, v, out;
};

struct AttentionCache {
  Tensor q_in, k_in, v_in;
  Tensor q, k, v;
  Tensor probs;    // [Nq, Nk]
  Tensor context;  // probs * v
};

struct AttentionInputGrads {
  Tensor q_in, k_in, v_in;
};

Attention make_attention(std::size_t channels, Rng& rng);
Tensor attention_forward(const Attention& p, const Tensor& q_in, const Tensor& k_in,
                         const Tensor& v_in, const AttentionMask* mask, AttentionCache* cache);
AttentionInputGrads attention_backward(const Attention& p, const AttentionCache& cache,
                                       const Tensor& dout, Attention& grad);
void visit_params(Attention& p, const std::string& prefix, const ParamVisitor& f);

// In-place accumulation helper for gradients of shared inputs.
void accumulate(Tensor& into, const Tensor& g);

}  // namespace unidps

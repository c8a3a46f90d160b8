#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "unidps/numerics/tensor.h"

namespace unidps {

inline constexpr double kLayerNormEps = 1e-5;

// Boolean [queries, keys] matrix; true = the query may attend to the key.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;

  AttentionMask() = default;
  AttentionMask(std::size_t q, std::size_t k, bool value = true)
      : queries(q), keys(k), allowed(q * k, value ? 1 : 0) {}

  bool at(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { allowed[q * keys + k] = v ? 1 : 0; }
  // Number of rows with no allowed key (these fall back to attending everywhere).
  std::size_t empty_rows() const;
};

// c = a * b with sequential summation over the inner dimension.
Tensor matmul(const Tensor& a, const Tensor& b);
// c = a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// c = a^T * b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// axis < 0 counts from the end.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor sigmoid(const Tensor& x);
double sigmoid(double x);
// log(1 + e^x) without overflow.
double softplus(double x);
Tensor relu(const Tensor& x);

// Attention probabilities softmax(q k^T / sqrt(C) + bias), where masked-out
// pairs get -inf. A query row whose mask is entirely false is treated as
// unmasked.
Tensor attention_weights(const Tensor& q, const Tensor& k,
                         const AttentionMask* mask = nullptr);
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionMask* mask = nullptr);
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::optional<AttentionMask>& mask) {
  return attention(q, k, v, mask ? &*mask : nullptr);
}

// Row-wise normalization over the last axis (population variance, eps 1e-5)
// followed by gain * x + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

}  // namespace unidps

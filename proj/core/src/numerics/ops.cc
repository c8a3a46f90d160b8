#include "unidps/numerics/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace unidps {

std::size_t AttentionMask::empty_rows() const {
  std::size_t n = 0;
  for (std::size_t q = 0; q < queries; ++q) {
    bool any = false;
    for (std::size_t k = 0; k < keys && !any; ++k) any = at(q, k);
    n += any ? 0 : 1;
  }
  return n;
}

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = &b[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()) + "^T");
  }
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b[j * k];
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] = s;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: " + shape_to_string(a.shape()) + "^T x " +
                         shape_to_string(b.shape()));
  }
  Tensor c({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = &a[p * m];
    const double* brow = &b[p * n];
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = &c[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (rank == 0) return Tensor(x.shape(), 1.0);
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(ax);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[base + i * inner]);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(x[base + i * inner] - m);
        y[base + i * inner] = e;
        s += e;
      }
      for (std::size_t i = 0; i < n; ++i) y[base + i * inner] /= s;
    }
  }
  return y;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor attention_weights(const Tensor& q, const Tensor& k, const AttentionMask* mask) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: query/key feature dims " +
                         shape_to_string(q.shape()) + " vs " + shape_to_string(k.shape()));
  }
  const std::size_t nq = q.dim(0), nk = k.dim(0);
  if (mask && (mask->queries != nq || mask->keys != nk)) {
    throw DimensionError("attention: mask is " + std::to_string(mask->queries) + "x" +
                         std::to_string(mask->keys) + ", expected " +
                         std::to_string(nq) + "x" + std::to_string(nk));
  }
  Tensor s = matmul_nt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor a({nq, nk});
  for (std::size_t i = 0; i < nq; ++i) {
    bool use_mask = false;
    if (mask) {
      for (std::size_t j = 0; j < nk && !use_mask; ++j) use_mask = mask->at(i, j);
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nk; ++j) {
      if (use_mask && !mask->at(i, j)) continue;
      m = std::max(m, s[i * nk + j] * scale);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < nk; ++j) {
      if (use_mask && !mask->at(i, j)) continue;
      const double e = std::exp(s[i * nk + j] * scale - m);
      a[i * nk + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < nk; ++j) a[i * nk + j] /= total;
  }
  return a;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask) {
  require_matrix(v, "attention");
  if (v.dim(0) != k.dim(0)) {
    throw DimensionError("attention: keys " + shape_to_string(k.shape()) + " vs values " +
                         shape_to_string(v.shape()));
  }
  return matmul(attention_weights(q, k, mask), v);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t c = x.cols();
  if (gain.size() != c || bias.size() != c) {
    throw DimensionError("layer_norm: gain/bias size vs feature dim " + std::to_string(c));
  }
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    auto out = y.row(r);
    for (std::size_t j = 0; j < c; ++j) out[j] = gain[j] * (in[j] - mean) * inv + bias[j];
  }
  return y;
}

}  // namespace unidps

#ifndef PROMPTCLASS_KERNELS_HPP
#define PROMPTCLASS_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "promptclass/tensor.hpp"

// Shared numeric kernels. Both the evaluation path and the autograd graph
// call into these, so the two paths stay bit-identical.

namespace promptclass::kernels {

// C (+)= A[m x k] * B[k x n]
template <bool Acc, typename T>
void mm(T* __restrict__ c, const T* __restrict__ a, const T* __restrict__ b,
        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!Acc)
      for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C (+)= A[m x k] * B^T, where B is [n x k]
template <bool Acc, typename T>
void mm_nt(T* __restrict__ c, const T* __restrict__ a, const T* __restrict__ b,
           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s = T(0);
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      if (Acc)
        ci[j] += s;
      else
        ci[j] = s;
    }
  }
}

// C (+)= A^T * B, where A is [k x m], B is [k x n]
template <bool Acc, typename T>
void mm_tn(T* __restrict__ c, const T* __restrict__ a, const T* __restrict__ b,
           std::size_t m, std::size_t k, std::size_t n) {
  if (!Acc)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = ap[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

// Numerically stable in-place softmax over x[0..n); entries at index >= valid
// are forced to zero probability.
template <typename T>
void softmax_masked(T* x, std::size_t n, std::size_t valid) {
  if (valid == 0 || valid > n) valid = n;
  T mx = x[0];
  for (std::size_t i = 1; i < valid; ++i) mx = std::max(mx, x[i]);
  T sum = T(0);
  for (std::size_t i = 0; i < valid; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (std::size_t i = 0; i < valid; ++i) x[i] /= sum;
  for (std::size_t i = valid; i < n; ++i) x[i] = T(0);
}

template <typename T>
void softmax(T* x, std::size_t n) {
  softmax_masked(x, n, n);
}

// Row-wise layer norm; writes normalized values and the per-row 1/std used
// by the backward pass. xhat may alias nothing.
template <typename T>
void layernorm_row(const T* x, const T* gamma, const T* beta, std::size_t d,
                   T eps, T* y, T* xhat, T* rstd_out) {
  T mean = T(0);
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<T>(d);
  T var = T(0);
  for (std::size_t i = 0; i < d; ++i) {
    T c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  T rstd = T(1) / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) {
    T h = (x[i] - mean) * rstd;
    xhat[i] = h;
    y[i] = gamma[i] * h + beta[i];
  }
  *rstd_out = rstd;
}

template <typename T>
T gelu(T x) {
  // exact (erf) form
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T kInvSqrt2Pi = T(0.39894228040143267794);
  T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// log(sum(exp(x))) with max subtraction.
template <typename T>
T logsumexp(const T* x, std::size_t n) {
  T mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

}  // namespace promptclass::kernels

#endif  // PROMPTCLASS_KERNELS_HPP

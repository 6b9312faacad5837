#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

// Raw dense kernels shared by the taped ops and the tape-free inference path,
// so both compute identical values for identical inputs.

namespace mmt::num::kernels {

// Every output element is summed over k in one fixed order that does not
// depend on m or on the element's position, so a row computed alone (the
// incremental decoder) matches the same row inside a larger product.

namespace detail {

// 32-byte SIMD lane group (GCC/Clang vector extension).
template <class T>
struct Simd {
  typedef T type __attribute__((vector_size(32)));
  static constexpr size_t lanes = 32 / sizeof(T);
  static type load(const T* p) {
    type v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, type v) { std::memcpy(p, &v, sizeof v); }
};

// R rows x 2 SIMD groups of C held in registers while p runs over all of k.
template <class T, size_t R, bool Accumulate>
inline void gemm_block(size_t n, size_t k, const T* __restrict a, const T* __restrict b, T* __restrict c) {
  using S = Simd<T>;
  using V = typename S::type;
  constexpr size_t L = S::lanes;
  V acc0[R], acc1[R];
  for (size_t r = 0; r < R; ++r) {
    if constexpr (Accumulate) {
      acc0[r] = S::load(c + r * n);
      acc1[r] = S::load(c + r * n + L);
    } else {
      acc0[r] = V{};
      acc1[r] = V{};
    }
  }
  for (size_t p = 0; p < k; ++p) {
    const V b0 = S::load(b + p * n), b1 = S::load(b + p * n + L);
    for (size_t r = 0; r < R; ++r) {
      const T av = a[r * k + p];
      acc0[r] += av * b0;
      acc1[r] += av * b1;
    }
  }
  for (size_t r = 0; r < R; ++r) {
    S::store(c + r * n, acc0[r]);
    S::store(c + r * n + L, acc1[r]);
  }
}

// Leftover columns [0, cols) with the same per-element order.
template <class T, size_t R>
inline void gemm_tail(size_t n, size_t k, size_t cols, const T* __restrict a, const T* __restrict b,
                      T* __restrict c, bool accumulate) {
  for (size_t r = 0; r < R; ++r) {
    T* __restrict cr = c + r * n;
    if (!accumulate) {
      for (size_t j = 0; j < cols; ++j) cr[j] = T(0);
    }
    for (size_t p = 0; p < k; ++p) {
      const T av = a[r * k + p];
      const T* __restrict bp = b + p * n;
      for (size_t j = 0; j < cols; ++j) cr[j] += av * bp[j];
    }
  }
}

template <class T, size_t R>
inline void gemm_rows(size_t n, size_t k, const T* a, const T* b, T* c, bool accumulate) {
  constexpr size_t W = 2 * Simd<T>::lanes;
  size_t j = 0;
  if (accumulate) {
    for (; j + W <= n; j += W) gemm_block<T, R, true>(n, k, a, b + j, c + j);
  } else {
    for (; j + W <= n; j += W) gemm_block<T, R, false>(n, k, a, b + j, c + j);
  }
  if (j < n) gemm_tail<T, R>(n, k, n - j, a, b + j, c + j, accumulate);
}

}  // namespace detail

/// C[m,n] (+)= A[m,k] * B[k,n]. Each element is c + a0*b0 + a1*b1 + ...
/// in increasing p, whatever the blocking.
template <class T>
void gemm_nn(size_t m, size_t n, size_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c, bool accumulate) {
  size_t i = 0;
  for (; i + 4 <= m; i += 4) detail::gemm_rows<T, 4>(n, k, a + i * k, b, c + i * n, accumulate);
  for (; i < m; ++i) detail::gemm_rows<T, 1>(n, k, a + i * k, b, c + i * n, accumulate);
}

inline constexpr size_t kDotLanes = 8;

/// Dot product with kDotLanes interleaved partial sums (vectorizable, fixed
/// order), reduced pairwise.
template <class T>
T dot(const T* __restrict x, const T* __restrict y, size_t n) {
  T acc[kDotLanes] = {};
  size_t i = 0;
  for (; i + kDotLanes <= n; i += kDotLanes) {
    for (size_t l = 0; l < kDotLanes; ++l) acc[l] += x[i + l] * y[i + l];
  }
  for (size_t l = 0; i < n; ++i, ++l) acc[l] += x[i] * y[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

/// dst[cols, rows] = src[rows, cols]^T
template <class T>
void transpose(size_t rows, size_t cols, const T* __restrict src, T* __restrict dst) {
  constexpr size_t kTile = 32;
  for (size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (size_t c0 = 0; c0 < cols; c0 += kTile) {
      const size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (size_t r = r0; r < r1; ++r) {
        for (size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

/// C[m,n] (+)= A[m,k] * B[n,k]^T, via gemm_nn on a transposed copy of B.
template <class T>
void gemm_nt(size_t m, size_t n, size_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c, bool accumulate) {
  std::vector<T> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

/// C[m,n] (+)= A[k,m]^T * B[k,n], via gemm_nn on a transposed copy of A.
template <class T>
void gemm_tn(size_t m, size_t n, size_t k, const T* __restrict a, const T* __restrict b,
             T* __restrict c, bool accumulate) {
  std::vector<T> at(m * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

/// y = (x - mean) / sqrt(var + eps) * gain + bias over one row; returns
/// inverse std so callers can cache it.
template <class T>
T layer_norm_row(const T* x, const T* gain, const T* bias, T* y, size_t d, T eps) {
  T mean = T(0);
  for (size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<T>(d);
  T var = T(0);
  for (size_t j = 0; j < d; ++j) {
    const T c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T inv = T(1) / std::sqrt(var + eps);
  for (size_t j = 0; j < d; ++j) y[j] = (x[j] - mean) * inv * gain[j] + bias[j];
  return inv;
}

template <class T>
T gelu(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = k * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T gelu_grad(T x) {
  constexpr T k = T(0.7978845608028654);
  const T x2 = x * x;
  const T u = k * (x + T(0.044715) * x2 * x);
  const T t = std::tanh(u);
  const T du = k * (T(1) + T(3) * T(0.044715) * x2);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

/// In-place softmax over a contiguous row.
template <class T>
void softmax_row(T* x, size_t n) {
  T mx = x[0];
  for (size_t i = 1; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  T sum = T(0);
  for (size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const T inv = T(1) / sum;
  for (size_t i = 0; i < n; ++i) x[i] *= inv;
}

}  // namespace mmt::num::kernels

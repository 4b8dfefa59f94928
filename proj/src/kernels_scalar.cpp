#include "kernels_impl.hpp"

#include <cmath>

// Reference kernels: straightforward loops, no intrinsics. These define the
// semantics the AVX2 variants are tested against.

namespace sivs::kernels::detail {
namespace {

template <typename T>
void axpy_(T* y, const T* x, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void add_(T* out, const T* a, const T* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_(T* out, const T* a, const T* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_(T* out, const T* a, const T* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_shift_(T* out, const T* x, T a, T b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b;
}

template <typename T>
T dot_(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T sum_(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename T>
T sumsq_(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

template <typename T>
T sumabs_(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(x[i]);
  return acc;
}

// C[m x n] += A[m x k] * B[k x n]; axpy-style inner loop keeps the access to
// B and C contiguous.
template <typename T>
void matmul_(T* c, const T* a, const T* b,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T; dot-product inner loop.
template <typename T>
void matmul_nt_(T* c, const T* a, const T* b,
                std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] += dot_(arow, b + j * k, k);
    }
  }
}

}  // namespace

Table scalar_table() {
  Table t;
  t.axpy_f = axpy_<float>;
  t.axpy_d = axpy_<double>;
  t.add_f = add_<float>;
  t.add_d = add_<double>;
  t.sub_f = sub_<float>;
  t.sub_d = sub_<double>;
  t.mul_f = mul_<float>;
  t.mul_d = mul_<double>;
  t.scale_shift_f = scale_shift_<float>;
  t.scale_shift_d = scale_shift_<double>;
  t.dot_f = dot_<float>;
  t.dot_d = dot_<double>;
  t.sum_f = sum_<float>;
  t.sum_d = sum_<double>;
  t.sumsq_f = sumsq_<float>;
  t.sumsq_d = sumsq_<double>;
  t.sumabs_f = sumabs_<float>;
  t.sumabs_d = sumabs_<double>;
  t.matmul_f = matmul_<float>;
  t.matmul_d = matmul_<double>;
  t.matmul_nt_f = matmul_nt_<float>;
  t.matmul_nt_d = matmul_nt_<double>;
  return t;
}

}  // namespace sivs::kernels::detail

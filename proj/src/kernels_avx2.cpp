#include "kernels_impl.hpp"

#include <cmath>

#if defined(__x86_64__) || defined(__i386__)
#define SIVS_X86 1
#include <immintrin.h>
#else
#define SIVS_X86 0
#endif

// AVX2+FMA kernels. The whole TU is compiled without -mavx2; each function
// carries a target attribute so the binary stays runnable on older CPUs and
// the dispatcher decides at startup whether this table may be used.

namespace sivs::kernels::detail {

#if SIVS_X86

#define SIVS_AVX2 __attribute__((target("avx2,fma")))

namespace {

SIVS_AVX2 inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

SIVS_AVX2 inline double hsum256(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

SIVS_AVX2 void axpy_f(float* y, const float* x, float a, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

SIVS_AVX2 void axpy_d(double* y, const double* x, double a, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

SIVS_AVX2 void add_f(float* out, const float* a, const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

SIVS_AVX2 void add_d(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

SIVS_AVX2 void sub_f(float* out, const float* a, const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

SIVS_AVX2 void sub_d(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

SIVS_AVX2 void mul_f(float* out, const float* a, const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

SIVS_AVX2 void mul_d(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

SIVS_AVX2 void scale_shift_f(float* out, const float* x, float a, float b, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a), vb = _mm256_set1_ps(b);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vb));
  for (; i < n; ++i) out[i] = a * x[i] + b;
}

SIVS_AVX2 void scale_shift_d(double* out, const double* x, double a, double b, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a), vb = _mm256_set1_pd(b);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
  for (; i < n; ++i) out[i] = a * x[i] + b;
}

SIVS_AVX2 float dot_f(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  float r = hsum256(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

SIVS_AVX2 double dot_d(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double r = hsum256(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

SIVS_AVX2 float sum_f(const float* x, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float r = hsum256(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

SIVS_AVX2 double sum_d(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum256(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

SIVS_AVX2 float sumsq_f(const float* x, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 v = _mm256_loadu_ps(x + i);
    acc = _mm256_fmadd_ps(v, v, acc);
  }
  float r = hsum256(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

SIVS_AVX2 double sumsq_d(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double r = hsum256(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

SIVS_AVX2 float sumabs_f(const float* x, std::size_t n) {
  const __m256 mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_add_ps(acc, _mm256_and_ps(mask, _mm256_loadu_ps(x + i)));
  float r = hsum256(acc);
  for (; i < n; ++i) r += std::abs(x[i]);
  return r;
}

SIVS_AVX2 double sumabs_d(const double* x, std::size_t n) {
  const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffll));
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_and_pd(mask, _mm256_loadu_pd(x + i)));
  double r = hsum256(acc);
  for (; i < n; ++i) r += std::abs(x[i]);
  return r;
}

SIVS_AVX2 void matmul_f(float* c, const float* a, const float* b,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * k + p];
      if (aip == 0.f) continue;
      const float* brow = b + p * n;
      const __m256 va = _mm256_set1_ps(aip);
      std::size_t j = 0;
      for (; j + 16 <= n; j += 16) {
        _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j),
                                                   _mm256_loadu_ps(crow + j)));
        _mm256_storeu_ps(crow + j + 8, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j + 8),
                                                       _mm256_loadu_ps(crow + j + 8)));
      }
      for (; j + 8 <= n; j += 8)
        _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j),
                                                   _mm256_loadu_ps(crow + j)));
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

SIVS_AVX2 void matmul_d(double* c, const double* a, const double* b,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      const __m256d va = _mm256_set1_pd(aip);
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j),
                                                   _mm256_loadu_pd(crow + j)));
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

SIVS_AVX2 void matmul_nt_f(float* c, const float* a, const float* b,
                           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      c[i * n + j] += dot_f(a + i * k, b + j * k, k);
}

SIVS_AVX2 void matmul_nt_d(double* c, const double* a, const double* b,
                           std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      c[i * n + j] += dot_d(a + i * k, b + j * k, k);
}

}  // namespace

Table avx2_table() {
  Table t;
  t.axpy_f = axpy_f;
  t.axpy_d = axpy_d;
  t.add_f = add_f;
  t.add_d = add_d;
  t.sub_f = sub_f;
  t.sub_d = sub_d;
  t.mul_f = mul_f;
  t.mul_d = mul_d;
  t.scale_shift_f = scale_shift_f;
  t.scale_shift_d = scale_shift_d;
  t.dot_f = dot_f;
  t.dot_d = dot_d;
  t.sum_f = sum_f;
  t.sum_d = sum_d;
  t.sumsq_f = sumsq_f;
  t.sumsq_d = sumsq_d;
  t.sumabs_f = sumabs_f;
  t.sumabs_d = sumabs_d;
  t.matmul_f = matmul_f;
  t.matmul_d = matmul_d;
  t.matmul_nt_f = matmul_nt_f;
  t.matmul_nt_d = matmul_nt_d;
  return t;
}

#else  // non-x86: the "avx2" table is never selected; alias the scalar one.

Table avx2_table() { return scalar_table(); }

#endif

}  // namespace sivs::kernels::detail

#ifndef SIVS_KERNELS_HPP
#define SIVS_KERNELS_HPP

#include <cstddef>
#include <string>

// Hot inner loops used by the tensor ops. Every kernel exists in a scalar
// reference version and (on x86) an AVX2+FMA version; the implementation is
// picked once at startup from cpuid, or forced via the SIVS_KERNELS
// environment variable ("scalar" / "avx2"). Variants are equivalence-tested
// against each other; they may differ by reassociation/FMA rounding, so the
// tests compare with a tolerance, not bitwise.

namespace sivs::kernels {

enum class Isa { scalar, avx2 };

Isa active();
const char* isa_name(Isa);
// Force a specific implementation (tests; throws if unsupported on this CPU).
void force(Isa);
bool cpu_has_avx2();

// y[i] += a * x[i]
void axpy(float* y, const float* x, float a, std::size_t n);
void axpy(double* y, const double* x, double a, std::size_t n);

// out[i] = a[i] (+|-|*) b[i]
void add(float* out, const float* a, const float* b, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(float* out, const float* a, const float* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(float* out, const float* a, const float* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);

// out[i] = a * x[i] + b
void scale_shift(float* out, const float* x, float a, float b, std::size_t n);
void scale_shift(double* out, const double* x, double a, double b, std::size_t n);

float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

float sum(const float* x, std::size_t n);
double sum(const double* x, std::size_t n);
float sumsq(const float* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
float sumabs(const float* x, std::size_t n);
double sumabs(const double* x, std::size_t n);

// C[m x n] += A[m x k] * B[k x n], all row-major, no aliasing.
void matmul_accum(float* c, const float* a, const float* b,
                  std::size_t m, std::size_t k, std::size_t n);
void matmul_accum(double* c, const double* a, const double* b,
                  std::size_t m, std::size_t k, std::size_t n);

// C[m x n] += A[m x k] * B[n x k]^T  (B stored row-major by rows of length k;
// this is the natural layout for linear layers storing weights as [out, in]).
void matmul_nt_accum(float* c, const float* a, const float* b,
                     std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_accum(double* c, const double* a, const double* b,
                     std::size_t m, std::size_t k, std::size_t n);

}  // namespace sivs::kernels

#endif

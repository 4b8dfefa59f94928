#include "sivs/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "kernels_impl.hpp"

namespace sivs::kernels {
namespace {

detail::Table g_table;
Isa g_isa = Isa::scalar;

bool detect_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

void select(Isa isa) {
  g_table = (isa == Isa::avx2) ? detail::avx2_table() : detail::scalar_table();
  g_isa = isa;
}

// Startup selection: best available ISA unless SIVS_KERNELS says otherwise.
struct Init {
  Init() {
    Isa isa = detect_avx2() ? Isa::avx2 : Isa::scalar;
    if (const char* env = std::getenv("SIVS_KERNELS")) {
      if (std::strcmp(env, "scalar") == 0) isa = Isa::scalar;
      else if (std::strcmp(env, "avx2") == 0 && detect_avx2()) isa = Isa::avx2;
    }
    select(isa);
  }
} g_init;

}  // namespace

Isa active() { return g_isa; }

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool cpu_has_avx2() { return detect_avx2(); }

void force(Isa isa) {
  if (isa == Isa::avx2 && !detect_avx2())
    throw std::runtime_error("kernels: avx2 not supported on this CPU");
  select(isa);
}

void axpy(float* y, const float* x, float a, std::size_t n) { g_table.axpy_f(y, x, a, n); }
void axpy(double* y, const double* x, double a, std::size_t n) { g_table.axpy_d(y, x, a, n); }
void add(float* o, const float* a, const float* b, std::size_t n) { g_table.add_f(o, a, b, n); }
void add(double* o, const double* a, const double* b, std::size_t n) { g_table.add_d(o, a, b, n); }
void sub(float* o, const float* a, const float* b, std::size_t n) { g_table.sub_f(o, a, b, n); }
void sub(double* o, const double* a, const double* b, std::size_t n) { g_table.sub_d(o, a, b, n); }
void mul(float* o, const float* a, const float* b, std::size_t n) { g_table.mul_f(o, a, b, n); }
void mul(double* o, const double* a, const double* b, std::size_t n) { g_table.mul_d(o, a, b, n); }
void scale_shift(float* o, const float* x, float a, float b, std::size_t n) {
  g_table.scale_shift_f(o, x, a, b, n);
}
void scale_shift(double* o, const double* x, double a, double b, std::size_t n) {
  g_table.scale_shift_d(o, x, a, b, n);
}
float dot(const float* a, const float* b, std::size_t n) { return g_table.dot_f(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return g_table.dot_d(a, b, n); }
float sum(const float* x, std::size_t n) { return g_table.sum_f(x, n); }
double sum(const double* x, std::size_t n) { return g_table.sum_d(x, n); }
float sumsq(const float* x, std::size_t n) { return g_table.sumsq_f(x, n); }
double sumsq(const double* x, std::size_t n) { return g_table.sumsq_d(x, n); }
float sumabs(const float* x, std::size_t n) { return g_table.sumabs_f(x, n); }
double sumabs(const double* x, std::size_t n) { return g_table.sumabs_d(x, n); }
void matmul_accum(float* c, const float* a, const float* b,
                  std::size_t m, std::size_t k, std::size_t n) {
  g_table.matmul_f(c, a, b, m, k, n);
}
void matmul_accum(double* c, const double* a, const double* b,
                  std::size_t m, std::size_t k, std::size_t n) {
  g_table.matmul_d(c, a, b, m, k, n);
}
void matmul_nt_accum(float* c, const float* a, const float* b,
                     std::size_t m, std::size_t k, std::size_t n) {
  g_table.matmul_nt_f(c, a, b, m, k, n);
}
void matmul_nt_accum(double* c, const double* a, const double* b,
                     std::size_t m, std::size_t k, std::size_t n) {
  g_table.matmul_nt_d(c, a, b, m, k, n);
}

}  // namespace sivs::kernels

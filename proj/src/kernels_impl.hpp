#ifndef SIVS_KERNELS_IMPL_HPP
#define SIVS_KERNELS_IMPL_HPP

#include <cstddef>

// Internal dispatch table shared by the scalar and AVX2 translation units.
// One entry per kernel and element type; kernels_dispatch.cpp fills it once.

namespace sivs::kernels::detail {

struct Table {
  void (*axpy_f)(float*, const float*, float, std::size_t);
  void (*axpy_d)(double*, const double*, double, std::size_t);
  void (*add_f)(float*, const float*, const float*, std::size_t);
  void (*add_d)(double*, const double*, const double*, std::size_t);
  void (*sub_f)(float*, const float*, const float*, std::size_t);
  void (*sub_d)(double*, const double*, const double*, std::size_t);
  void (*mul_f)(float*, const float*, const float*, std::size_t);
  void (*mul_d)(double*, const double*, const double*, std::size_t);
  void (*scale_shift_f)(float*, const float*, float, float, std::size_t);
  void (*scale_shift_d)(double*, const double*, double, double, std::size_t);
  float (*dot_f)(const float*, const float*, std::size_t);
  double (*dot_d)(const double*, const double*, std::size_t);
  float (*sum_f)(const float*, std::size_t);
  double (*sum_d)(const double*, std::size_t);
  float (*sumsq_f)(const float*, std::size_t);
  double (*sumsq_d)(const double*, std::size_t);
  float (*sumabs_f)(const float*, std::size_t);
  double (*sumabs_d)(const double*, std::size_t);
  void (*matmul_f)(float*, const float*, const float*,
                   std::size_t, std::size_t, std::size_t);
  void (*matmul_d)(double*, const double*, const double*,
                   std::size_t, std::size_t, std::size_t);
  void (*matmul_nt_f)(float*, const float*, const float*,
                      std::size_t, std::size_t, std::size_t);
  void (*matmul_nt_d)(double*, const double*, const double*,
                      std::size_t, std::size_t, std::size_t);
};

Table scalar_table();
Table avx2_table();  // only valid to call through if cpu_has_avx2()

}  // namespace sivs::kernels::detail

#endif

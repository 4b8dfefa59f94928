#include "sivs/linalg.hpp"

#include <cmath>
#include <string>

#include "sivs/tensor.hpp"

namespace sivs {

void jacobi_eigh(const std::vector<double>& a, std::int64_t n, std::vector<double>& eigvals,
                 std::vector<double>& eigvecs, double sym_tol) {
  if (n <= 0 || a.size() != static_cast<std::size_t>(n * n))
    throw ShapeError("jacobi_eigh: matrix size does not match n=" + std::to_string(n));
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::fabs(v));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j)
      if (std::fabs(a[i * n + j] - a[j * n + i]) > sym_tol * std::max(1.0, scale))
        throw NumericError("jacobi_eigh: asymmetric input at (" + std::to_string(i) + "," +
                           std::to_string(j) + "): " + std::to_string(a[i * n + j]) + " vs " +
                           std::to_string(a[j * n + i]));

  std::vector<double> m(a);
  // symmetrize away roundoff-level asymmetry so sweeps preserve symmetry exactly
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      double s = 0.5 * (m[i * n + j] + m[j * n + i]);
      m[i * n + j] = s;
      m[j * n + i] = s;
    }
  eigvecs.assign(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;
  eigvals.assign(static_cast<std::size_t>(n), 0.0);
  if (n == 1) {
    eigvals[0] = m[0];
    return;
  }

  auto offdiag_norm = [&]() {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = i + 1; j < n; ++j) s += m[i * n + j] * m[i * n + j];
    return std::sqrt(2.0 * s);
  };

  const int max_sweeps = 100;
  const double stop = 1e-14 * std::max(1.0, scale) * static_cast<double>(n);
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    if (offdiag_norm() <= stop) break;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        double apq = m[p * n + q];
        if (apq == 0.0) continue;
        double app = m[p * n + p], aqq = m[q * n + q];
        // rotation angle zeroing m[p][q]
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        for (std::int64_t k = 0; k < n; ++k) {
          double mkp = m[k * n + p], mkq = m[k * n + q];
          m[k * n + p] = c * mkp - s * mkq;
          m[k * n + q] = s * mkp + c * mkq;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          double mpk = m[p * n + k], mqk = m[q * n + k];
          m[p * n + k] = c * mpk - s * mqk;
          m[q * n + k] = s * mpk + c * mqk;
        }
        for (std::int64_t k = 0; k < n; ++k) {
          double vkp = eigvecs[k * n + p], vkq = eigvecs[k * n + q];
          eigvecs[k * n + p] = c * vkp - s * vkq;
          eigvecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == max_sweeps)
    throw NumericError("jacobi_eigh: no convergence after " + std::to_string(max_sweeps) +
                       " sweeps");
  for (std::int64_t i = 0; i < n; ++i) eigvals[i] = m[i * n + i];
}

std::vector<double> sqrtm_psd(const std::vector<double>& m, std::int64_t n) {
  std::vector<double> w, v;
  jacobi_eigh(m, n, w, v);
  double wmax = 0.0;
  for (double x : w) wmax = std::max(wmax, std::fabs(x));
  std::vector<double> r;
  r.reserve(w.size());
  for (double x : w) {
    if (x < -std::max(1e-8, 1e-12 * wmax))
      throw NumericError("sqrtm_psd: eigenvalue " + std::to_string(x) +
                         " below PSD tolerance");
    r.push_back(std::sqrt(std::max(0.0, x)));
  }
  // S = V diag(r) V^T
  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t k = 0; k < n; ++k) s += v[i * n + k] * r[k] * v[j * n + k];
      out[i * n + j] = s;
      out[j * n + i] = s;
    }
  return out;
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b,
                              std::int64_t n) {
  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < n; ++k) {
      double av = a[i * n + k];
      if (av == 0.0) continue;
      for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += av * b[k * n + j];
    }
  return out;
}

}  // namespace sivs

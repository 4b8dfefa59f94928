#ifndef SIVS_TESTS_NUMERIC_ORACLES_HPP
#define SIVS_TESTS_NUMERIC_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

// Shared numerical oracles for the flow tests: a dense Jacobian by central
// differences and log|det| via LU with partial pivoting. Deliberately naive.

namespace oracles {

// log|det A| of a dense n x n matrix (row-major), by LU with partial pivoting
inline double lu_logabsdet(std::vector<double> a, int n) {
  double logdet = 0.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::fabs(a[r * n + c]) > std::fabs(a[piv * n + c])) piv = r;
    if (a[piv * n + c] == 0.0) throw std::runtime_error("lu_logabsdet: singular matrix");
    if (piv != c)
      for (int k = 0; k < n; ++k) std::swap(a[piv * n + k], a[c * n + k]);
    logdet += std::log(std::fabs(a[c * n + c]));
    for (int r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (int k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return logdet;
}

// Central-difference Jacobian (row-major, J[i][j] = df_i/dx_j) of a vector map
inline std::vector<double> numeric_jacobian(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    const std::vector<double>& x, double h = 1e-5) {
  const int n = static_cast<int>(x.size());
  std::vector<double> jac(static_cast<std::size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    auto xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = f(xp), fm = f(xm);
    if (static_cast<int>(fp.size()) != n) throw std::runtime_error("numeric_jacobian: not square");
    for (int i = 0; i < n; ++i) jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
  }
  return jac;
}

inline double numeric_logabsdet(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    const std::vector<double>& x, double h = 1e-5) {
  return lu_logabsdet(numeric_jacobian(f, x, h), static_cast<int>(x.size()));
}

}  // namespace oracles

#endif

#ifndef SIVS_LINALG_HPP
#define SIVS_LINALG_HPP

#include <cstdint>
#include <vector>

// Small dense symmetric eigensolver (cyclic Jacobi) and the PSD matrix
// square root built on it. Everything is double precision, row-major,
// and sized for feature covariances (f <= a few hundred).

namespace sivs {

// A = V diag(w) V^T for symmetric A (row-major n x n). V is row-major with
// eigenvector j stored in column j. Throws NumericError if A is asymmetric
// beyond tol or the sweep limit is exhausted.
void jacobi_eigh(const std::vector<double>& a, std::int64_t n, std::vector<double>& eigvals,
                 std::vector<double>& eigvecs, double sym_tol = 1e-8);

// Symmetric PSD square root: S with S*S = M. Eigenvalues in [-1e-8, 0) are
// treated as roundoff and clipped to 0; more negative ones throw.
std::vector<double> sqrtm_psd(const std::vector<double>& m, std::int64_t n);

// row-major matrix product helpers used by the Frechet formula
std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b,
                              std::int64_t n);

}  // namespace sivs

#endif

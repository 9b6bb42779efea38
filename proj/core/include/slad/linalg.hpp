#pragma once

#include <cstddef>

namespace slad {

// Row-major f64 matrix kernels. Summation order per output element is fixed,
// so results are bitwise reproducible at any thread count.

/// c[m,n] (+)= a[m,k] * b[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate);

/// c[m,n] (+)= a[m,k] * b[n,k]^T  (dot products of rows)
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate);

/// c[k,n] (+)= a[m,k]^T * b[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate);

/// m*k*n threshold above which the kernels split across threads.
std::size_t gemm_parallel_threshold();

}  // namespace slad

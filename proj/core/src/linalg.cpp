#include "slad/linalg.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>

#include "slad/common.hpp"

namespace slad {

namespace {

// Threading pays for itself only on chunky products; below this the
// wake/join latency dominates on a small box. Overridable for tuning.
std::size_t parallel_flops_threshold() {
  static std::size_t v = [] {
    if (const char* env = std::getenv("SLADLAB_PAR_THRESHOLD")) {
      long n = std::atol(env);
      if (n > 0) return static_cast<std::size_t>(n);
    }
    return static_cast<std::size_t>(1) << 20;
  }();
  return v;
}

}  // namespace

std::size_t gemm_parallel_threshold() { return parallel_flops_threshold(); }

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  auto rows = [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      std::size_t l = 0;
      if (!accumulate) {
        // first k-slice assigns, so the output needs no pre-clearing
        double av = arow[0];
        const double* brow = b;
        for (std::size_t j = 0; j < n; ++j) crow[j] = av * brow[j];
        l = 1;
      }
      for (; l < k; ++l) {
        double av = arow[l];
        const double* brow = b + l * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (m * k * n >= gemm_parallel_threshold() && m > 1) {
    parallel_for(0, m, 8, rows);
  } else {
    rows(0, m);
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  auto rows = [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        // four lanes with a fixed combine order
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        std::size_t l = 0;
        for (; l + 4 <= k; l += 4) {
          s0 += arow[l] * brow[l];
          s1 += arow[l + 1] * brow[l + 1];
          s2 += arow[l + 2] * brow[l + 2];
          s3 += arow[l + 3] * brow[l + 3];
        }
        double s = (s0 + s1) + (s2 + s3);
        for (; l < k; ++l) s += arow[l] * brow[l];
        crow[j] = accumulate ? crow[j] + s : s;
      }
    }
  };
  if (m * k * n >= gemm_parallel_threshold() && m > 1) {
    parallel_for(0, m, 8, rows);
  } else {
    rows(0, m);
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, bool accumulate) {
  auto cols = [=](std::size_t l0, std::size_t l1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      const double* brow = b + i * n;
      for (std::size_t l = l0; l < l1; ++l) {
        double av = arow[l];
        double* crow = c + l * n;
        if (i == 0 && !accumulate) {
          for (std::size_t j = 0; j < n; ++j) crow[j] = av * brow[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  };
  if (m * k * n >= gemm_parallel_threshold() && k > 1) {
    parallel_for(0, k, 4, cols);
  } else {
    cols(0, k);
  }
}

}  // namespace slad

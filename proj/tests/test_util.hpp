#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "slad/cka.hpp"
#include "slad/tensor.hpp"

namespace testutil {

// Independent oracle: CKA from the Gram/HSIC formulation,
// HSIC(K, L) = tr(K H L H) / (n-1)^2 with H = I - 11^T/n.
inline double hsic_cka(const slad::FeatureMatrix& x,
                       const slad::FeatureMatrix& y) {
  std::size_t n = x.n;
  auto gram = [n](const slad::FeatureMatrix& f) {
    std::vector<double> k(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < f.p; ++c) dot += f.at(i, c) * f.at(j, c);
        k[i * n + j] = dot;
      }
    }
    return k;
  };
  auto center = [n](std::vector<double> k) {
    std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        row_mean[i] += k[i * n + j];
        col_mean[j] += k[i * n + j];
        total += k[i * n + j];
      }
    }
    for (double& v : row_mean) v /= n;
    for (double& v : col_mean) v /= n;
    total /= double(n) * double(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        k[i * n + j] += total - row_mean[i] - col_mean[j];
      }
    }
    return k;
  };
  std::vector<double> kx = center(gram(x));
  std::vector<double> ky = center(gram(y));
  auto dot = [n](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) s += a[i] * b[i];
    return s;
  };
  return dot(kx, ky) / std::sqrt(dot(kx, kx) * dot(ky, ky));
}

inline slad::Tensor random_tensor(slad::Shape shape, slad::Rng& rng,
                                  bool requires_grad = true,
                                  double scale = 1.0) {
  return slad::Tensor::randn(std::move(shape), rng, scale, requires_grad);
}

inline bool bitwise_equal(std::span<const double> a,
                          std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

inline double max_abs_diff(std::span<const double> a,
                           std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]));
  }
  return m;
}

// One-sided Jacobi SVD: rotates column pairs until mutually orthogonal, so
// small singular values come out at machine precision instead of the
// sqrt(eps) floor a Gram-matrix route would give.
inline std::vector<double> singular_values(const std::vector<double>& m,
                                           std::size_t rows,
                                           std::size_t cols) {
  // work with the orientation that has fewer columns
  std::size_t r = rows, c = cols;
  std::vector<double> w;
  if (cols <= rows) {
    w = m;
  } else {
    r = cols;
    c = rows;
    w.resize(m.size());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) w[j * c + i] = m[i * cols + j];
    }
  }
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p < c; ++p) {
      for (std::size_t q = p + 1; q < c; ++q) {
        double app = 0, aqq = 0, apq = 0;
        for (std::size_t i = 0; i < r; ++i) {
          app += w[i * c + p] * w[i * c + p];
          aqq += w[i * c + q] * w[i * c + q];
          apq += w[i * c + p] * w[i * c + q];
        }
        if (std::fabs(apq) <= 1e-30 + 1e-18 * std::sqrt(app * aqq)) continue;
        rotated = true;
        double zeta = (aqq - app) / (2.0 * apq);
        double t = (zeta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        for (std::size_t i = 0; i < r; ++i) {
          double wp = w[i * c + p], wq = w[i * c + q];
          w[i * c + p] = cs * wp - sn * wq;
          w[i * c + q] = sn * wp + cs * wq;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sv(c);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += w[i * c + j] * w[i * c + j];
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

// Gram-Schmidt on a random square matrix; returns an orthogonal matrix.
inline std::vector<double> random_orthogonal(std::size_t n, slad::Rng& rng) {
  std::vector<double> q(n * n);
  for (double& v : q) v = rng.normal();
  for (std::size_t col = 0; col < n; ++col) {
    for (std::size_t prev = 0; prev < col; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += q[i * n + col] * q[i * n + prev];
      for (std::size_t i = 0; i < n; ++i) q[i * n + col] -= dot * q[i * n + prev];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q[i * n + col] * q[i * n + col];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q[i * n + col] /= norm;
  }
  return q;
}

}  // namespace testutil

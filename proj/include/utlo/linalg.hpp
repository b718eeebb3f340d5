#pragma once

#include <cmath>
#include <vector>

#include "utlo/common.hpp"

namespace utlo {

// Dense symmetric matrices in double, row-major; sizes here are metric
// feature dims (<= a few hundred), so cyclic Jacobi is plenty.

struct SymEig {
  std::vector<double> values;   // ascending-ish (unsorted Jacobi output)
  std::vector<double> vectors;  // column j = eigenvector of values[j]
};

inline SymEig sym_eig(const std::vector<double>& a_in, int n) {
  std::vector<double> a = a_in;
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  auto vt = [&](int i, int j) -> double& { return v[static_cast<size_t>(i) * n + j]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24 * n * n) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
  }
  SymEig out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = a[static_cast<size_t>(i) * n + i];
  out.vectors = std::move(v);
  return out;
}

inline std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                                   int n) {
  std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double av = a[static_cast<size_t>(i) * n + k];
      for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * n + j] += av * b[static_cast<size_t>(k) * n + j];
    }
  return c;
}

// Square root of a symmetric PSD matrix via eigendecomposition, negative
// eigenvalues clamped to zero.
inline std::vector<double> spd_sqrt(const std::vector<double>& a, int n) {
  auto eig = sym_eig(a, n);
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    const double lam = std::sqrt(std::max(0.0, eig.values[k]));
    if (lam == 0.0) continue;
    for (int i = 0; i < n; ++i) {
      const double vik = eig.vectors[static_cast<size_t>(i) * n + k] * lam;
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] += vik * eig.vectors[static_cast<size_t>(j) * n + k];
    }
  }
  return out;
}

inline double trace(const std::vector<double>& a, int n) {
  double t = 0.0;
  for (int i = 0; i < n; ++i) t += a[static_cast<size_t>(i) * n + i];
  return t;
}

inline void symmetrize(std::vector<double>& a, int n) {
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double m = 0.5 * (a[static_cast<size_t>(i) * n + j] + a[static_cast<size_t>(j) * n + i]);
      a[static_cast<size_t>(i) * n + j] = m;
      a[static_cast<size_t>(j) * n + i] = m;
    }
}

}  // namespace utlo

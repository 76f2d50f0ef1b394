#pragma once

// Reference implementations used to check the library. They work on plain
// std::vector<double> with scalar loops and share no code with sam_core.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

/// Lower Cholesky factor of a symmetric positive definite n x n matrix (row-major).
inline Vec cholesky(const Vec& a, int n) {
  Vec l(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      long double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) s -= static_cast<long double>(l[i * n + k]) * l[j * n + k];
      if (i == j) {
        if (s <= 0) throw std::runtime_error("matrix is not positive definite");
        l[i * n + i] = std::sqrt(static_cast<double>(s));
      } else {
        l[i * n + j] = static_cast<double>(s / l[j * n + j]);
      }
    }
  }
  return l;
}

/// x^T A^{-1} x through a forward solve with the Cholesky factor of A.
inline double inverse_quadratic(const Vec& chol, int n, const Vec& x) {
  Vec y(static_cast<std::size_t>(n));
  long double q = 0;
  for (int i = 0; i < n; ++i) {
    long double s = x[i];
    for (int k = 0; k < i; ++k) s -= static_cast<long double>(chol[i * n + k]) * y[k];
    y[i] = static_cast<double>(s / chol[i * n + i]);
    q += static_cast<long double>(y[i]) * y[i];
  }
  return static_cast<double>(q);
}

inline double quadratic(const Vec& a, int n, const Vec& x) {
  long double q = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) q += static_cast<long double>(x[i]) * a[i * n + j] * x[j];
  return static_cast<double>(q);
}

/// Gaussian prior over code rows: sum_n [ (c(w_n)-mu)^T M (c(w_n)-mu) + |w_n - w_0|^2 ],
/// where c is the leaky conversion with `slope` on negative entries and M is
/// (sigma + ridge I)^{-1}, or sigma itself when `literal` is set.
inline double gaussian_prior(const Vec& codes, int rows, int dim, const Vec& mu, const Vec& sigma, double ridge,
                             double slope, bool literal) {
  Vec reg = sigma;
  for (int i = 0; i < dim; ++i) reg[static_cast<std::size_t>(i) * dim + i] += ridge;
  const Vec chol = literal ? Vec{} : cholesky(reg, dim);
  long double total = 0;
  for (int r = 0; r < rows; ++r) {
    Vec centred(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
      const double w = codes[static_cast<std::size_t>(r) * dim + k];
      centred[k] = (w >= 0 ? w : slope * w) - mu[k];
    }
    total += literal ? quadratic(sigma, dim, centred) : inverse_quadratic(chol, dim, centred);
    for (int k = 0; k < dim; ++k) {
      const long double d = codes[static_cast<std::size_t>(r) * dim + k] - codes[k];
      total += d * d;
    }
  }
  return static_cast<double>(total);
}

inline double psnr(const Vec& x, const Vec& y, double peak) {
  long double se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (static_cast<long double>(x[i]) - y[i]) * (x[i] - y[i]);
  return 10.0 * std::log10(peak * peak / static_cast<double>(se / x.size()));
}

/// Central difference of f along coordinate i of x.
inline double central_difference(const std::function<double(const Vec&)>& f, Vec x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle

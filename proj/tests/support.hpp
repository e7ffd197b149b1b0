#pragma once

#include "rnnid/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace rnnid::testing {

// Relative error with an absolute floor so coordinates whose true gradient is
// near zero are judged on absolute agreement.
inline constexpr double kRelativeFloor = 1e-5;

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelativeFloor});
}

/// Central differences of `f` at `theta`, step h.
inline Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& theta, double h) {
  Vec g(theta.size());
  Vec t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    const double fp = f(t);
    t[i] = theta[i] - h;
    const double fm = f(t);
    t[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_relative_error(const Vec& a, const Vec& b) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) e = std::max(e, relative_error(a[i], b[i]));
  return e;
}

inline Mat random_matrix(Eigen::Index r, Eigen::Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = d(rng);
  return m;
}

inline Vec random_vector(Eigen::Index n, double lo, double hi, std::mt19937_64& rng) {
  return random_matrix(n, 1, lo, hi, rng);
}

}  // namespace rnnid::testing

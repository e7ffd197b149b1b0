#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace rnnid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Arguments are clamped to +-40 before exp; the effect on sigma is below
// 1e-17 and it keeps exp from overflowing.
inline constexpr double kGateClamp = 40.0;

inline double sigmoid(double a) {
  a = std::clamp(a, -kGateClamp, kGateClamp);
  return 1.0 / (1.0 + std::exp(-a));
}

inline double clamped_tanh(double a) {
  return std::tanh(std::clamp(a, -kGateClamp, kGateClamp));
}

inline void sigmoid_inplace(Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sigmoid(v[i]);
}

inline void tanh_inplace(Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = clamped_tanh(v[i]);
}

/// Result of a power iteration on A'A.
struct SpectralNorm {
  double value = 0.0;
  /// ||A'A v - lambda v|| / lambda at the last iteration, lambda = v'A'A v.
  /// Bounds the relative change of sigma between iterations.
  double residual = 0.0;
  int iterations = 0;
  /// Leading left/right singular vectors; d||A||_2 / dA = u v'.
  Vec u;
  Vec v;
};

/// Largest singular value by power iteration: stops after `max_iter`
/// iterations or when the residual drops below `tol`.
SpectralNorm spectral_norm(const Mat& a, int max_iter = 200, double tol = 1e-10);

/// Induced infinity norm (max absolute row sum) of the horizontal stack [W U b].
double stacked_inf_norm(const Mat& w, const Mat& u, const Vec& b);

/// Index of the row attaining the stacked infinity norm (first on ties).
Eigen::Index stacked_inf_norm_row(const Mat& w, const Mat& u, const Vec& b);

inline double inf_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

inline bool all_finite(const Mat& a) { return a.allFinite(); }

/// Element-wise sign with sign(0) = 0.
inline Mat sign_of(const Mat& a) {
  return a.unaryExpr([](double x) { return static_cast<double>((x > 0) - (x < 0)); });
}

}  // namespace rnnid

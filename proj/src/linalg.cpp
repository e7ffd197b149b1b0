#include "rnnid/linalg.hpp"

namespace rnnid {

SpectralNorm spectral_norm(const Mat& a, int max_iter, double tol) {
  SpectralNorm out;
  out.u = Vec::Zero(a.rows());
  out.v = Vec::Zero(a.cols());
  if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) return out;

  // Deterministic start that is not orthogonal to the leading singular vector
  // for any matrix with a nonzero column.
  Vec v(a.cols());
  for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = 1.0 + 0.1 * std::sin(1.0 + j);
  Eigen::Index best;
  a.colwise().norm().maxCoeff(&best);
  v[best] += 1.0;
  v.normalize();

  // Stop on the eigen-residual of A'A: a small change in sigma alone leaves the
  // singular vectors (and hence the norm gradient) accurate only to sqrt(tol).
  double sigma = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const Vec av = a * v;
    const Vec w = a.transpose() * av;
    const double lambda = v.dot(w);
    const double wn = w.norm();
    if (wn == 0.0 || lambda <= 0.0) break;
    out.iterations = it + 1;
    out.residual = (w - lambda * v).norm() / lambda;
    v = w / wn;
    sigma = (a * v).norm();
    if (out.residual < tol) break;
  }
  out.value = sigma;
  out.v = v;
  out.u = sigma > 0 ? Vec(a * v / sigma) : Vec::Zero(a.rows());
  return out;
}

double stacked_inf_norm(const Mat& w, const Mat& u, const Vec& b) {
  Vec rows = b.cwiseAbs();
  if (w.size() > 0) rows += w.cwiseAbs().rowwise().sum();
  if (u.size() > 0) rows += u.cwiseAbs().rowwise().sum();
  return rows.size() ? rows.maxCoeff() : 0.0;
}

Eigen::Index stacked_inf_norm_row(const Mat& w, const Mat& u, const Vec& b) {
  Vec rows = b.cwiseAbs();
  if (w.size() > 0) rows += w.cwiseAbs().rowwise().sum();
  if (u.size() > 0) rows += u.cwiseAbs().rowwise().sum();
  Eigen::Index r = 0;
  if (rows.size()) rows.maxCoeff(&r);
  return r;
}

}  // namespace rnnid

#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace mpgd {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Largest singular value. Power iteration on M^T M (deterministic start),
/// falling back to a dense SVD if the Rayleigh quotient has not settled.
inline double spectral_norm(const Eigen::MatrixXd& m, int max_iter = 100, double tol = 1e-10) {
  if (m.size() == 0) return 0.0;
  const Eigen::Index n = m.cols();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = m.transpose() * (m * v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    w /= norm;
    const double next = w.dot(m.transpose() * (m * w));
    if (it > 0 && std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) {
      return std::sqrt(std::max(0.0, next));
    }
    lambda = next;
    v = w;
  }
  // Dense fallback; intended for desk-scale d <= 256 problems.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()[0];
}

inline double relative_error(double got, double want, double floor = 1e-8) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

}  // namespace mpgd

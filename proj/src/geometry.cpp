#include "mpgd/geometry.hpp"

#include <Eigen/QR>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "mpgd/rng.hpp"

namespace mpgd {

namespace {

void check_finite(const Eigen::VectorXd& x, const char* what) {
  if (!x.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace

LinearManifold::LinearManifold(int ambient_dim, int latent_dim, Eigen::MatrixXd basis)
    : d_(ambient_dim), k_(latent_dim), basis_(std::move(basis)) {
  if (k_ <= 0 || k_ >= d_) throw std::invalid_argument("LinearManifold: need 1 <= k < d");
  if (basis_.rows() != d_ || basis_.cols() != k_)
    throw std::invalid_argument("LinearManifold: basis shape mismatch");
  const Eigen::MatrixXd gram = basis_.transpose() * basis_;
  const double dev = (gram - Eigen::MatrixXd::Identity(k_, k_)).cwiseAbs().maxCoeff();
  if (dev >= 1e-12) throw std::invalid_argument("LinearManifold: basis not orthonormal");
}

ShellSpec ShellSpec::from_noise_level(double alpha_bar, int d, int k, double band_epsilon) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0))
    throw std::invalid_argument("ShellSpec: alpha_bar must be in (0,1)");
  if (!(band_epsilon > 0.0 && band_epsilon <= 1.0))
    throw std::invalid_argument("ShellSpec: band_epsilon must be in (0,1]");
  return ShellSpec{std::sqrt(alpha_bar), shell_radius(alpha_bar, d, k), band_epsilon};
}

LinearManifold make_manifold(int d, int k, std::uint64_t seed) {
  if (k <= 0 || k >= d) throw std::invalid_argument("make_manifold: need 1 <= k < d");
  Rng rng(seed);
  const Eigen::MatrixXd g = rng.normal_matrix(d, k);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
  // Sign convention: first entry of each column with |entry| > 1e-12 positive.
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) {
      if (std::abs(q(i, j)) > 1e-12) {
        if (q(i, j) < 0) q.col(j) = -q.col(j);
        break;
      }
    }
  }
  return LinearManifold(d, k, std::move(q));
}

double off_manifold_distance(const Eigen::VectorXd& x, double nu, const LinearManifold& m) {
  check_finite(x, "off_manifold_distance");
  if (!(nu > 0.0)) throw std::invalid_argument("off_manifold_distance: nu must be > 0");
  if (x.size() != m.ambient_dim())
    throw std::invalid_argument("off_manifold_distance: dimension mismatch");
  // nu * M = M for a subspace, so the distance is the orthogonal norm.
  return m.orthogonal_part(x).norm();
}

double shell_radius(double alpha_bar, int d, int k) {
  return std::sqrt((1.0 - alpha_bar) * static_cast<double>(d - k));
}

double concentration_epsilon(double delta, int dof) {
  if (!(delta > 0.0 && delta <= 1.0))
    throw std::invalid_argument("concentration_epsilon: delta must be in (0,1]");
  if (dof < 1) throw std::invalid_argument("concentration_epsilon: dof must be >= 1");
  const double eps_prime = -std::log(delta / 2.0) / static_cast<double>(dof);
  const double root = std::sqrt(eps_prime);
  const double lower = 1.0 - std::sqrt(std::max(0.0, 1.0 - 2.0 * root));
  const double upper = std::sqrt(1.0 + 2.0 * root + 2.0 * eps_prime) - 1.0;
  return std::min(lower, upper);
}

bool shell_band_test(const Eigen::VectorXd& x_t, const LinearManifold& m, double alpha_bar_t,
                     double epsilon) {
  if (!(alpha_bar_t > 0.0 && alpha_bar_t < 1.0))
    throw std::invalid_argument("shell_band_test: alpha_bar_t must be in (0,1)");
  const double r_t = shell_radius(alpha_bar_t, m.ambient_dim(), m.latent_dim());
  const double dist = off_manifold_distance(x_t, std::sqrt(alpha_bar_t), m);
  return std::abs(dist - r_t) < epsilon * r_t;
}

nlohmann::json manifold_to_json(const LinearManifold& m) {
  nlohmann::json j;
  j["d"] = m.ambient_dim();
  j["k"] = m.latent_dim();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.ambient_dim()) * m.latent_dim());
  for (int i = 0; i < m.ambient_dim(); ++i)
    for (int c = 0; c < m.latent_dim(); ++c) flat.push_back(m.basis()(i, c));
  j["basis"] = flat;
  return j;
}

LinearManifold manifold_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  const int k = j.at("k").get<int>();
  const auto flat = j.at("basis").get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(d) * static_cast<std::size_t>(k))
    throw std::invalid_argument("manifold_from_json: basis length mismatch");
  Eigen::MatrixXd basis(d, k);
  for (int i = 0; i < d; ++i)
    for (int c = 0; c < k; ++c) basis(i, c) = flat[static_cast<std::size_t>(i) * k + c];
  return LinearManifold(d, k, std::move(basis));
}

}  // namespace mpgd

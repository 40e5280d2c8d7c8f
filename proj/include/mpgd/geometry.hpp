#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>

namespace mpgd {

/// A k-dimensional linear subspace of R^d through the origin, held as an
/// orthonormal basis U (d x k). The tangent space at every point is span(U),
/// with projector P = U U^T.
///
/// Construction validates: 1 <= k < d and ||U^T U - I||_max < 1e-12.
class LinearManifold {
 public:
  LinearManifold(int ambient_dim, int latent_dim, Eigen::MatrixXd basis);

  int ambient_dim() const { return d_; }
  int latent_dim() const { return k_; }
  const Eigen::MatrixXd& basis() const { return basis_; }

  /// P x = U U^T x, applied without forming the d x d projector.
  Eigen::VectorXd project_tangent(const Eigen::VectorXd& x) const {
    return basis_ * (basis_.transpose() * x);
  }
  Eigen::VectorXd orthogonal_part(const Eigen::VectorXd& x) const {
    return x - project_tangent(x);
  }
  Eigen::VectorXd to_latent(const Eigen::VectorXd& x) const { return basis_.transpose() * x; }
  Eigen::VectorXd from_latent(const Eigen::VectorXd& z) const { return basis_ * z; }

 private:
  int d_;
  int k_;
  Eigen::MatrixXd basis_;
};

/// The shell around nu * M on which noisy samples concentrate:
/// points at orthogonal radius `radius` = sqrt((1-abar)(d-k)), with the
/// admissible band |dist - radius| < band_epsilon * radius.
struct ShellSpec {
  double nu;            // sqrt(alpha_bar)
  double radius;        // sqrt((1 - alpha_bar) (d - k))
  double band_epsilon;  // in (0, 1]

  static ShellSpec from_noise_level(double alpha_bar, int d, int k, double band_epsilon);
};

/// Random orthonormal basis: QR of a seeded Gaussian matrix, each column
/// sign-fixed so its first entry with magnitude > 1e-12 is positive.
/// Deterministic given (d, k, seed). Rejects k <= 0 or k >= d.
LinearManifold make_manifold(int d, int k, std::uint64_t seed);

/// inf over x' in M of ||x - nu x'||_2. For a subspace this is the norm of
/// the orthogonal component and does not depend on nu; nu is validated
/// (> 0) to keep the scaled-manifold call signature.
double off_manifold_distance(const Eigen::VectorXd& x, double nu, const LinearManifold& m);

/// Shell radius sqrt((1 - alpha_bar)(d - k)).
double shell_radius(double alpha_bar, int d, int k);

/// Band half-width fraction eps_{delta, dof} from the chi-square
/// concentration bound:
///   eps' = -log(delta/2) / dof
///   eps  = min{ 1 - sqrt(max(0, 1 - 2 sqrt(eps'))),
///               sqrt(1 + 2 sqrt(eps') + 2 eps') - 1 }
/// Monotone nonincreasing in delta and dof. Requires delta in (0, 1].
double concentration_epsilon(double delta, int dof);

/// True iff |d(x_t, sqrt(abar), M) - r_t| < epsilon * r_t with
/// r_t = shell_radius(abar, d, k). Requires 0 < abar < 1.
bool shell_band_test(const Eigen::VectorXd& x_t, const LinearManifold& m, double alpha_bar_t,
                     double epsilon);

/// JSON document {d, k, basis} with the basis in row-major order.
/// Round-trips exactly (shortest-round-trip decimal encoding).
nlohmann::json manifold_to_json(const LinearManifold& m);
LinearManifold manifold_from_json(const nlohmann::json& j);

}  // namespace mpgd

#pragma once

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "mpgd/geometry.hpp"
#include "mpgd/rng.hpp"

namespace mpgd {

/// Exact Gaussian posterior used as an oracle for guided-sampler acceptance.
struct GaussianPosterior {
  Eigen::VectorXd mean;        // ambient, length d
  Eigen::MatrixXd covariance;  // d x d, symmetric PSD
};

/// Gaussian mixture supported on a linear-subspace manifold, with closed-form
/// noisy marginals p_t, the optimal denoiser, and its Jacobian.
///
/// Components are stored with ambient means and k x k latent covariances
/// Sigma_i (covariance U Sigma_i U^T in ambient space). The standard
/// constructor places means on the manifold; `with_ambient_means` admits
/// controlled off-manifold means, and `ortho_var` adds isotropic variance on
/// the orthogonal complement, for perturbation studies.
class MixturePrior {
 public:
  /// On-manifold mixture: ambient means are U * latent_means[i].
  MixturePrior(LinearManifold manifold, Eigen::VectorXd weights,
               std::vector<Eigen::VectorXd> latent_means,
               std::vector<Eigen::MatrixXd> latent_covs);

  /// Mixture with explicitly given ambient means (may sit off the manifold)
  /// and optional orthogonal thickness.
  static MixturePrior with_ambient_means(LinearManifold manifold, Eigen::VectorXd weights,
                                         std::vector<Eigen::VectorXd> ambient_means,
                                         std::vector<Eigen::MatrixXd> latent_covs,
                                         double ortho_var = 0.0);

  /// Full-rank mixture over R^k (identity basis); the denoiser for latent
  /// diffusion runs.
  static MixturePrior latent_space(Eigen::VectorXd weights,
                                   std::vector<Eigen::VectorXd> means,
                                   std::vector<Eigen::MatrixXd> covs);

  int ambient_dim() const { return d_; }
  int latent_dim() const { return k_; }
  int components() const { return static_cast<int>(weights_.size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const std::vector<Eigen::VectorXd>& ambient_means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& latent_covs() const { return covs_; }
  double ortho_var() const { return ortho_var_; }
  bool has_manifold() const { return k_ < d_; }

  Eigen::VectorXd sample(Rng& rng) const;
  /// n samples as rows.
  Eigen::MatrixXd sample(int n, Rng& rng) const;

  /// log p_t(x_t) with p_t = sum_i w_i N(sqrt(abar) m_i, abar C_i + (1-abar) I),
  /// log-sum-exp stabilized. Requires 0 < abar <= 1; abar = 1 needs a
  /// nondegenerate ambient covariance (k = d with strictly PD components).
  double noisy_log_density(double alpha_bar, const Eigen::VectorXd& x_t) const;

  /// eps*(x_t, t) = -sqrt(1-abar) grad log p_t(x_t). Requires 0 < abar < 1.
  Eigen::VectorXd optimal_denoiser(double alpha_bar, const Eigen::VectorXd& x_t) const;

  /// d eps*/d x_t = -sqrt(1-abar) * Hessian(log p_t); symmetric.
  Eigen::MatrixXd denoiser_jacobian(double alpha_bar, const Eigen::VectorXd& x_t) const;

  /// Orthogonal norm of the Tweedie estimate built from the optimal denoiser;
  /// certifies that the posterior mean stays on the manifold.
  double tweedie_on_manifold_check(double alpha_bar, const Eigen::VectorXd& x_t) const;

 private:
  MixturePrior() = default;
  void validate_and_finalize();

  int d_ = 0;
  int k_ = 0;
  Eigen::MatrixXd basis_;  // d x k, orthonormal columns (identity when k == d)
  Eigen::VectorXd weights_;
  std::vector<Eigen::VectorXd> means_;  // ambient
  std::vector<Eigen::MatrixXd> covs_;   // latent k x k, symmetric PSD
  std::vector<Eigen::MatrixXd> cov_sqrts_;
  double ortho_var_ = 0.0;
};

/// Conjugate-Gaussian posterior of x given y = A x + z, z ~ N(0, noise_var I),
/// for a single-component on-manifold prior. Solved in latent coordinates and
/// embedded, so the posterior support stays on the manifold. Rejects
/// multi-component or off-manifold priors.
GaussianPosterior exact_linear_posterior(const MixturePrior& prior, const Eigen::MatrixXd& a,
                                         const Eigen::VectorXd& y, double noise_var);

/// {weights, latent_means, latent_covs, (ambient offsets and thickness when
/// present)} next to a serialized manifold.
nlohmann::json prior_to_json(const MixturePrior& prior);
MixturePrior prior_from_json(const nlohmann::json& j);

}  // namespace mpgd

#include "mpgd/prior.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

namespace mpgd {

namespace {

constexpr double kJitter = 1e-12;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal();
}

/// Cholesky with a single jitter retry; the covariances here are k x k.
Eigen::LLT<Eigen::MatrixXd> safe_llt(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  llt.compute(m + kJitter * Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("MixturePrior: component covariance not PD at this noise level");
  return llt;
}

struct ComponentEval {
  double log_density;      // log w_i + log N_i(x_t)
  Eigen::VectorXd grad;    // grad_x log N_i(x_t)
  Eigen::VectorXd k_solve; // (abar B_i + c I)^{-1} u_tilde, reused by the Jacobian
};

}  // namespace

MixturePrior::MixturePrior(LinearManifold manifold, Eigen::VectorXd weights,
                           std::vector<Eigen::VectorXd> latent_means,
                           std::vector<Eigen::MatrixXd> latent_covs) {
  d_ = manifold.ambient_dim();
  k_ = manifold.latent_dim();
  basis_ = manifold.basis();
  weights_ = std::move(weights);
  covs_ = std::move(latent_covs);
  means_.reserve(latent_means.size());
  for (const auto& mu : latent_means) {
    if (mu.size() != k_) throw std::invalid_argument("MixturePrior: latent mean size mismatch");
    means_.push_back(basis_ * mu);
  }
  validate_and_finalize();
}

MixturePrior MixturePrior::with_ambient_means(LinearManifold manifold, Eigen::VectorXd weights,
                                              std::vector<Eigen::VectorXd> ambient_means,
                                              std::vector<Eigen::MatrixXd> latent_covs,
                                              double ortho_var) {
  MixturePrior p;
  p.d_ = manifold.ambient_dim();
  p.k_ = manifold.latent_dim();
  p.basis_ = manifold.basis();
  p.weights_ = std::move(weights);
  p.means_ = std::move(ambient_means);
  p.covs_ = std::move(latent_covs);
  p.ortho_var_ = ortho_var;
  if (ortho_var < 0.0) throw std::invalid_argument("MixturePrior: ortho_var must be >= 0");
  p.validate_and_finalize();
  return p;
}

MixturePrior MixturePrior::latent_space(Eigen::VectorXd weights,
                                        std::vector<Eigen::VectorXd> means,
                                        std::vector<Eigen::MatrixXd> covs) {
  MixturePrior p;
  if (means.empty()) throw std::invalid_argument("MixturePrior: no components");
  p.k_ = static_cast<int>(means.front().size());
  p.d_ = p.k_;
  p.basis_ = Eigen::MatrixXd::Identity(p.k_, p.k_);
  p.weights_ = std::move(weights);
  p.means_ = std::move(means);
  p.covs_ = std::move(covs);
  p.validate_and_finalize();
  return p;
}

void MixturePrior::validate_and_finalize() {
  const auto m = weights_.size();
  if (m == 0) throw std::invalid_argument("MixturePrior: no components");
  if (means_.size() != static_cast<std::size_t>(m) || covs_.size() != static_cast<std::size_t>(m))
    throw std::invalid_argument("MixturePrior: component count mismatch");
  if (weights_.minCoeff() < 0.0) throw std::invalid_argument("MixturePrior: negative weight");
  if (std::abs(weights_.sum() - 1.0) >= 1e-12)
    throw std::invalid_argument("MixturePrior: weights must sum to 1");
  cov_sqrts_.clear();
  for (const auto& cov : covs_) {
    if (cov.rows() != k_ || cov.cols() != k_)
      throw std::invalid_argument("MixturePrior: covariance shape mismatch");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() >= 1e-12)
      throw std::invalid_argument("MixturePrior: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() < -1e-12)
      throw std::invalid_argument("MixturePrior: covariance not PSD");
    cov_sqrts_.push_back(psd_sqrt(cov));
  }
  for (const auto& mean : means_) {
    if (mean.size() != d_) throw std::invalid_argument("MixturePrior: mean size mismatch");
  }
  if (k_ == d_ && ortho_var_ != 0.0)
    throw std::invalid_argument("MixturePrior: ortho_var needs k < d");
}

Eigen::VectorXd MixturePrior::sample(Rng& rng) const {
  const int comp = rng.categorical(weights_);
  Eigen::VectorXd x = means_[comp] + basis_ * (cov_sqrts_[comp] * rng.normal_vector(k_));
  if (ortho_var_ > 0.0) {
    Eigen::VectorXd e = rng.normal_vector(d_);
    e -= basis_ * (basis_.transpose() * e);
    x += std::sqrt(ortho_var_) * e;
  }
  return x;
}

Eigen::MatrixXd MixturePrior::sample(int n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("MixturePrior::sample: n must be >= 1");
  Eigen::MatrixXd out(n, d_);
  for (int i = 0; i < n; ++i) out.row(i) = sample(rng).transpose();
  return out;
}

namespace {

/// Shared per-component evaluation of the noisy mixture at level abar.
/// Marginal covariance: C_i = abar (U B_i U^T + ov (I-P)) + (1-abar) I,
/// i.e. U (abar B_i + c I) U^T on the tangent block and (abar ov + c) I on
/// the orthogonal block.
std::vector<ComponentEval> evaluate_components(const Eigen::MatrixXd& basis,
                                               const Eigen::VectorXd& weights,
                                               const std::vector<Eigen::VectorXd>& means,
                                               const std::vector<Eigen::MatrixXd>& covs,
                                               double ortho_var, double alpha_bar,
                                               const Eigen::VectorXd& x_t) {
  const int d = static_cast<int>(basis.rows());
  const int k = static_cast<int>(basis.cols());
  const double c = 1.0 - alpha_bar;
  const double o = alpha_bar * ortho_var + c;  // orthogonal-block eigenvalue
  const double root_ab = std::sqrt(alpha_bar);
  const double log2pi = std::log(2.0 * std::numbers::pi);

  if (k < d && !(o > 0.0))
    throw std::invalid_argument("MixturePrior: degenerate ambient covariance at alpha_bar = 1");

  std::vector<ComponentEval> evals;
  evals.reserve(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    const Eigen::MatrixXd kmat =
        alpha_bar * covs[i] + c * Eigen::MatrixXd::Identity(k, k);
    auto llt = safe_llt(kmat);
    const Eigen::VectorXd v = x_t - root_ab * means[i];
    const Eigen::VectorXd u = basis.transpose() * v;
    const Eigen::VectorXd solve = llt.solve(u);
    const Eigen::VectorXd v_orth = v - basis * u;
    double log_det = (d - k) * std::log(o);
    for (int r = 0; r < k; ++r) log_det += 2.0 * std::log(llt.matrixL()(r, r));
    const double quad = u.dot(solve) + (k < d ? v_orth.squaredNorm() / o : 0.0);
    ComponentEval e;
    e.log_density = std::log(weights[static_cast<Eigen::Index>(i)]) -
                    0.5 * (quad + log_det + d * log2pi);
    e.grad = -(basis * solve + (k < d ? (v_orth / o).eval() : Eigen::VectorXd::Zero(d).eval()));
    e.k_solve = solve;
    evals.push_back(std::move(e));
  }
  return evals;
}

double log_sum_exp(const std::vector<ComponentEval>& evals, std::vector<double>* resp) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& e : evals) mx = std::max(mx, e.log_density);
  double sum = 0.0;
  for (const auto& e : evals) sum += std::exp(e.log_density - mx);
  if (resp) {
    resp->clear();
    for (const auto& e : evals) resp->push_back(std::exp(e.log_density - mx) / sum);
  }
  return mx + std::log(sum);
}

}  // namespace

double MixturePrior::noisy_log_density(double alpha_bar, const Eigen::VectorXd& x_t) const {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0))
    throw std::invalid_argument("noisy_log_density: alpha_bar must be in (0,1]");
  if (x_t.size() != d_) throw std::invalid_argument("noisy_log_density: dimension mismatch");
  if (alpha_bar == 1.0 && k_ < d_)
    throw std::invalid_argument("noisy_log_density: density degenerate at alpha_bar = 1");
  const auto evals =
      evaluate_components(basis_, weights_, means_, covs_, ortho_var_, alpha_bar, x_t);
  return log_sum_exp(evals, nullptr);
}

Eigen::VectorXd MixturePrior::optimal_denoiser(double alpha_bar, const Eigen::VectorXd& x_t) const {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0))
    throw std::invalid_argument("optimal_denoiser: alpha_bar must be in (0,1)");
  if (x_t.size() != d_) throw std::invalid_argument("optimal_denoiser: dimension mismatch");
  const auto evals =
      evaluate_components(basis_, weights_, means_, covs_, ortho_var_, alpha_bar, x_t);
  std::vector<double> resp;
  log_sum_exp(evals, &resp);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(d_);
  for (std::size_t i = 0; i < evals.size(); ++i) score += resp[i] * evals[i].grad;
  return -std::sqrt(1.0 - alpha_bar) * score;
}

Eigen::MatrixXd MixturePrior::denoiser_jacobian(double alpha_bar,
                                                const Eigen::VectorXd& x_t) const {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0))
    throw std::invalid_argument("denoiser_jacobian: alpha_bar must be in (0,1)");
  if (x_t.size() != d_) throw std::invalid_argument("denoiser_jacobian: dimension mismatch");
  const double c = 1.0 - alpha_bar;
  const double o = alpha_bar * ortho_var_ + c;
  const auto evals =
      evaluate_components(basis_, weights_, means_, covs_, ortho_var_, alpha_bar, x_t);
  std::vector<double> resp;
  log_sum_exp(evals, &resp);

  // Hessian of log p_t: sum_i r_i (-C_i^{-1} + g_i g_i^T) - g_bar g_bar^T,
  // with C_i^{-1} = U (abar B_i + c I)^{-1} U^T + (1/o)(I - P).
  Eigen::MatrixXd k_mix = Eigen::MatrixXd::Zero(k_, k_);
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const Eigen::MatrixXd kmat =
        alpha_bar * covs_[i] + c * Eigen::MatrixXd::Identity(k_, k_);
    k_mix += resp[i] * safe_llt(kmat).solve(Eigen::MatrixXd::Identity(k_, k_));
  }
  Eigen::MatrixXd hess = -(basis_ * k_mix * basis_.transpose());
  if (k_ < d_) {
    hess -= (Eigen::MatrixXd::Identity(d_, d_) - basis_ * basis_.transpose()) / o;
  }
  Eigen::VectorXd g_bar = Eigen::VectorXd::Zero(d_);
  for (std::size_t i = 0; i < evals.size(); ++i) {
    hess += resp[i] * evals[i].grad * evals[i].grad.transpose();
    g_bar += resp[i] * evals[i].grad;
  }
  hess -= g_bar * g_bar.transpose();
  return -std::sqrt(c) * hess;
}

double MixturePrior::tweedie_on_manifold_check(double alpha_bar,
                                               const Eigen::VectorXd& x_t) const {
  const Eigen::VectorXd eps = optimal_denoiser(alpha_bar, x_t);
  const Eigen::VectorXd x0 =
      (x_t - std::sqrt(1.0 - alpha_bar) * eps) / std::sqrt(alpha_bar);
  return (x0 - basis_ * (basis_.transpose() * x0)).norm();
}

GaussianPosterior exact_linear_posterior(const MixturePrior& prior, const Eigen::MatrixXd& a,
                                         const Eigen::VectorXd& y, double noise_var) {
  if (prior.components() != 1)
    throw std::invalid_argument("exact_linear_posterior: prior must have exactly one component");
  if (!(noise_var > 0.0))
    throw std::invalid_argument("exact_linear_posterior: noise_var must be > 0");
  if (a.cols() != prior.ambient_dim() || a.rows() != y.size())
    throw std::invalid_argument("exact_linear_posterior: measurement shape mismatch");
  if (prior.ortho_var() != 0.0)
    throw std::invalid_argument("exact_linear_posterior: prior must be supported on the manifold");
  const Eigen::MatrixXd& basis = prior.basis();
  const Eigen::VectorXd& mean_amb = prior.ambient_means()[0];
  if ((mean_amb - basis * (basis.transpose() * mean_amb)).norm() > 1e-9)
    throw std::invalid_argument("exact_linear_posterior: prior mean is off the manifold");

  // Latent conjugate update: z ~ N(mu, Sigma), y = (A U) z + noise.
  const Eigen::VectorXd mu = basis.transpose() * mean_amb;
  const Eigen::MatrixXd& sigma = prior.latent_covs()[0];
  const Eigen::MatrixXd a_lat = a * basis;  // m x k
  const Eigen::MatrixXd gram =
      a_lat * sigma * a_lat.transpose() +
      noise_var * Eigen::MatrixXd::Identity(y.size(), y.size());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("exact_linear_posterior: measurement covariance solve failed");
  const Eigen::VectorXd innovation = y - a_lat * mu;
  const Eigen::VectorXd mean_lat = mu + sigma * a_lat.transpose() * ldlt.solve(innovation);
  Eigen::MatrixXd cov_lat =
      sigma - sigma * a_lat.transpose() * ldlt.solve(a_lat * sigma);
  cov_lat = 0.5 * (cov_lat + cov_lat.transpose());

  GaussianPosterior post;
  post.mean = basis * mean_lat;
  post.covariance = basis * cov_lat * basis.transpose();
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
  return post;
}

nlohmann::json prior_to_json(const MixturePrior& prior) {
  nlohmann::json j;
  j["manifold"] = manifold_to_json(LinearManifold(
      prior.ambient_dim(), prior.latent_dim(), prior.basis()));
  j["weights"] = std::vector<double>(prior.weights().data(),
                                     prior.weights().data() + prior.weights().size());
  auto latent_means = nlohmann::json::array();
  auto ambient_offsets = nlohmann::json::array();
  bool any_offset = false;
  for (const auto& mean : prior.ambient_means()) {
    const Eigen::VectorXd lat = prior.basis().transpose() * mean;
    const Eigen::VectorXd off = mean - prior.basis() * lat;
    latent_means.push_back(std::vector<double>(lat.data(), lat.data() + lat.size()));
    ambient_offsets.push_back(std::vector<double>(off.data(), off.data() + off.size()));
    if (off.norm() > 0.0) any_offset = true;
  }
  j["latent_means"] = latent_means;
  auto covs = nlohmann::json::array();
  for (const auto& cov : prior.latent_covs()) {
    std::vector<double> flat(cov.data(), cov.data() + cov.size());
    covs.push_back(flat);
  }
  j["latent_covs"] = covs;
  if (any_offset) j["ambient_offsets"] = ambient_offsets;
  if (prior.ortho_var() != 0.0) j["ortho_var"] = prior.ortho_var();
  return j;
}

MixturePrior prior_from_json(const nlohmann::json& j) {
  LinearManifold manifold = manifold_from_json(j.at("manifold"));
  const auto w = j.at("weights").get<std::vector<double>>();
  Eigen::VectorXd weights = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
  const int k = manifold.latent_dim();
  std::vector<Eigen::VectorXd> latent_means;
  for (const auto& item : j.at("latent_means")) {
    const auto v = item.get<std::vector<double>>();
    latent_means.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
  }
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& item : j.at("latent_covs")) {
    const auto v = item.get<std::vector<double>>();
    covs.push_back(Eigen::Map<const Eigen::MatrixXd>(v.data(), k, k));
  }
  if (j.contains("ambient_offsets")) {
    std::vector<Eigen::VectorXd> ambient;
    std::size_t idx = 0;
    for (const auto& item : j.at("ambient_offsets")) {
      const auto v = item.get<std::vector<double>>();
      Eigen::VectorXd off = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
      ambient.push_back(manifold.from_latent(latent_means[idx]) + off);
      ++idx;
    }
    return MixturePrior::with_ambient_means(std::move(manifold), std::move(weights),
                                            std::move(ambient), std::move(covs),
                                            j.value("ortho_var", 0.0));
  }
  return MixturePrior(std::move(manifold), std::move(weights), std::move(latent_means),
                      std::move(covs));
}

}  // namespace mpgd

#include "mpgd/autoencoder.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "mpgd/numerics.hpp"
#include "mpgd/rng.hpp"

namespace mpgd {

AutoencoderPair perfect_linear_autoencoder(const LinearManifold& m) {
  auto basis = std::make_shared<Eigen::MatrixXd>(m.basis());
  AutoencoderPair pair;
  pair.kind = AutoencoderPair::Kind::PerfectLinear;
  pair.ambient_dim = m.ambient_dim();
  pair.latent_dim = m.latent_dim();
  pair.encode = [basis](const Eigen::VectorXd& x) { return (basis->transpose() * x).eval(); };
  pair.decode = [basis](const Eigen::VectorXd& z) { return (*basis * z).eval(); };
  pair.encode_jacobian = [basis](const Eigen::VectorXd&) {
    return basis->transpose().eval();
  };
  pair.decode_jacobian = [basis](const Eigen::VectorXd&) { return *basis; };
  return pair;
}

namespace {

/// Smooth bounded decoder defect phi(z) = W2 tanh(W1 z + b), with W2 scaled
/// so ||phi(z)|| <= 1 for every z. Hidden width fixed at 32.
struct TanhBump {
  Eigen::MatrixXd w1;  // h x k
  Eigen::VectorXd b;   // h
  Eigen::MatrixXd w2;  // d x h

  Eigen::VectorXd value(const Eigen::VectorXd& z) const {
    return w2 * (w1 * z + b).array().tanh().matrix();
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const {
    const Eigen::ArrayXd th = (w1 * z + b).array().tanh();
    return w2 * (1.0 - th.square()).matrix().asDiagonal() * w1;
  }
};

}  // namespace

AutoencoderPair perturbed_autoencoder(const LinearManifold& m, double scale, std::uint64_t seed) {
  if (scale < 0.0) throw std::invalid_argument("perturbed_autoencoder: scale must be >= 0");
  constexpr int kHidden = 32;
  Rng rng(seed);
  auto bump = std::make_shared<TanhBump>();
  bump->w1 = rng.normal_matrix(kHidden, m.latent_dim()) / std::sqrt(double(m.latent_dim()));
  bump->b = rng.normal_vector(kHidden);
  Eigen::MatrixXd w2 = rng.normal_matrix(m.ambient_dim(), kHidden);
  // ||W2 tanh(.)|| <= ||W2||_2 sqrt(h); normalize so the defect norm is <= 1.
  bump->w2 = w2 / (spectral_norm(w2) * std::sqrt(double(kHidden)));

  auto basis = std::make_shared<Eigen::MatrixXd>(m.basis());
  AutoencoderPair pair;
  pair.kind = AutoencoderPair::Kind::Perturbed;
  pair.ambient_dim = m.ambient_dim();
  pair.latent_dim = m.latent_dim();
  pair.perturbation_scale = scale;
  pair.encode = [basis](const Eigen::VectorXd& x) { return (basis->transpose() * x).eval(); };
  pair.decode = [basis, bump, scale](const Eigen::VectorXd& z) {
    return (*basis * z + scale * bump->value(z)).eval();
  };
  pair.encode_jacobian = [basis](const Eigen::VectorXd&) {
    return basis->transpose().eval();
  };
  pair.decode_jacobian = [basis, bump, scale](const Eigen::VectorXd& z) {
    return (*basis + scale * bump->jacobian(z)).eval();
  };
  return pair;
}

Eigen::VectorXd projected_gradient(
    const AutoencoderPair& pair, const Eigen::VectorXd& x0,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& loss_gradient) {
  const Eigen::VectorXd z = pair.encode(x0);
  const Eigen::VectorXd recon = pair.decode(z);
  const Eigen::VectorXd g = loss_gradient(recon);
  if (!g.allFinite()) throw NumericalError("projected_gradient: non-finite loss gradient");
  return pair.encode_jacobian(x0).transpose() * (pair.decode_jacobian(z).transpose() * g);
}

std::pair<double, double> jacobian_identity_report(const AutoencoderPair& pair,
                                                   const Eigen::VectorXd& x0) {
  const Eigen::VectorXd z = pair.encode(x0);
  const Eigen::MatrixXd je = pair.encode_jacobian(x0);  // k x d
  const Eigen::MatrixXd jd = pair.decode_jacobian(z);   // d x k
  const int k = pair.latent_dim;
  const double identity_residual =
      (je * jd - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();

  // Largest principal angle between range(J_E^T) and range(J_D). The cosine
  // route loses half the precision near zero angle, so small angles switch to
  // the sine formulation (Bjorck-Golub).
  Eigen::HouseholderQR<Eigen::MatrixXd> qe(je.transpose());
  Eigen::HouseholderQR<Eigen::MatrixXd> qd(jd);
  const Eigen::MatrixXd q1 =
      qe.householderQ() * Eigen::MatrixXd::Identity(pair.ambient_dim, k);
  const Eigen::MatrixXd q2 =
      qd.householderQ() * Eigen::MatrixXd::Identity(pair.ambient_dim, k);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q1.transpose() * q2);
  const double cos_min = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  double angle = std::acos(cos_min);
  if (cos_min * cos_min > 0.5) {
    const Eigen::MatrixXd residual = q2 - q1 * (q1.transpose() * q2);
    Eigen::JacobiSVD<Eigen::MatrixXd> sine_svd(residual);
    angle = std::asin(std::clamp(sine_svd.singularValues().maxCoeff(), 0.0, 1.0));
  }
  return {identity_residual, angle};
}

}  // namespace mpgd

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <utility>

#include "mpgd/geometry.hpp"

namespace mpgd {

/// Encoder/decoder pair with Jacobians.
///
/// The perfect-linear pair is (E, D) = (U^T, U): zero reconstruction error on
/// the manifold and E o D = id on R^k. The perturbed family adds a smooth
/// bounded defect to the decoder only, so the encoder stays linear and the
/// reconstruction degradation is governed by one scale parameter.
struct AutoencoderPair {
  enum class Kind { PerfectLinear, Perturbed };

  Kind kind = Kind::PerfectLinear;
  int ambient_dim = 0;
  int latent_dim = 0;
  double perturbation_scale = 0.0;

  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> encode;           // d -> k
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> decode;           // k -> d
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> encode_jacobian;  // k x d at x
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> decode_jacobian;  // d x k at z

  /// ||D(E(x)) - x|| <= kReconstructionBound * perturbation_scale for
  /// on-manifold x (the decoder defect is spectrally normalized to 1).
  static constexpr double kReconstructionBound = 1.0;
};

AutoencoderPair perfect_linear_autoencoder(const LinearManifold& m);

/// Decoder D(z) = U z + scale * phi(z) with phi a one-layer tanh bump,
/// ||phi|| <= 1 everywhere. scale = 0 reduces to the perfect pair.
AutoencoderPair perturbed_autoencoder(const LinearManifold& m, double scale, std::uint64_t seed);

/// grad_x L(D(E(x))) = J_E^T J_D^T grad L evaluated at the reconstruction.
/// For the perfect-linear pair this is the tangent projection of the raw
/// gradient.
Eigen::VectorXd projected_gradient(
    const AutoencoderPair& pair, const Eigen::VectorXd& x0,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& loss_gradient);

/// (||J_E J_D - I||_max, largest principal angle between range(J_E^T) and
/// range(J_D)), both ~0 for the perfect pair.
std::pair<double, double> jacobian_identity_report(const AutoencoderPair& pair,
                                                   const Eigen::VectorXd& x0);

}  // namespace mpgd

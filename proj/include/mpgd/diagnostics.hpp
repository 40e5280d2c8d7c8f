#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <vector>

#include "mpgd/geometry.hpp"
#include "mpgd/guidance.hpp"
#include "mpgd/numerics.hpp"
#include "mpgd/sampler.hpp"

namespace mpgd {

struct DeviationRow {
  int t = 0;
  double shell_residual = 0.0;     // |dist - r_t| / r_t at level t
  double off_manifold_norm = 0.0;  // orthogonal norm of x_{0|t}
  std::optional<double> alignment_cosine;
  std::optional<double> bound_lhs;
  std::optional<double> bound_rhs;
  std::optional<double> kappa;
};

struct DeviationCurve {
  std::vector<DeviationRow> rows;  // t strictly decreasing
};

/// Manifold-deviation curve of a finished trajectory: relative shell residual
/// of x_t and orthogonal norm of the clean estimate, per step, plus the
/// alignment cosine where guidance was applied.
DeviationCurve deviation_curve(const TrajectoryRecord& trajectory, const LinearManifold& manifold,
                               const NoiseSchedule& schedule);

/// Cosine between the unit score at x_t and the unit applied guidance
/// direction, per step. The score direction is -eps_hat (the recorded
/// denoiser output; the positive 1/sqrt(1-abar) scale cancels in the cosine).
/// Steps without guidance, or with zero-norm guidance, are absent.
std::vector<std::optional<double>> alignment_curve(const TrajectoryRecord& trajectory);

/// Mean of |cosine| over steps with t in [t_lo, t_hi] (absent entries skipped).
double mean_abs_alignment(const std::vector<std::optional<double>>& cosines,
                          const TrajectoryRecord& trajectory, int t_lo, int t_hi);

struct BoundAuditResult {
  double lhs = 0.0;    // ||x_dps - x_mpgd|| under shared noise
  double rhs = 0.0;    // kappa * rho_t * sqrt(1-abar)/sqrt(abar)
  double kappa = 0.0;  // ||(dL/dx0) (d eps/d x_t)||_2
};

/// Paired DPS/shortcut step from the same state, shared noise draw,
/// c_t = rho_t / sqrt(abar_{t-1} abar_t). kappa is the spectral norm of the
/// loss-gradient row times the denoiser Jacobian (power iteration, dense SVD
/// fallback).
BoundAuditResult bound_audit(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, int t, const GuidanceLoss& loss,
                             double rho_t, Rng& rng);

/// Max over entries of |central difference - analytic| / max(|analytic|, 1e-8)
/// for a vector-valued function and its claimed Jacobian.
double fd_audit(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
                const Eigen::VectorXd& x, double h);

/// Same audit for a scalar function and its gradient.
double fd_audit_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& gradient,
                         const Eigen::VectorXd& x, double h);

}  // namespace mpgd

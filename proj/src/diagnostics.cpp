#include "mpgd/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

namespace mpgd {

DeviationCurve deviation_curve(const TrajectoryRecord& trajectory, const LinearManifold& manifold,
                               const NoiseSchedule& schedule) {
  DeviationCurve curve;
  const auto cosines = alignment_curve(trajectory);
  curve.rows.reserve(trajectory.steps.size());
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    const TrajectoryStep& step = trajectory.steps[i];
    DeviationRow row;
    row.t = step.t;
    const double ab = schedule.alpha_bar(step.t);
    const double r_t = shell_radius(ab, manifold.ambient_dim(), manifold.latent_dim());
    const double dist = off_manifold_distance(step.x_t, std::sqrt(ab), manifold);
    row.shell_residual = std::abs(dist - r_t) / r_t;
    row.off_manifold_norm = manifold.orthogonal_part(step.x0_est).norm();
    row.alignment_cosine = cosines[i];
    curve.rows.push_back(row);
  }
  return curve;
}

std::vector<std::optional<double>> alignment_curve(const TrajectoryRecord& trajectory) {
  std::vector<std::optional<double>> out(trajectory.steps.size());
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    const TrajectoryStep& step = trajectory.steps[i];
    if (!step.guidance) continue;
    const double gnorm = step.guidance->norm();
    const double snorm = step.eps_hat.norm();
    if (gnorm == 0.0 || snorm == 0.0) continue;  // absent, not NaN
    // score direction is -eps_hat; the 1/sqrt(1-abar) scale cancels.
    out[i] = -step.eps_hat.dot(*step.guidance) / (snorm * gnorm);
  }
  return out;
}

double mean_abs_alignment(const std::vector<std::optional<double>>& cosines,
                          const TrajectoryRecord& trajectory, int t_lo, int t_hi) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    const int t = trajectory.steps[i].t;
    if (t < t_lo || t > t_hi || !cosines[i]) continue;
    sum += std::abs(*cosines[i]);
    ++count;
  }
  return count ? sum / count : 0.0;
}

BoundAuditResult bound_audit(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, int t, const GuidanceLoss& loss,
                             double rho_t, Rng& rng) {
  const Eigen::VectorXd noise = rng.normal_vector(x_t.size());
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double c_t = rho_t / std::sqrt(ab_prev * ab);

  const GuidedStepResult dps =
      dps_step_with_noise(x_t, denoiser, schedule, t, loss, rho_t, noise);
  const GuidedStepResult mpgd =
      mpgd_step_with_noise(x_t, denoiser, schedule, t, loss, c_t, noise);

  BoundAuditResult r;
  r.lhs = (dps.x_prev - mpgd.x_prev).norm();
  const Eigen::VectorXd grad_x0 = loss.gradient(dps.x0_est);
  const Eigen::MatrixXd row =
      grad_x0.transpose() * denoiser.jacobian(x_t, ab);  // (dL/dx0)(d eps/d x_t), 1 x d
  r.kappa = spectral_norm(row);
  r.rhs = r.kappa * rho_t * std::sqrt(1.0 - ab) / std::sqrt(ab);
  return r;
}

double fd_audit(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
                const Eigen::VectorXd& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_audit: h must be > 0");
  const Eigen::MatrixXd analytic = jacobian(x);
  double worst = 0.0;
  Eigen::VectorXd probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const Eigen::VectorXd hi = f(probe);
    probe[j] = x[j] - h;
    const Eigen::VectorXd lo = f(probe);
    probe[j] = x[j];
    const Eigen::VectorXd col = (hi - lo) / (2.0 * h);
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      worst = std::max(worst, relative_error(col[i], analytic(i, j)));
    }
  }
  return worst;
}

double fd_audit_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& gradient,
                         const Eigen::VectorXd& x, double h) {
  auto vec_f = [&f](const Eigen::VectorXd& p) {
    Eigen::VectorXd v(1);
    v[0] = f(p);
    return v;
  };
  auto jac = [&gradient](const Eigen::VectorXd& p) {
    const Eigen::VectorXd g = gradient(p);
    return Eigen::MatrixXd(g.transpose());
  };
  return fd_audit(vec_f, jac, x, h);
}

}  // namespace mpgd

#include "mpgd/guidance.hpp"

#include <cmath>
#include <stdexcept>

#include "mpgd/numerics.hpp"

namespace mpgd {

LinearInverseLoss::LinearInverseLoss(Eigen::MatrixXd a, Eigen::VectorXd y, double gamma)
    : a_(std::move(a)), y_(std::move(y)), gamma_(gamma) {
  if (a_.rows() != y_.size()) throw std::invalid_argument("LinearInverseLoss: shape mismatch");
  if (!(gamma_ > 0.0)) throw std::invalid_argument("LinearInverseLoss: gamma must be > 0");
}

double LinearInverseLoss::value(const Eigen::VectorXd& x) const {
  return gamma_ * (y_ - a_ * x).squaredNorm();
}

Eigen::VectorXd LinearInverseLoss::gradient(const Eigen::VectorXd& x) const {
  return -2.0 * gamma_ * (a_.transpose() * (y_ - a_ * x));
}

double StepSizeSchedule::rho_t(int t, int steps, double current_loss) const {
  switch (mode) {
    case Mode::Constant:
      return rho;
    case Mode::LossNormalized: {
      if (current_loss < 0.0)
        throw std::invalid_argument("StepSizeSchedule: loss-normalized mode needs loss >= 0");
      const double raw = rho / (std::sqrt(current_loss) + 1e-8);
      return std::min(raw, kLossNormalizedCap * rho);
    }
    case Mode::LinearDecay:
      return rho * static_cast<double>(t) / static_cast<double>(steps);
  }
  throw std::logic_error("StepSizeSchedule: unknown mode");
}

StepSizeSchedule::Mode StepSizeSchedule::parse_mode(const std::string& name) {
  if (name == "constant") return Mode::Constant;
  if (name == "loss-normalized") return Mode::LossNormalized;
  if (name == "linear-decay") return Mode::LinearDecay;
  throw std::invalid_argument("StepSizeSchedule: unknown mode '" + name + "'");
}

ResolvedStepSize resolve_step_size(const StepSizeSchedule& schedule, int t,
                                   const NoiseSchedule& noise, double current_loss,
                                   bool convert_for_comparison) {
  const double rho_t = schedule.rho_t(t, noise.steps(), current_loss);
  double c_t = rho_t;
  if (convert_for_comparison) {
    c_t = rho_t / std::sqrt(noise.alpha_bar(t - 1) * noise.alpha_bar(t));
  }
  return {rho_t, c_t};
}

namespace {

struct Estimates {
  Eigen::VectorXd eps_hat;
  Eigen::VectorXd x0;
};

Estimates estimate_clean(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                         const NoiseSchedule& schedule, int t, StepTelemetry* telemetry) {
  Estimates e;
  e.eps_hat = denoiser.eps_hat(x_t, schedule.alpha_bar(t));
  if (telemetry) telemetry->denoiser_evals++;
  e.x0 = tweedie_estimate(x_t, e.eps_hat, schedule.alpha_bar(t));
  return e;
}

GuidedStepResult finish_shortcut_step(const Eigen::VectorXd& x_t, Estimates est,
                                      Eigen::VectorXd x0_guided, const NoiseSchedule& schedule,
                                      int t, const Eigen::VectorXd& noise) {
  GuidedStepResult r;
  r.x_prev = ddim_step_with_noise(x_t, est.eps_hat, x0_guided, schedule, t, noise);
  r.eps_hat = std::move(est.eps_hat);
  r.guidance = x0_guided - est.x0;
  r.x0_est = std::move(est.x0);
  r.x0_guided = std::move(x0_guided);
  return r;
}

void check_gradient(const Eigen::VectorXd& g, const char* what) {
  if (!g.allFinite()) throw NumericalError(std::string(what) + ": non-finite loss gradient");
}

}  // namespace

GuidedStepResult dps_step_with_noise(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, int t,
                                     const GuidanceLoss& loss, double rho_t,
                                     const Eigen::VectorXd& noise, StepTelemetry* telemetry) {
  if (!(rho_t > 0.0)) throw std::invalid_argument("dps_step: rho_t must be > 0");
  Estimates est = estimate_clean(x_t, denoiser, schedule, t, telemetry);
  const double ab = schedule.alpha_bar(t);

  const Eigen::VectorXd grad_x0 = loss.gradient(est.x0);
  check_gradient(grad_x0, "dps_step");
  const Eigen::MatrixXd jac = denoiser.jacobian(x_t, ab);
  const Eigen::VectorXd jvp = jac.transpose() * grad_x0;
  if (telemetry) telemetry->jacobian_products++;
  const Eigen::VectorXd grad_xt =
      (grad_x0 - std::sqrt(1.0 - ab) * jvp) / std::sqrt(ab);

  GuidedStepResult r;
  r.x_prev = ddim_step_with_noise(x_t, est.eps_hat, est.x0, schedule, t, noise) - rho_t * grad_xt;
  r.eps_hat = std::move(est.eps_hat);
  r.x0_guided = est.x0;
  r.x0_est = std::move(est.x0);
  r.guidance = -rho_t * grad_xt;
  return r;
}

GuidedStepResult dps_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                          const NoiseSchedule& schedule, int t, const GuidanceLoss& loss,
                          double rho_t, Rng& rng, StepTelemetry* telemetry) {
  return dps_step_with_noise(x_t, denoiser, schedule, t, loss, rho_t,
                             rng.normal_vector(x_t.size()), telemetry);
}

GuidedStepResult mpgd_step_with_noise(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                                      const NoiseSchedule& schedule, int t,
                                      const GuidanceLoss& loss, double c_t,
                                      const Eigen::VectorXd& noise, StepTelemetry* telemetry) {
  if (c_t < 0.0) throw std::invalid_argument("mpgd_step: c_t must be >= 0");
  Estimates est = estimate_clean(x_t, denoiser, schedule, t, telemetry);
  Eigen::VectorXd x0_guided = est.x0;
  if (c_t > 0.0) {
    const Eigen::VectorXd g = loss.gradient(est.x0);
    check_gradient(g, "mpgd_step");
    x0_guided -= c_t * g;
  }
  return finish_shortcut_step(x_t, std::move(est), std::move(x0_guided), schedule, t, noise);
}

GuidedStepResult mpgd_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                           const NoiseSchedule& schedule, int t, const GuidanceLoss& loss,
                           double c_t, Rng& rng, StepTelemetry* telemetry) {
  return mpgd_step_with_noise(x_t, denoiser, schedule, t, loss, c_t,
                              rng.normal_vector(x_t.size()), telemetry);
}

GuidedStepResult mpgd_ae_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                              const NoiseSchedule& schedule, int t, const AutoencoderPair& pair,
                              const GuidanceLoss& loss, double c_t, Rng& rng,
                              const ActiveWindow& window, StepTelemetry* telemetry) {
  const Eigen::VectorXd noise = rng.normal_vector(x_t.size());
  if (!window.contains(t, schedule.steps())) {
    return mpgd_step_with_noise(x_t, denoiser, schedule, t, loss, c_t, noise, telemetry);
  }
  Estimates est = estimate_clean(x_t, denoiser, schedule, t, telemetry);
  Eigen::VectorXd x0_guided = est.x0;
  if (c_t > 0.0) {
    const Eigen::VectorXd g = projected_gradient(
        pair, est.x0, [&loss](const Eigen::VectorXd& x) { return loss.gradient(x); });
    x0_guided -= c_t * g;
  }
  return finish_shortcut_step(x_t, std::move(est), std::move(x0_guided), schedule, t, noise);
}

GuidedStepResult mpgd_z_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, int t, const AutoencoderPair& pair,
                             const GuidanceLoss& loss, double c_t, Rng& rng,
                             StepTelemetry* telemetry) {
  const Eigen::VectorXd noise = rng.normal_vector(x_t.size());
  Estimates est = estimate_clean(x_t, denoiser, schedule, t, telemetry);
  Eigen::VectorXd z = pair.encode(est.x0);
  const Eigen::VectorXd residue = est.x0 - pair.decode(z);
  if (c_t > 0.0) {
    const Eigen::VectorXd g = loss.gradient(pair.decode(z));
    check_gradient(g, "mpgd_z_step");
    z -= c_t * (pair.decode_jacobian(z).transpose() * g);
  }
  Eigen::VectorXd x0_guided = pair.decode(z) + residue;
  return finish_shortcut_step(x_t, std::move(est), std::move(x0_guided), schedule, t, noise);
}

LatentSampleResult mpgd_ldm_sample(const Denoiser& latent_denoiser, const NoiseSchedule& schedule,
                                   const AutoencoderPair& pair, const GuidanceLoss& loss,
                                   const StepSizeSchedule& step_size, int chains,
                                   std::uint64_t master_seed) {
  if (chains < 1) throw std::invalid_argument("mpgd_ldm_sample: chains must be >= 1");
  const int k = pair.latent_dim;
  LatentSampleResult out;
  out.terminals.reserve(static_cast<std::size_t>(chains));
  out.latent_trajectories.resize(static_cast<std::size_t>(chains));
  for (int c = 0; c < chains; ++c) {
    Rng rng = Rng::for_chain(master_seed, static_cast<std::uint64_t>(c));
    TrajectoryRecord& rec = out.latent_trajectories[static_cast<std::size_t>(c)];
    rec.chain = c;
    Eigen::VectorXd z = rng.normal_vector(k);
    for (int t = schedule.steps(); t >= 1; --t) {
      TrajectoryStep step;
      step.t = t;
      step.x_t = z;
      step.eps_hat = latent_denoiser.eps_hat(z, schedule.alpha_bar(t));
      rec.telemetry.denoiser_evals++;
      step.x0_est = tweedie_estimate(z, step.eps_hat, schedule.alpha_bar(t));
      Eigen::VectorXd z0 = step.x0_est;
      const double rho =
          step_size.rho_t(t, schedule.steps(), loss.value(pair.decode(z0)));
      const Eigen::VectorXd g = loss.gradient(pair.decode(z0));
      check_gradient(g, "mpgd_ldm_sample");
      z0 -= rho * (pair.decode_jacobian(z0).transpose() * g);
      step.x0_guided = z0;
      step.guidance = z0 - step.x0_est;
      z = ddim_step(z, step.eps_hat, z0, schedule, t, rng);
      rec.steps.push_back(std::move(step));
    }
    rec.terminal = z;
    out.terminals.push_back(pair.decode(z));
  }
  return out;
}

InnerMethod parse_inner_method(const std::string& name) {
  if (name == "gd") return InnerMethod::GradientDescent;
  if (name == "cg") return InnerMethod::NonlinearCg;
  throw std::invalid_argument("unknown inner optimizer '" + name + "'");
}

MultiStepResult multi_step_optimize(const Eigen::VectorXd& x0, const GuidanceLoss& loss, int n,
                                    InnerMethod method, double step,
                                    const AutoencoderPair* pair) {
  if (n < 1) throw std::invalid_argument("multi_step_optimize: n must be >= 1");
  if (!(step > 0.0)) throw std::invalid_argument("multi_step_optimize: step must be > 0");
  constexpr int kMaxHalvings = 30;
  constexpr double kArmijo = 1e-4;

  auto objective = [&](const Eigen::VectorXd& x) {
    return pair ? loss.value(pair->decode(pair->encode(x))) : loss.value(x);
  };
  auto grad = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    if (pair)
      return projected_gradient(*pair, x,
                                [&loss](const Eigen::VectorXd& p) { return loss.gradient(p); });
    return loss.gradient(x);
  };

  MultiStepResult out;
  out.x = x0;
  double fx = objective(out.x);
  out.loss_history.push_back(fx);
  Eigen::VectorXd g = grad(out.x);
  Eigen::VectorXd dir = -g;

  for (int it = 0; it < n; ++it) {
    if (g.norm() < 1e-14) break;
    double slope = g.dot(dir);
    if (slope >= 0.0) {  // restart on non-descent
      dir = -g;
      slope = g.dot(dir);
    }

    double alpha = step;
    if (method == InnerMethod::NonlinearCg) {
      // Secant curvature along dir; exact on quadratics for any probe h.
      const double h = 1e-6 * (1.0 + out.x.norm()) / std::max(dir.norm(), 1e-300);
      const Eigen::VectorXd gh = grad(out.x + h * dir);
      const double curvature = (gh - g).dot(dir) / h;
      if (curvature > 0.0) alpha = -slope / curvature;
    }

    int halvings = 0;
    double f_new = objective(out.x + alpha * dir);
    while (!(f_new <= fx + kArmijo * alpha * slope) && halvings < kMaxHalvings) {
      alpha *= 0.5;
      f_new = objective(out.x + alpha * dir);
      ++halvings;
    }
    if (halvings >= kMaxHalvings && !(f_new <= fx + kArmijo * alpha * slope)) {
      out.line_search_failed = true;  // keep the best iterate found so far
      break;
    }

    out.x += alpha * dir;
    fx = f_new;
    out.loss_history.push_back(fx);
    const Eigen::VectorXd g_new = grad(out.x);
    if (method == InnerMethod::NonlinearCg) {
      const double denom = g.squaredNorm();
      const double beta =
          denom > 0.0 ? std::max(0.0, g_new.dot(g_new - g) / denom) : 0.0;  // PR+
      dir = -g_new + beta * dir;
      if (g_new.dot(dir) >= 0.0) dir = -g_new;
    } else {
      dir = -g_new;
    }
    g = g_new;
  }
  return out;
}

Eigen::VectorXd time_travel(const GuidedStepFn& step_fn, const Eigen::VectorXd& x_t,
                            const NoiseSchedule& schedule, int t, int repeats, Rng& rng) {
  if (repeats < 0) throw std::invalid_argument("time_travel: repeats must be >= 0");
  Eigen::VectorXd x = x_t;
  for (int r = 0; r < repeats; ++r) {
    const Eigen::VectorXd x_prev = step_fn(x, t, rng);
    x = renoise(x_prev, schedule, t, rng);
  }
  return step_fn(x, t, rng);
}

}  // namespace mpgd

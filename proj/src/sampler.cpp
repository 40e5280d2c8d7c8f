#include "mpgd/sampler.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "mpgd/numerics.hpp"

namespace mpgd {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar, double eta)
    : alpha_bar_(std::move(alpha_bar)), eta_(eta) {
  if (alpha_bar_.size() < 2) throw std::invalid_argument("NoiseSchedule: need T >= 1");
  if (!(eta_ >= 0.0 && eta_ <= 1.0)) throw std::invalid_argument("NoiseSchedule: eta in [0,1]");
  if (alpha_bar_.front() != 1.0)
    throw std::invalid_argument("NoiseSchedule: alpha_bar_0 must equal 1");
  for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
    const double a = alpha_bar_[t];
    if (!(a > 0.0 && a <= 1.0) || !(a < alpha_bar_[t - 1]))
      throw std::invalid_argument("NoiseSchedule: alpha_bar must be strictly decreasing in (0,1]");
  }
  for (int t = 1; t <= steps(); ++t) {
    const double s = sigma(t);
    if (1.0 - alpha_bar_[static_cast<std::size_t>(t) - 1] - s * s < -1e-12)
      throw std::invalid_argument("NoiseSchedule: sigma exceeds the noise budget");
  }
}

NoiseSchedule NoiseSchedule::linear_beta(int steps, double eta) {
  if (steps < 1 || steps > 1000)
    throw std::invalid_argument("NoiseSchedule: steps must be in [1, 1000]");
  constexpr int kTrainSteps = 1000;
  constexpr double kBetaMin = 1e-4;
  constexpr double kBetaMax = 0.02;
  std::vector<double> full(kTrainSteps);
  double prod = 1.0;
  for (int i = 0; i < kTrainSteps; ++i) {
    const double beta = kBetaMin + (kBetaMax - kBetaMin) * i / (kTrainSteps - 1);
    prod *= 1.0 - beta;
    full[i] = prod;
  }
  std::vector<double> ab(static_cast<std::size_t>(steps) + 1);
  ab[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const int idx = static_cast<int>(std::lround(static_cast<double>(t) * kTrainSteps / steps));
    ab[static_cast<std::size_t>(t)] = full[idx - 1];
  }
  return NoiseSchedule(std::move(ab), eta);
}

NoiseSchedule NoiseSchedule::log_linear(int steps, double eta, double alpha_bar_first,
                                        double alpha_bar_last) {
  if (steps < 1) throw std::invalid_argument("NoiseSchedule: steps must be >= 1");
  if (!(alpha_bar_last < alpha_bar_first && alpha_bar_first < 1.0 && alpha_bar_last > 0.0))
    throw std::invalid_argument("NoiseSchedule: need 0 < last < first < 1");
  std::vector<double> ab(static_cast<std::size_t>(steps) + 1);
  ab[0] = 1.0;
  const double l0 = std::log(alpha_bar_first);
  const double l1 = std::log(alpha_bar_last);
  for (int t = 1; t <= steps; ++t) {
    const double f = steps == 1 ? 1.0 : static_cast<double>(t - 1) / (steps - 1);
    ab[static_cast<std::size_t>(t)] = std::exp(l0 + (l1 - l0) * f);
  }
  return NoiseSchedule(std::move(ab), eta);
}

NoiseSchedule NoiseSchedule::make(const std::string& mode, int steps, double eta) {
  if (mode == "linear-beta") return linear_beta(steps, eta);
  if (mode == "log-linear") return log_linear(steps, eta);
  throw std::invalid_argument("NoiseSchedule: unknown alpha_bar_mode '" + mode + "'");
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw std::out_of_range("NoiseSchedule: t out of range");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::sigma(int t) const {
  if (t < 1 || t > steps()) throw std::out_of_range("NoiseSchedule: sigma needs 1 <= t <= T");
  return sigma_from(eta_, alpha_bar_[static_cast<std::size_t>(t) - 1],
                    alpha_bar_[static_cast<std::size_t>(t)]);
}

double sigma_from(double eta, double alpha_bar_prev, double alpha_bar_t) {
  return eta * std::sqrt((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t)) *
         std::sqrt(1.0 - alpha_bar_t / alpha_bar_prev);
}

Eigen::VectorXd tweedie_estimate(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat,
                                 double alpha_bar_t) {
  if (!(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0))
    throw std::invalid_argument("tweedie_estimate: alpha_bar must be in (0,1]");
  return (x_t - std::sqrt(1.0 - alpha_bar_t) * eps_hat) / std::sqrt(alpha_bar_t);
}

namespace {

double clamped_radicand(double value, const char* what) {
  if (value < -1e-12) throw NumericalError(std::string(what) + ": negative radicand");
  return std::max(0.0, value);
}

}  // namespace

Eigen::VectorXd ddim_step_with_noise(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat,
                                     const Eigen::VectorXd& x0_est, const NoiseSchedule& schedule,
                                     int t, const Eigen::VectorXd& noise) {
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("ddim_step: t out of range");
  if (eps_hat.size() != x_t.size() || x0_est.size() != x_t.size() || noise.size() != x_t.size())
    throw std::invalid_argument("ddim_step: dimension mismatch");
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double s = schedule.sigma(t);
  const double coeff =
      std::sqrt(clamped_radicand(1.0 - ab_prev - s * s, "ddim_step"));
  return std::sqrt(ab_prev) * x0_est + coeff * eps_hat + s * noise;
}

Eigen::VectorXd ddim_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat,
                          const Eigen::VectorXd& x0_est, const NoiseSchedule& schedule, int t,
                          Rng& rng) {
  return ddim_step_with_noise(x_t, eps_hat, x0_est, schedule, t, rng.normal_vector(x_t.size()));
}

Eigen::VectorXd renoise_with_noise(const Eigen::VectorXd& x_prev, double alpha_bar_ratio,
                                   const Eigen::VectorXd& noise) {
  if (!(alpha_bar_ratio > 0.0 && alpha_bar_ratio <= 1.0))
    throw std::invalid_argument("renoise: alpha_bar ratio must be in (0,1]");
  return std::sqrt(alpha_bar_ratio) * x_prev + std::sqrt(1.0 - alpha_bar_ratio) * noise;
}

Eigen::VectorXd renoise(const Eigen::VectorXd& x_prev, const NoiseSchedule& schedule, int t,
                        Rng& rng) {
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("renoise: t out of range");
  const double ratio = schedule.alpha_bar(t) / schedule.alpha_bar(t - 1);
  return renoise_with_noise(x_prev, ratio, rng.normal_vector(x_prev.size()));
}

Denoiser make_optimal_denoiser(MixturePrior prior) {
  auto shared = std::make_shared<MixturePrior>(std::move(prior));
  Denoiser d;
  d.eps_hat = [shared](const Eigen::VectorXd& x, double alpha_bar) {
    return shared->optimal_denoiser(alpha_bar, x);
  };
  d.jacobian = [shared](const Eigen::VectorXd& x, double alpha_bar) {
    return shared->denoiser_jacobian(alpha_bar, x);
  };
  return d;
}

Denoiser make_defective_denoiser(Denoiser base, int dim, double scale, std::uint64_t seed) {
  if (scale < 0.0) throw std::invalid_argument("make_defective_denoiser: scale must be >= 0");
  Rng rng(seed);
  Eigen::MatrixXd q = rng.normal_matrix(dim, dim);
  q /= spectral_norm(q);
  auto defect = std::make_shared<Eigen::MatrixXd>(std::move(q));
  Denoiser d;
  d.eps_hat = [base, defect, scale](const Eigen::VectorXd& x, double alpha_bar) {
    return (base.eps_hat(x, alpha_bar) + scale * (*defect * x)).eval();
  };
  d.jacobian = [base, defect, scale](const Eigen::VectorXd& x, double alpha_bar) {
    return (base.jacobian(x, alpha_bar) + scale * *defect).eval();
  };
  return d;
}

std::vector<TrajectoryRecord> sample_unconditional(const Denoiser& denoiser,
                                                   const NoiseSchedule& schedule, int dim,
                                                   int chains, std::uint64_t master_seed) {
  if (chains < 1) throw std::invalid_argument("sample_unconditional: chains must be >= 1");
  std::vector<TrajectoryRecord> records(static_cast<std::size_t>(chains));
  for (int c = 0; c < chains; ++c) {
    Rng rng = Rng::for_chain(master_seed, static_cast<std::uint64_t>(c));
    TrajectoryRecord& rec = records[static_cast<std::size_t>(c)];
    rec.chain = c;
    Eigen::VectorXd x = rng.normal_vector(dim);
    for (int t = schedule.steps(); t >= 1; --t) {
      TrajectoryStep step;
      step.t = t;
      step.x_t = x;
      step.eps_hat = denoiser.eps_hat(x, schedule.alpha_bar(t));
      rec.telemetry.denoiser_evals++;
      step.x0_est = tweedie_estimate(x, step.eps_hat, schedule.alpha_bar(t));
      x = ddim_step(x, step.eps_hat, step.x0_est, schedule, t, rng);
      rec.steps.push_back(std::move(step));
    }
    rec.terminal = x;
  }
  return records;
}

}  // namespace mpgd

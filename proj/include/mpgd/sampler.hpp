#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mpgd/prior.hpp"
#include "mpgd/rng.hpp"

namespace mpgd {

/// Discrete noise schedule: abar_0 = 1 > abar_1 > ... > abar_T > 0, plus the
/// DDIM stochasticity parameter eta in [0, 1].
///
/// sigma_t = eta * sqrt((1-abar_{t-1})/(1-abar_t)) * sqrt(1 - abar_t/abar_{t-1});
/// eta = 1 is ancestral (DDPM-like) sampling, eta = 0 is deterministic.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> alpha_bar, double eta);

  /// Subsampled from the 1000-step linear-beta DDPM schedule
  /// (beta from 1e-4 to 0.02).
  static NoiseSchedule linear_beta(int steps, double eta);
  /// abar log-linearly interpolated between fixed endpoints.
  static NoiseSchedule log_linear(int steps, double eta, double alpha_bar_first = 0.9999,
                                  double alpha_bar_last = 4e-5);
  static NoiseSchedule make(const std::string& mode, int steps, double eta);

  int steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double eta() const { return eta_; }
  double alpha_bar(int t) const;  // t in [0, T]
  double sigma(int t) const;      // t in [1, T]

 private:
  std::vector<double> alpha_bar_;
  double eta_;
};

/// The sigma formula on raw schedule values (also used for synthetic cases
/// such as flat segments that a valid schedule cannot contain).
double sigma_from(double eta, double alpha_bar_prev, double alpha_bar_t);

/// x_{0|t} = (x_t - sqrt(1-abar) eps_hat) / sqrt(abar). Requires abar > 0.
Eigen::VectorXd tweedie_estimate(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat,
                                 double alpha_bar_t);

/// One reverse step
///   x_{t-1} = sqrt(abar_{t-1}) x0_est + sqrt(1 - abar_{t-1} - sigma_t^2) eps_hat
///             + sigma_t noise.
/// x0_est may be an externally modified clean estimate (the guided-step hook).
/// Consumes exactly one d-dimensional standard normal draw from rng.
/// Radicands in [-1e-12, 0) clamp to zero; more negative throws.
Eigen::VectorXd ddim_step(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat,
                          const Eigen::VectorXd& x0_est, const NoiseSchedule& schedule, int t,
                          Rng& rng);
Eigen::VectorXd ddim_step_with_noise(const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_hat,
                                     const Eigen::VectorXd& x0_est, const NoiseSchedule& schedule,
                                     int t, const Eigen::VectorXd& noise);

/// One forward hop x_{t-1} -> x_t:
///   x_t = sqrt(abar_t/abar_{t-1}) x_{t-1} + sqrt(1 - abar_t/abar_{t-1}) noise.
/// Consumes one d-dimensional draw.
Eigen::VectorXd renoise(const Eigen::VectorXd& x_prev, const NoiseSchedule& schedule, int t,
                        Rng& rng);
Eigen::VectorXd renoise_with_noise(const Eigen::VectorXd& x_prev, double alpha_bar_ratio,
                                   const Eigen::VectorXd& noise);

/// Per-chain instrumentation.
struct StepTelemetry {
  long denoiser_evals = 0;
  long jacobian_products = 0;

  StepTelemetry& operator+=(const StepTelemetry& o) {
    denoiser_evals += o.denoiser_evals;
    jacobian_products += o.jacobian_products;
    return *this;
  }
};

struct TrajectoryStep {
  int t = 0;                  // level before the step; steps run T..1
  Eigen::VectorXd x_t;
  Eigen::VectorXd eps_hat;
  Eigen::VectorXd x0_est;                    // Tweedie estimate before guidance
  std::optional<Eigen::VectorXd> x0_guided;  // clean estimate after guidance
  std::optional<Eigen::VectorXd> guidance;   // applied displacement
};

struct TrajectoryRecord {
  int chain = 0;
  std::vector<TrajectoryStep> steps;  // t strictly decreasing
  Eigen::VectorXd terminal;           // x_0
  StepTelemetry telemetry;
};

/// Denoiser evaluated at (x, alpha_bar). `jacobian` may be empty for
/// denoisers that never feed a DPS step.
struct Denoiser {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> eps_hat;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, double)> jacobian;
};

/// Closed-form optimal denoiser of a mixture prior (shared, immutable).
Denoiser make_optimal_denoiser(MixturePrior prior);

/// base plus a fixed linear defect: eps(x) + scale * Q x with ||Q||_2 = 1 and
/// Q seeded. Emulates a well-trained but imperfect model; its Jacobian picks
/// up the same defect, which is what the deviation diagnostics probe.
Denoiser make_defective_denoiser(Denoiser base, int dim, double scale, std::uint64_t seed);

/// Unguided reverse diffusion: x_T ~ N(0, I), then T DDIM steps with the
/// given denoiser. One independent chain per index, seeded from
/// (master_seed, chain).
std::vector<TrajectoryRecord> sample_unconditional(const Denoiser& denoiser,
                                                   const NoiseSchedule& schedule, int dim,
                                                   int chains, std::uint64_t master_seed);

}  // namespace mpgd

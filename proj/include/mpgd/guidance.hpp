#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mpgd/autoencoder.hpp"
#include "mpgd/sampler.hpp"

namespace mpgd {

/// Differentiable guidance loss L(x; y); the condition y lives inside the
/// concrete loss object.
class GuidanceLoss {
 public:
  virtual ~GuidanceLoss() = default;
  virtual double value(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& x) const = 0;
  virtual int dim() const = 0;
};

/// L(x; y) = gamma ||y - A x||_2^2, the noisy linear inverse problem loss.
class LinearInverseLoss final : public GuidanceLoss {
 public:
  LinearInverseLoss(Eigen::MatrixXd a, Eigen::VectorXd y, double gamma);

  double value(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override;  // -2 gamma A^T (y - A x)
  int dim() const override { return static_cast<int>(a_.cols()); }

  const Eigen::MatrixXd& a() const { return a_; }
  const Eigen::VectorXd& y() const { return y_; }
  double gamma() const { return gamma_; }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd y_;
  double gamma_;
};

/// L(x) = 1/2 ||x - target||^2.
class QuadraticTargetLoss final : public GuidanceLoss {
 public:
  explicit QuadraticTargetLoss(Eigen::VectorXd target) : target_(std::move(target)) {}

  double value(const Eigen::VectorXd& x) const override {
    return 0.5 * (x - target_).squaredNorm();
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const override { return x - target_; }
  int dim() const override { return static_cast<int>(target_.size()); }

  const Eigen::VectorXd& target() const { return target_; }

 private:
  Eigen::VectorXd target_;
};

/// Per-step guidance weight. Modes:
///   constant:        rho_t = rho
///   loss-normalized: rho_t = rho / (sqrt(loss) + 1e-8), capped at 1e3 * rho
///   linear-decay:    rho_t = rho * t / T
struct StepSizeSchedule {
  enum class Mode { Constant, LossNormalized, LinearDecay };
  static constexpr double kLossNormalizedCap = 1e3;

  Mode mode = Mode::Constant;
  double rho = 0.1;

  double rho_t(int t, int steps, double current_loss) const;
  static Mode parse_mode(const std::string& name);
};

struct ResolvedStepSize {
  double rho_t;  // step on grad_{x_t} (DPS side)
  double c_t;    // step on grad_{x_0} (shortcut side)
};

/// c_t defaults to rho_t; with `convert_for_comparison` it is
/// rho_t / sqrt(abar_{t-1} abar_t), the pairing that makes one DPS step and
/// one shortcut step directly comparable.
ResolvedStepSize resolve_step_size(const StepSizeSchedule& schedule, int t,
                                   const NoiseSchedule& noise, double current_loss,
                                   bool convert_for_comparison = false);

struct GuidedStepResult {
  Eigen::VectorXd x_prev;
  Eigen::VectorXd eps_hat;
  Eigen::VectorXd x0_est;     // Tweedie estimate
  Eigen::VectorXd x0_guided;  // clean estimate actually recombined
  Eigen::VectorXd guidance;   // applied displacement (zero vector if none)
};

/// Guidance window in fractional reverse time; projection is active for
/// lo <= t/T <= hi.
struct ActiveWindow {
  double hi = 0.5;
  double lo = 0.3;

  bool contains(int t, int steps) const {
    const double f = static_cast<double>(t) / static_cast<double>(steps);
    return lo <= f && f <= hi;
  }
  static ActiveWindow full() { return {1.0, 0.0}; }
};

/// DPS step: DDIM recombination of the unmodified x_{0|t}, then
/// x_{t-1} -= rho_t grad_{x_t} L(x_{0|t}), with the gradient by the exact
/// chain rule through the denoiser Jacobian:
///   grad_{x_t} L = (1/sqrt(abar)) grad_{x0} L
///                - (sqrt(1-abar)/sqrt(abar)) J_eps^T grad_{x0} L.
/// Consumes exactly one denoiser-Jacobian product (counted in telemetry).
GuidedStepResult dps_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                          const NoiseSchedule& schedule, int t, const GuidanceLoss& loss,
                          double rho_t, Rng& rng, StepTelemetry* telemetry = nullptr);
GuidedStepResult dps_step_with_noise(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                                     const NoiseSchedule& schedule, int t,
                                     const GuidanceLoss& loss, double rho_t,
                                     const Eigen::VectorXd& noise,
                                     StepTelemetry* telemetry = nullptr);

/// Shortcut step without projection: x_{0|t} <- x_{0|t} - c_t grad_{x0} L,
/// then the DDIM recombination. No Jacobian products.
GuidedStepResult mpgd_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                           const NoiseSchedule& schedule, int t, const GuidanceLoss& loss,
                           double c_t, Rng& rng, StepTelemetry* telemetry = nullptr);
GuidedStepResult mpgd_step_with_noise(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                                      const NoiseSchedule& schedule, int t,
                                      const GuidanceLoss& loss, double c_t,
                                      const Eigen::VectorXd& noise,
                                      StepTelemetry* telemetry = nullptr);

/// Shortcut step with autoencoder projection while t is inside the window:
/// x_{0|t} <- x_{0|t} - c_t grad_{x0} L(D(E(x_{0|t}))); outside the window it
/// behaves as mpgd_step.
GuidedStepResult mpgd_ae_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                              const NoiseSchedule& schedule, int t, const AutoencoderPair& pair,
                              const GuidanceLoss& loss, double c_t, Rng& rng,
                              const ActiveWindow& window = ActiveWindow::full(),
                              StepTelemetry* telemetry = nullptr);

/// Latent-manipulation step:
///   z <- E(x_{0|t});  dx <- x_{0|t} - D(z);
///   z <- z - c_t grad_z L(D(z));  x_{0|t} <- D(z) + dx.
/// The reconstruction residue dx is added back so imperfect pairs do not
/// lose the off-subspace content of the estimate.
GuidedStepResult mpgd_z_step(const Eigen::VectorXd& x_t, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, int t, const AutoencoderPair& pair,
                             const GuidanceLoss& loss, double c_t, Rng& rng,
                             StepTelemetry* telemetry = nullptr);

/// Full latent-diffusion sampler: diffusion runs in R^k with
/// z_{0|t} <- z_{0|t} - c_t grad_z L(D(z_{0|t})) each step; terminal sample is
/// D(z_0), which lies on the manifold for decoders that map onto it.
struct LatentSampleResult {
  std::vector<Eigen::VectorXd> terminals;            // decoded x_0, length = chains
  std::vector<TrajectoryRecord> latent_trajectories; // states in R^k
};
LatentSampleResult mpgd_ldm_sample(const Denoiser& latent_denoiser, const NoiseSchedule& schedule,
                                   const AutoencoderPair& pair, const GuidanceLoss& loss,
                                   const StepSizeSchedule& step_size, int chains,
                                   std::uint64_t master_seed);

enum class InnerMethod { GradientDescent, NonlinearCg };
InnerMethod parse_inner_method(const std::string& name);

struct MultiStepResult {
  Eigen::VectorXd x;
  std::vector<double> loss_history;  // loss at start and after each accepted iterate
  bool line_search_failed = false;
};

/// n inner iterations on the clean estimate. Gradient descent takes `step` as
/// the trial step; nonlinear CG (Polak-Ribiere+, restart on non-descent) uses
/// a secant trial step, exact on quadratics. Both back off by Armijo halving,
/// at most 30 halvings; exhaustion returns the best iterate with the warning
/// flag set. With a pair, every direction passes through the manifold
/// projection and the objective is evaluated at the reconstruction.
MultiStepResult multi_step_optimize(const Eigen::VectorXd& x0, const GuidanceLoss& loss, int n,
                                    InnerMethod method, double step,
                                    const AutoencoderPair* pair = nullptr);

/// One guided descent to level t-1 as produced by step_fn.
using GuidedStepFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x_t, int t, Rng& rng)>;

/// Time travel: repeat m times {descend to t-1, renoise back to t}, then
/// descend once more. m = 0 is a plain single pass. Fresh noise each hop.
Eigen::VectorXd time_travel(const GuidedStepFn& step_fn, const Eigen::VectorXd& x_t,
                            const NoiseSchedule& schedule, int t, int repeats, Rng& rng);

}  // namespace mpgd

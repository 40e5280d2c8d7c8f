#include <cmath>
#include <memory>

#include "mpgd/harness.hpp"

namespace mpgd {

namespace {

constexpr double kDelta = 0.05;

struct Lab {
  LinearManifold manifold;
  MixturePrior prior;
  Denoiser denoiser;

  static Lab standard(int d = 64, int k = 8, int components = 2, double mean_scale = 2.0,
                      double cov_scale = 0.5) {
    LinearManifold m = make_manifold(d, k, 7);
    Rng rng(11);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(components, 1.0 / components);
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
    for (int i = 0; i < components; ++i) {
      means.push_back(mean_scale * rng.normal_vector(k));
      covs.push_back(cov_scale * Eigen::MatrixXd::Identity(k, k));
    }
    MixturePrior prior(m, w, means, covs);
    Denoiser den = make_optimal_denoiser(prior);
    return Lab{std::move(m), std::move(prior), std::move(den)};
  }
};

VerifyCheck rate_check(const std::string& name, double rate, double threshold,
                       const std::string& details) {
  return {name, rate >= threshold, rate - threshold, details};
}

VerifyCheck bound_check(const std::string& name, double observed, double limit,
                        const std::string& details) {
  return {name, observed < limit, limit - observed, details};
}

// ------------------------------------------------------------- concentration

void concentration_checks(std::vector<VerifyCheck>& out) {
  Lab lab = Lab::standard();
  const int n = 10000;
  const int d = lab.manifold.ambient_dim();
  const int k = lab.manifold.latent_dim();
  Rng rng(3);
  for (double ab : {0.2, 0.5, 0.8}) {
    for (double delta : {0.01, 0.05, 0.2}) {
      const double eps = concentration_epsilon(delta, d - k);
      int pass = 0;
      for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd x = lab.prior.sample(rng);
        const Eigen::VectorXd x_t =
            std::sqrt(ab) * x + std::sqrt(1.0 - ab) * rng.normal_vector(d);
        if (shell_band_test(x_t, lab.manifold, ab, eps)) ++pass;
      }
      const double rate = static_cast<double>(pass) / n;
      const double threshold = 1.0 - delta - 3.0 * std::sqrt(delta * (1.0 - delta) / n);
      char name[96];
      std::snprintf(name, sizeof(name), "forward-shell-rate(abar=%.1f,delta=%.2f)", ab, delta);
      out.push_back(rate_check(name, rate, threshold,
                               "band epsilon " + std::to_string(eps)));
    }
  }
  // Monotone nonincreasing in delta and dof over a grid.
  double worst = 1.0;
  const double deltas[] = {0.01, 0.05, 0.1, 0.2, 0.5};
  const int dofs[] = {8, 32, 56, 100, 400};
  for (int dof : dofs) {
    for (std::size_t i = 1; i < std::size(deltas); ++i)
      worst = std::min(worst, concentration_epsilon(deltas[i - 1], dof) -
                                  concentration_epsilon(deltas[i], dof));
  }
  for (double delta : deltas) {
    for (std::size_t i = 1; i < std::size(dofs); ++i)
      worst = std::min(worst, concentration_epsilon(delta, dofs[i - 1]) -
                                  concentration_epsilon(delta, dofs[i]));
  }
  out.push_back({"epsilon-monotone", worst >= 0.0, worst, "min grid decrement"});
}

// ------------------------------------------------------------------ shortcut

void shortcut_checks(std::vector<VerifyCheck>& out) {
  Lab lab = Lab::standard();
  const int d = lab.manifold.ambient_dim();
  const int k = lab.manifold.latent_dim();
  const int steps = 50;

  {  // Total-noise identity: the eps_hat/eps recombination has the marginal
     // variance 1 - abar_{t-1} (scalar Monte Carlo).
    NoiseSchedule sch = NoiseSchedule::linear_beta(steps, 1.0);
    const int t = steps / 2;
    const double ab_prev = sch.alpha_bar(t - 1);
    const double s = sch.sigma(t);
    const double coeff = std::sqrt(1.0 - ab_prev - s * s);
    Rng rng(5);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = coeff * rng.normal() + s * rng.normal();
      sum += v;
      sum2 += v * v;
    }
    const double var = (sum2 - sum * sum / n) / (n - 1);
    const double want = 1.0 - ab_prev;
    const double se = want * std::sqrt(2.0 / (n - 1));
    out.push_back(bound_check("total-noise-variance", std::abs(var - want), 3.0 * se,
                              "sampled " + std::to_string(var) + " vs " + std::to_string(want)));
  }

  {  // Guided MPGD-AE run stays in the shell band at every t and ends on the
     // manifold (eta = 0).
    ExperimentConfig cfg;
    cfg.method = "mpgd-ae";
    cfg.manifold = {d, k, 7};
    cfg.prior = {2, 11, 2.0, 0.5, 0.0, 0.0};
    cfg.schedule = {steps, "linear-beta", 0.0};
    cfg.loss.seed = 21;
    cfg.loss.measurements = 4;
    cfg.step_size.rho = 0.01;
    cfg.window = {1.0, 0.0};
    cfg.chains = 100;
    cfg.master_seed = 2024;
    cfg.validate();
    Problem prob = build_problem(cfg);
    RunResult run = run_chains(cfg, prob, 1);
    const double eps = concentration_epsilon(kDelta, d - k);
    std::vector<int> fails(static_cast<std::size_t>(steps) + 1, 0);
    double worst_terminal = 0.0;
    for (const auto& rec : run.trajectories) {
      for (const auto& step : rec.steps) {
        if (!shell_band_test(step.x_t, prob.manifold, prob.schedule.alpha_bar(step.t), eps))
          fails[static_cast<std::size_t>(step.t)]++;
      }
      worst_terminal =
          std::max(worst_terminal, prob.manifold.orthogonal_part(rec.terminal).norm());
    }
    double min_rate = 1.0;
    for (int t = 1; t <= steps; ++t)
      min_rate = std::min(min_rate, 1.0 - static_cast<double>(fails[t]) / cfg.chains);
    out.push_back(rate_check("guided-shell-rate-every-t", min_rate, 1.0 - kDelta,
                             "min over t of per-level pass rate"));
    out.push_back(bound_check("guided-terminal-tangency", worst_terminal, 1e-6,
                              "max orthogonal norm of terminal samples"));
  }

  {  // Renoise marginal variance and shell composition.
    NoiseSchedule sch = NoiseSchedule::linear_beta(steps, 0.5);
    const int t = steps / 2;
    const double ratio = sch.alpha_bar(t) / sch.alpha_bar(t - 1);
    Rng rng(9);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = renoise_with_noise(Eigen::VectorXd::Zero(1), ratio,
                                          rng.normal_vector(1))[0];
      sum += v;
      sum2 += v * v;
    }
    const double var = (sum2 - sum * sum / n) / (n - 1);
    const double want = 1.0 - ratio;
    const double se = want * std::sqrt(2.0 / (n - 1));
    out.push_back(bound_check("renoise-variance", std::abs(var - want), 3.0 * se,
                              "sampled " + std::to_string(var)));

    const double eps = concentration_epsilon(kDelta, d - k);
    int pass = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
      const Eigen::VectorXd x = lab.prior.sample(rng);
      const Eigen::VectorXd x_prev = std::sqrt(sch.alpha_bar(t - 1)) * x +
                                     std::sqrt(1.0 - sch.alpha_bar(t - 1)) *
                                         rng.normal_vector(d);
      const Eigen::VectorXd x_t = renoise(x_prev, sch, t, rng);
      if (shell_band_test(x_t, lab.manifold, sch.alpha_bar(t), eps)) ++pass;
    }
    const double rate = static_cast<double>(pass) / trials;
    const double threshold = 1.0 - kDelta - 3.0 * std::sqrt(kDelta * (1.0 - kDelta) / trials);
    out.push_back(rate_check("renoise-shell-composition", rate, threshold, ""));
  }

  {  // One eta = 1 DDIM step from exact forward samples reproduces the
     // t-1 marginal; and from arbitrary on-manifold starts, the recombination
     // lands in the t-1 band.
    NoiseSchedule sch = NoiseSchedule::linear_beta(steps, 1.0);
    const int t = steps / 2;
    const double ab = sch.alpha_bar(t);
    const double eps = concentration_epsilon(kDelta, d - k);
    Rng rng(13);
    const int trials = 10000;
    int pass_forward = 0;
    int pass_arbitrary = 0;
    for (int i = 0; i < trials; ++i) {
      {
        const Eigen::VectorXd x = lab.prior.sample(rng);
        const Eigen::VectorXd x_t = std::sqrt(ab) * x +
                                    std::sqrt(1.0 - ab) * rng.normal_vector(d);
        const Eigen::VectorXd eps_hat = lab.denoiser.eps_hat(x_t, ab);
        const Eigen::VectorXd x0 = tweedie_estimate(x_t, eps_hat, ab);
        const Eigen::VectorXd x_prev = ddim_step(x_t, eps_hat, x0, sch, t, rng);
        if (shell_band_test(x_prev, lab.manifold, sch.alpha_bar(t - 1), eps)) ++pass_forward;
      }
      {
        // Deliberately not a prior draw: scaled latent coordinates.
        const Eigen::VectorXd x = lab.manifold.from_latent(3.0 * rng.normal_vector(k));
        const Eigen::VectorXd x_t = std::sqrt(ab) * x +
                                    std::sqrt(1.0 - ab) * rng.normal_vector(d);
        const Eigen::VectorXd eps_hat = lab.denoiser.eps_hat(x_t, ab);
        const Eigen::VectorXd x_prev = ddim_step(x_t, eps_hat, x, sch, t, rng);
        if (shell_band_test(x_prev, lab.manifold, sch.alpha_bar(t - 1), eps)) ++pass_arbitrary;
      }
    }
    const double threshold = 1.0 - kDelta - 3.0 * std::sqrt(kDelta * (1.0 - kDelta) / trials);
    out.push_back(rate_check("ddpm-marginal-identity", static_cast<double>(pass_forward) / trials,
                             threshold, "one eta=1 step from forward samples"));
    out.push_back(rate_check("on-manifold-recombination",
                             static_cast<double>(pass_arbitrary) / trials, threshold,
                             "arbitrary on-manifold clean points"));
  }
}

// --------------------------------------------------------------- autoencoder

void autoencoder_checks(std::vector<VerifyCheck>& out) {
  LinearManifold m = make_manifold(64, 8, 7);
  const AutoencoderPair pair = perfect_linear_autoencoder(m);
  Rng rng(17);
  const int probes = 1000;
  double worst_identity = 0.0, worst_angle = 0.0, worst_tangent = 0.0, worst_pseudo = 0.0,
         worst_recon = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Eigen::VectorXd x = m.from_latent(2.0 * rng.normal_vector(8));
    const auto [identity, angle] = jacobian_identity_report(pair, x);
    worst_identity = std::max(worst_identity, identity);
    worst_angle = std::max(worst_angle, angle);

    const Eigen::VectorXd target = rng.normal_vector(64);
    const Eigen::VectorXd g = projected_gradient(
        pair, x, [&](const Eigen::VectorXd& p) { return (p - target).eval(); });
    worst_tangent = std::max(worst_tangent, m.orthogonal_part(g).norm());

    const Eigen::VectorXd z = rng.normal_vector(8);
    worst_pseudo = std::max(worst_pseudo, (pair.encode(pair.decode(z)) - z).norm());
    worst_recon = std::max(worst_recon, (pair.decode(pair.encode(x)) - x).norm());
  }
  out.push_back(bound_check("encoder-decoder-identity", worst_identity, 1e-10, "||J_E J_D - I||"));
  out.push_back(bound_check("jacobian-range-angle", worst_angle, 1e-8, "principal angle, rad"));
  out.push_back(
      bound_check("projected-gradient-tangency", worst_tangent, 1e-10, "orthogonal norm"));
  out.push_back(bound_check("pseudoinverse-pair", worst_pseudo, 1e-12, "||E(D(z)) - z||"));
  out.push_back(bound_check("on-manifold-reconstruction", worst_recon, 1e-12, "||D(E(x)) - x||"));
}

// --------------------------------------------------------------------- bound

void bound_checks(std::vector<VerifyCheck>& out) {
  Lab lab = Lab::standard();
  const int d = lab.manifold.ambient_dim();
  NoiseSchedule sch = NoiseSchedule::linear_beta(50, 0.5);
  Rng rng(19);
  double worst_violation = -1e9;  // lhs - (rhs + 1e-9), must stay <= 0
  int violations = 0;
  const int steps = 100;
  for (int i = 0; i < steps; ++i) {
    const int t = 1 + static_cast<int>(rng.uniform() * 49.999);
    const double ab = sch.alpha_bar(t);
    const Eigen::VectorXd x = lab.prior.sample(rng);
    const Eigen::VectorXd x_t = std::sqrt(ab) * x + std::sqrt(1.0 - ab) * rng.normal_vector(d);
    const double rho = 0.01 + 0.5 * rng.uniform();
    std::shared_ptr<GuidanceLoss> loss;
    if (i % 2 == 0) {
      Eigen::MatrixXd a = rng.normal_matrix(4, d);
      for (int r = 0; r < a.rows(); ++r) a.row(r) /= a.row(r).norm();
      loss = std::make_shared<LinearInverseLoss>(a, rng.normal_vector(4), 1.0);
    } else {
      loss = std::make_shared<QuadraticTargetLoss>(3.0 * rng.normal_vector(d));
    }
    const BoundAuditResult audit = bound_audit(x_t, lab.denoiser, sch, t, *loss, rho, rng);
    const double violation = audit.lhs - (audit.rhs + 1e-9);
    worst_violation = std::max(worst_violation, violation);
    if (violation > 0.0) ++violations;
  }
  out.push_back({"dps-vicinity-bound", violations == 0, -worst_violation,
                 std::to_string(steps) + " paired steps, shared noise"});

  {  // Zero loss gradient: both sides vanish.
    const Eigen::VectorXd x = lab.prior.sample(rng);
    const double ab = sch.alpha_bar(25);
    const Eigen::VectorXd x_t = std::sqrt(ab) * x + std::sqrt(1.0 - ab) * rng.normal_vector(d);
    const Eigen::VectorXd eps_hat = lab.denoiser.eps_hat(x_t, ab);
    const Eigen::VectorXd x0 = tweedie_estimate(x_t, eps_hat, ab);
    Eigen::MatrixXd a = rng.normal_matrix(4, d);
    const LinearInverseLoss loss(a, a * x0, 1.0);  // gradient vanishes at x0
    const BoundAuditResult audit = bound_audit(x_t, lab.denoiser, sch, 25, loss, 0.3, rng);
    out.push_back(bound_check("zero-gradient-degenerate", audit.lhs + audit.rhs, 1e-10,
                              "lhs and rhs at a stationary estimate"));
  }
}

// ----------------------------------------------------------------- gradients

void gradient_checks(std::vector<VerifyCheck>& out) {
  Lab lab = Lab::standard(16, 4, 2, 1.5, 0.5);
  const int d = 16;
  Rng rng(23);
  const int probes = 100;

  Eigen::MatrixXd a = rng.normal_matrix(5, d);
  for (int r = 0; r < a.rows(); ++r) a.row(r) /= a.row(r).norm();
  const LinearInverseLoss linear(a, rng.normal_vector(5), 7.5);
  const QuadraticTargetLoss quad(2.0 * rng.normal_vector(d));

  double worst_linear = 0.0, worst_quad = 0.0, worst_denoiser = 0.0;
  for (int i = 0; i < probes; ++i) {
    const Eigen::VectorXd x = 2.0 * rng.normal_vector(d);
    const double h = 1e-5 * (1.0 + x.norm());
    worst_linear = std::max(
        worst_linear,
        fd_audit_gradient([&](const Eigen::VectorXd& p) { return linear.value(p); },
                          [&](const Eigen::VectorXd& p) { return linear.gradient(p); }, x, h));
    worst_quad = std::max(
        worst_quad,
        fd_audit_gradient([&](const Eigen::VectorXd& p) { return quad.value(p); },
                          [&](const Eigen::VectorXd& p) { return quad.gradient(p); }, x, h));
    const double ab = 0.15 + 0.7 * rng.uniform();
    const Eigen::VectorXd xs = lab.prior.sample(rng);
    const Eigen::VectorXd x_t = std::sqrt(ab) * xs + std::sqrt(1.0 - ab) * rng.normal_vector(d);
    worst_denoiser = std::max(
        worst_denoiser,
        fd_audit([&](const Eigen::VectorXd& p) { return lab.denoiser.eps_hat(p, ab); },
                 [&](const Eigen::VectorXd& p) { return lab.denoiser.jacobian(p, ab); }, x_t,
                 1e-5 * (1.0 + x_t.norm())));
  }
  out.push_back(bound_check("linear-inverse-gradient-fd", worst_linear, 1e-5, "rel err"));
  out.push_back(bound_check("quadratic-target-gradient-fd", worst_quad, 1e-5, "rel err"));
  out.push_back(bound_check("denoiser-jacobian-fd", worst_denoiser, 1e-4, "rel err"));
}

}  // namespace

VerifyReport verify(const std::string& suite) {
  VerifyReport report;
  report.suite = suite;
  const bool all = suite == "all";
  if (all || suite == "concentration") concentration_checks(report.checks);
  if (all || suite == "shortcut") shortcut_checks(report.checks);
  if (all || suite == "autoencoder") autoencoder_checks(report.checks);
  if (all || suite == "bound") bound_checks(report.checks);
  if (all || suite == "gradients") gradient_checks(report.checks);
  if (report.checks.empty())
    throw std::invalid_argument(
        "unknown suite '" + suite +
        "' (expected concentration|shortcut|autoencoder|bound|gradients|all)");
  return report;
}

}  // namespace mpgd

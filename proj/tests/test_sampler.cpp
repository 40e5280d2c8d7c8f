#include <doctest.h>

#include <cmath>

#include "mpgd/geometry.hpp"
#include "mpgd/numerics.hpp"
#include "mpgd/sampler.hpp"

using namespace mpgd;

namespace {

MixturePrior point_prior(const LinearManifold& m, const Eigen::VectorXd& latent_mean) {
  Eigen::VectorXd w(1);
  w << 1.0;
  return MixturePrior(m, w, {latent_mean},
                      {Eigen::MatrixXd::Zero(m.latent_dim(), m.latent_dim())});
}

}  // namespace

TEST_CASE("NoiseSchedule construction and invariants") {
  SUBCASE("linear-beta is strictly decreasing from 1") {
    const NoiseSchedule sch = NoiseSchedule::linear_beta(50, 0.5);
    CHECK(sch.steps() == 50);
    CHECK(sch.alpha_bar(0) == 1.0);
    for (int t = 1; t <= 50; ++t) {
      CHECK(sch.alpha_bar(t) < sch.alpha_bar(t - 1));
      CHECK(sch.alpha_bar(t) > 0.0);
      CHECK(1.0 - sch.alpha_bar(t - 1) - sch.sigma(t) * sch.sigma(t) >= -1e-12);
    }
  }
  SUBCASE("log-linear hits its endpoints") {
    const NoiseSchedule sch = NoiseSchedule::log_linear(20, 1.0);
    CHECK(sch.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(sch.alpha_bar(20) == doctest::Approx(4e-5).epsilon(1e-12));
  }
  SUBCASE("rejects invalid sequences") {
    CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.5}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5}, 1.5), std::invalid_argument);
  }
}

TEST_CASE("sigma") {
  SUBCASE("eta = 0 is deterministic") {
    const NoiseSchedule sch = NoiseSchedule::linear_beta(30, 0.0);
    for (int t = 1; t <= 30; ++t) CHECK(sch.sigma(t) == 0.0);
  }
  SUBCASE("flat segment gives zero noise") {
    CHECK(sigma_from(1.0, 0.6, 0.6) == 0.0);
  }
  SUBCASE("frozen value") {
    CHECK(sigma_from(1.0, 0.8, 0.5) == doctest::Approx(0.38729833462074169).epsilon(1e-15));
  }
  SUBCASE("t out of range") {
    const NoiseSchedule sch = NoiseSchedule::linear_beta(10, 0.5);
    CHECK_THROWS_AS(sch.sigma(0), std::out_of_range);
    CHECK_THROWS_AS(sch.sigma(11), std::out_of_range);
  }
}

TEST_CASE("tweedie_estimate") {
  Eigen::VectorXd x(2);
  x << 2.0, 0.0;
  SUBCASE("no noise is the identity") {
    CHECK((tweedie_estimate(x, Eigen::VectorXd::Ones(2), 1.0) - x).norm() == 0.0);
  }
  SUBCASE("zero eps rescales") {
    const Eigen::VectorXd got = tweedie_estimate(x, Eigen::VectorXd::Zero(2), 0.25);
    CHECK((got - 2.0 * x).norm() < 1e-15);
  }
  SUBCASE("frozen hand value") {
    Eigen::VectorXd eps(2);
    eps << 0.4, 0.0;
    const Eigen::VectorXd got = tweedie_estimate(x, eps, 0.25);
    CHECK(got[0] == doctest::Approx(3.3071796769724491).epsilon(1e-15));
    CHECK(got[1] == 0.0);
  }
  SUBCASE("rejects alpha_bar = 0") {
    CHECK_THROWS_AS(tweedie_estimate(x, x, 0.0), std::invalid_argument);
  }
}

TEST_CASE("ddim_step") {
  const NoiseSchedule sch = NoiseSchedule::linear_beta(10, 0.0);
  Eigen::VectorXd x0(3), eps(3), x(3);
  x0 << 1.0, 2.0, 3.0;
  eps << 0.1, -0.2, 0.3;
  x = x0 + eps;

  SUBCASE("final step collapses to the clean estimate") {
    // abar_0 = 1 and sigma_1 = 0, so x_0 = x0_est exactly.
    Rng rng(1);
    const Eigen::VectorXd got = ddim_step(x, eps, x0, sch, 1, rng);
    CHECK((got - x0).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("same seed, same output") {
    const NoiseSchedule noisy = NoiseSchedule::linear_beta(10, 1.0);
    Rng a(9), b(9);
    const Eigen::VectorXd ga = ddim_step(x, eps, x0, noisy, 5, a);
    const Eigen::VectorXd gb = ddim_step(x, eps, x0, noisy, 5, b);
    CHECK((ga - gb).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("total-noise variance matches 1 - abar_prev") {
    const NoiseSchedule noisy = NoiseSchedule::linear_beta(10, 1.0);
    const int t = 5;
    const double ab_prev = noisy.alpha_bar(t - 1);
    const double s = noisy.sigma(t);
    const double coeff = std::sqrt(1.0 - ab_prev - s * s);
    Rng rng(3);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = coeff * rng.normal() + s * rng.normal();
      sum += v;
      sum2 += v * v;
    }
    const double var = (sum2 - sum * sum / n) / (n - 1);
    const double want = 1.0 - ab_prev;
    CHECK(std::abs(var - want) <= 3.0 * want * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("renoise") {
  SUBCASE("flat ratio is the identity on values") {
    Eigen::VectorXd x(2);
    x << 1.0, -2.0;
    Rng rng(1);
    const Eigen::VectorXd got = renoise_with_noise(x, 1.0, rng.normal_vector(2));
    CHECK((got - x).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("variance matches 1 - ratio") {
    const NoiseSchedule sch = NoiseSchedule::linear_beta(20, 0.5);
    const int t = 10;
    const double ratio = sch.alpha_bar(t) / sch.alpha_bar(t - 1);
    Rng rng(5);
    const int n = 10000;
    double sum = 0.0, sum2 = 0.0;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    for (int i = 0; i < n; ++i) {
      const double v = renoise(zero, sch, t, rng)[0];
      sum += v;
      sum2 += v * v;
    }
    const double var = (sum2 - sum * sum / n) / (n - 1);
    const double want = 1.0 - ratio;
    CHECK(std::abs(var - want) <= 3.0 * want * std::sqrt(2.0 / (n - 1)));
  }
  SUBCASE("composition keeps the forward marginal (shell test)") {
    const LinearManifold m = make_manifold(64, 8, 7);
    Rng rng(11);
    Eigen::VectorXd w(1);
    w << 1.0;
    const MixturePrior prior(m, w, {2.0 * rng.normal_vector(8)},
                             {0.5 * Eigen::MatrixXd::Identity(8, 8)});
    const NoiseSchedule sch = NoiseSchedule::linear_beta(50, 0.5);
    const int t = 25;
    const double delta = 0.05;
    const double eps = concentration_epsilon(delta, 56);
    const int n = 10000;
    int pass = 0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x = prior.sample(rng);
      const Eigen::VectorXd x_prev =
          std::sqrt(sch.alpha_bar(t - 1)) * x +
          std::sqrt(1.0 - sch.alpha_bar(t - 1)) * rng.normal_vector(64);
      const Eigen::VectorXd x_t = renoise(x_prev, sch, t, rng);
      if (shell_band_test(x_t, m, sch.alpha_bar(t), eps)) ++pass;
    }
    const double rate = static_cast<double>(pass) / n;
    CHECK(rate >= 1.0 - delta - 3.0 * std::sqrt(delta * (1.0 - delta) / n));
  }
}

TEST_CASE("sample_unconditional") {
  const LinearManifold m = make_manifold(16, 3, 5);
  Eigen::VectorXd mu(3);
  mu << 1.0, -0.5, 0.25;
  const MixturePrior prior = point_prior(m, mu);
  const Denoiser den = make_optimal_denoiser(prior);
  const NoiseSchedule sch = NoiseSchedule::linear_beta(20, 0.0);

  SUBCASE("point prior: chains converge to the mean") {
    const auto records = sample_unconditional(den, sch, 16, 4, 99);
    for (const auto& rec : records) {
      CHECK((rec.terminal - m.from_latent(mu)).norm() < 1e-6);
      CHECK(m.orthogonal_part(rec.terminal).norm() < 1e-6);
      CHECK(rec.telemetry.denoiser_evals == 20);
      CHECK(rec.telemetry.jacobian_products == 0);
    }
  }
  SUBCASE("trajectory time indices decrease") {
    const auto records = sample_unconditional(den, sch, 16, 1, 7);
    const auto& steps = records[0].steps;
    for (std::size_t i = 1; i < steps.size(); ++i) CHECK(steps[i].t == steps[i - 1].t - 1);
    CHECK(steps.front().t == 20);
    CHECK(steps.back().t == 1);
  }
  SUBCASE("bitwise reproducible given the seed") {
    const auto a = sample_unconditional(den, sch, 16, 2, 1234);
    const auto b = sample_unconditional(den, sch, 16, 2, 1234);
    for (int c = 0; c < 2; ++c) {
      CHECK((a[c].terminal - b[c].terminal).cwiseAbs().maxCoeff() == 0.0);
      for (std::size_t i = 0; i < a[c].steps.size(); ++i) {
        CHECK((a[c].steps[i].x_t - b[c].steps[i].x_t).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
}

TEST_CASE("defective denoiser wraps the base with a unit-norm linear defect") {
  const LinearManifold m = make_manifold(8, 2, 3);
  Eigen::VectorXd mu(2);
  mu << 0.5, -0.5;
  const MixturePrior prior = point_prior(m, mu);
  const Denoiser base = make_optimal_denoiser(prior);
  const Denoiser bent = make_defective_denoiser(base, 8, 0.1, 42);
  Rng rng(1);
  const Eigen::VectorXd x = rng.normal_vector(8);
  const double ab = 0.5;
  const Eigen::VectorXd diff = bent.eps_hat(x, ab) - base.eps_hat(x, ab);
  CHECK(diff.norm() > 0.0);
  CHECK(diff.norm() <= 0.1 * x.norm() + 1e-12);
  const Eigen::MatrixXd jdiff = bent.jacobian(x, ab) - base.jacobian(x, ab);
  CHECK(spectral_norm(jdiff) == doctest::Approx(0.1).epsilon(1e-9));
}

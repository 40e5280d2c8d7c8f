#include <doctest.h>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "mpgd/geometry.hpp"
#include "mpgd/rng.hpp"

using namespace mpgd;

TEST_CASE("make_manifold basic properties") {
  SUBCASE("d=2 k=1 yields a unit column") {
    const LinearManifold m = make_manifold(2, 1, 0);
    CHECK(m.basis().col(0).norm() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("orthonormality at d=64 k=8") {
    const LinearManifold m = make_manifold(64, 8, 7);
    const Eigen::MatrixXd gram = m.basis().transpose() * m.basis();
    CHECK((gram - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("deterministic given seed") {
    const LinearManifold a = make_manifold(3, 2, 1);
    const LinearManifold b = make_manifold(3, 2, 1);
    CHECK((a.basis() - b.basis()).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rejects bad dimensions") {
    CHECK_THROWS_AS(make_manifold(4, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_manifold(4, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_manifold(4, 0, 0), std::invalid_argument);
  }
  SUBCASE("sign convention: leading entries positive") {
    const LinearManifold m = make_manifold(16, 3, 42);
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 16; ++i) {
        if (std::abs(m.basis()(i, j)) > 1e-12) {
          CHECK(m.basis()(i, j) > 0.0);
          break;
        }
      }
    }
  }
}

TEST_CASE("off_manifold_distance") {
  const LinearManifold m = make_manifold(16, 3, 5);
  Rng rng(1);

  SUBCASE("on-manifold points have distance zero") {
    const Eigen::VectorXd x = m.from_latent(rng.normal_vector(3));
    CHECK(off_manifold_distance(x, 0.5, m) < 1e-12);
  }
  SUBCASE("axis-aligned example") {
    Eigen::MatrixXd basis(2, 1);
    basis << 1.0, 0.0;
    const LinearManifold e1(2, 1, basis);
    Eigen::VectorXd x(2);
    x << 3.0, 4.0;
    CHECK(off_manifold_distance(x, 1.0, e1) == doctest::Approx(4.0).epsilon(1e-14));
  }
  SUBCASE("matches the least-squares oracle") {
    // Independent route: min_z ||x - U z|| via a QR solve.
    const Eigen::VectorXd x = rng.normal_vector(16);
    const Eigen::VectorXd z = m.basis().colPivHouseholderQr().solve(x);
    const double oracle = (x - m.basis() * z).norm();
    CHECK(off_manifold_distance(x, 1.0, m) == doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("independent of nu") {
    const Eigen::VectorXd x = rng.normal_vector(16);
    const double base = off_manifold_distance(x, 1.0, m);
    for (double nu : {0.1, 0.5, 2.0, 17.0}) {
      CHECK(off_manifold_distance(x, nu, m) == doctest::Approx(base).epsilon(1e-14));
    }
  }
  SUBCASE("rejects non-finite input and bad nu") {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(16);
    x[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(off_manifold_distance(x, 1.0, m), std::invalid_argument);
    CHECK_THROWS_AS(off_manifold_distance(Eigen::VectorXd::Zero(16), 0.0, m),
                    std::invalid_argument);
  }
}

TEST_CASE("projector idempotence") {
  const LinearManifold m = make_manifold(32, 6, 9);
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd x = rng.normal_vector(32);
    const Eigen::VectorXd once = m.project_tangent(x);
    const Eigen::VectorXd twice = m.project_tangent(once);
    CHECK((twice - once).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("concentration_epsilon") {
  SUBCASE("boundary case eps' = 1") {
    // delta = 2 e^{-dof} makes eps' = 1; the lower branch saturates at 1.
    const int dof = 56;
    const double delta = 2.0 * std::exp(-static_cast<double>(dof));
    CHECK(concentration_epsilon(delta, dof) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("frozen value at delta=0.05 dof=100") {
    CHECK(concentration_epsilon(0.05, 100) ==
          doctest::Approx(0.20743807526938914).epsilon(1e-14));
  }
  SUBCASE("monotone in delta") {
    CHECK(concentration_epsilon(0.01, 100) > concentration_epsilon(0.05, 100));
  }
  SUBCASE("monotone over a grid") {
    const double deltas[] = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
    const int dofs[] = {1, 2, 8, 32, 100, 1000};
    for (int dof : dofs)
      for (std::size_t i = 1; i < std::size(deltas); ++i)
        CHECK(concentration_epsilon(deltas[i], dof) <=
              concentration_epsilon(deltas[i - 1], dof) + 1e-15);
    for (double delta : deltas)
      for (std::size_t i = 1; i < std::size(dofs); ++i)
        CHECK(concentration_epsilon(delta, dofs[i]) <=
              concentration_epsilon(delta, dofs[i - 1]) + 1e-15);
  }
  SUBCASE("rejects bad delta") {
    CHECK_THROWS_AS(concentration_epsilon(0.0, 10), std::invalid_argument);
    CHECK_THROWS_AS(concentration_epsilon(1.5, 10), std::invalid_argument);
  }
}

TEST_CASE("shell_band_test") {
  const LinearManifold m = make_manifold(64, 8, 7);
  const double ab = 0.5;
  const double r_t = shell_radius(ab, 64, 8);
  Rng rng(3);

  SUBCASE("point exactly on the shell passes for any band") {
    Eigen::VectorXd ortho = m.orthogonal_part(rng.normal_vector(64));
    ortho *= r_t / ortho.norm();
    const Eigen::VectorXd x = m.from_latent(rng.normal_vector(8)) + ortho;
    CHECK(shell_band_test(x, m, ab, 1e-6));
  }
  SUBCASE("on-manifold point fails for eps < 1") {
    const Eigen::VectorXd x = m.from_latent(rng.normal_vector(8));
    CHECK_FALSE(shell_band_test(x, m, ab, 0.99));
  }
  SUBCASE("forward samples concentrate at the stated rate") {
    // The statistical content of the concentration statement.
    Rng prior_rng(11);
    const Eigen::VectorXd mean = m.from_latent(2.0 * prior_rng.normal_vector(8));
    const double delta = 0.05;
    const double eps = concentration_epsilon(delta, 64 - 8);
    const int n = 10000;
    int pass = 0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd x =
          mean + m.from_latent(0.7 * rng.normal_vector(8));  // on-manifold data
      const Eigen::VectorXd x_t = std::sqrt(ab) * x + std::sqrt(1 - ab) * rng.normal_vector(64);
      if (shell_band_test(x_t, m, ab, eps)) ++pass;
    }
    const double rate = static_cast<double>(pass) / n;
    CHECK(rate >= 1.0 - delta - 3.0 * std::sqrt(delta * (1 - delta) / n));
  }
  SUBCASE("rejects alpha_bar outside (0,1)") {
    CHECK_THROWS_AS(shell_band_test(Eigen::VectorXd::Zero(64), m, 1.0, 0.5),
                    std::invalid_argument);
  }
}

TEST_CASE("ShellSpec carries the schedule-derived radius") {
  const ShellSpec spec = ShellSpec::from_noise_level(0.5, 64, 8, 0.3);
  CHECK(spec.nu == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(spec.radius == doctest::Approx(std::sqrt(0.5 * 56)).epsilon(1e-15));
  CHECK(spec.band_epsilon == 0.3);
}

TEST_CASE("manifold JSON round-trip is exact") {
  const LinearManifold m = make_manifold(12, 4, 33);
  const nlohmann::json j = manifold_to_json(m);
  const LinearManifold back = manifold_from_json(j);
  CHECK((back.basis() - m.basis()).cwiseAbs().maxCoeff() == 0.0);
  // Serialized form is stable under a round trip as well.
  CHECK(manifold_to_json(back).dump() == j.dump());
}

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mpgd/harness.hpp"

using namespace mpgd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const std::string& method) {
  ExperimentConfig cfg;
  cfg.method = method;
  cfg.manifold = {16, 4, 7};
  cfg.prior = {2, 11, 1.5, 0.5, 0.0, 0.0};
  cfg.schedule = {10, "linear-beta", 0.0};
  cfg.loss.measurements = 3;
  cfg.loss.seed = 21;
  cfg.step_size.rho = 0.01;
  cfg.chains = 3;
  cfg.master_seed = 99;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty document yields the defaults") {
    const ExperimentConfig cfg = ExperimentConfig::from_json(nlohmann::json::object());
    CHECK(cfg.method == "ddim");
    CHECK(cfg.manifold.d == 64);
    CHECK(cfg.chains == 4);
  }
  SUBCASE("round-trips through JSON") {
    const ExperimentConfig cfg = small_config("mpgd-ae");
    const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
  }
  SUBCASE("errors name the offending key") {
    nlohmann::json j = {{"method", "warp-drive"}};
    try {
      ExperimentConfig::from_json(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.key == "method");
    }
    j = {{"schedule", {{"T", 0}}}};
    try {
      ExperimentConfig::from_json(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.key == "schedule.T");
    }
    j = {{"prior", {{"typo_key", 1}}}};
    try {
      ExperimentConfig::from_json(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.key == "prior.typo_key");
    }
  }
  SUBCASE("method and loss compatibility validated before sampling") {
    ExperimentConfig cfg = small_config("dps");
    cfg.inner.steps = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("config hash is canonical") {
  const char* a = R"({"manifold":{"d":16,"k":4,"seed":7},"chains":3})";
  const char* b = R"({"chains":3,"manifold":{"seed":7,"k":4,"d":16}})";
  CHECK(config_hash(nlohmann::json::parse(a)) == config_hash(nlohmann::json::parse(b)));
  const char* c = R"({"chains":4,"manifold":{"seed":7,"k":4,"d":16}})";
  CHECK(config_hash(nlohmann::json::parse(a)) != config_hash(nlohmann::json::parse(c)));
}

TEST_CASE("run_chains determinism and telemetry") {
  SUBCASE("bitwise identical reruns, independent of worker count") {
    for (const char* method : {"ddim", "dps", "mpgd", "mpgd-ae", "mpgd-z", "mpgd-ldm"}) {
      const ExperimentConfig cfg = small_config(method);
      const Problem prob = build_problem(cfg);
      const RunResult serial = run_chains(cfg, prob, 1);
      const RunResult pooled = run_chains(cfg, prob, 4);
      const RunResult again = run_chains(cfg, prob, 1);
      REQUIRE(serial.chains.size() == 3);
      for (int c = 0; c < 3; ++c) {
        CHECK((serial.chains[c].terminal - pooled.chains[c].terminal).cwiseAbs().maxCoeff() ==
              0.0);
        CHECK((serial.chains[c].terminal - again.chains[c].terminal).cwiseAbs().maxCoeff() ==
              0.0);
      }
    }
  }
  SUBCASE("cost asymmetry shows in the counters") {
    const ExperimentConfig dps_cfg = small_config("dps");
    const RunResult dps_run = run_chains(dps_cfg, build_problem(dps_cfg), 1);
    for (const auto& c : dps_run.chains) {
      CHECK(c.telemetry.jacobian_products == dps_cfg.schedule.steps);
    }
    for (const char* method : {"mpgd", "mpgd-ae", "mpgd-z", "mpgd-ldm"}) {
      const ExperimentConfig cfg = small_config(method);
      const RunResult run = run_chains(cfg, build_problem(cfg), 1);
      for (const auto& c : run.chains) {
        CHECK(c.telemetry.jacobian_products == 0);
      }
    }
  }
  SUBCASE("time travel and inner steps still deterministic") {
    ExperimentConfig cfg = small_config("mpgd-ae");
    cfg.travel = 2;
    cfg.inner.steps = 3;
    cfg.inner.optimizer = "cg";
    const Problem prob = build_problem(cfg);
    const RunResult a = run_chains(cfg, prob, 1);
    const RunResult b = run_chains(cfg, prob, 3);
    for (int c = 0; c < 3; ++c) {
      CHECK((a.chains[c].terminal - b.chains[c].terminal).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("run_experiment emits the documented files") {
  const fs::path dir = fs::temp_directory_path() / "mpgd_test_run";
  fs::remove_all(dir);
  const ExperimentConfig cfg = small_config("mpgd");

  SUBCASE("default run writes three files") {
    const RunRecord record = run_experiment(cfg, dir.string(), 1, true);
    CHECK(fs::exists(dir / "trajectories.csv"));
    CHECK(fs::exists(dir / "diagnostics.csv"));
    CHECK(fs::exists(dir / "run.json"));
    CHECK(record.output_files.size() == 3);

    const std::string diag = slurp(dir / "diagnostics.csv");
    CHECK(diag.rfind("method,chain,t,shell_residual,off_manifold_norm,cosine,bound_lhs,"
                     "bound_rhs,kappa",
                     0) == 0);
    const std::string traj = slurp(dir / "trajectories.csv");
    CHECK(traj.rfind("chain,t,x_0", 0) == 0);
  }
  SUBCASE("overwrite requires force") {
    run_experiment(cfg, dir.string(), 1, true);
    CHECK_THROWS_AS(run_experiment(cfg, dir.string(), 1, false), ConfigError);
  }
  SUBCASE("--no-trajectories analogue") {
    fs::remove_all(dir);
    ExperimentConfig no_traj = cfg;
    no_traj.output.trajectories = false;
    run_experiment(no_traj, dir.string(), 1, true);
    CHECK_FALSE(fs::exists(dir / "trajectories.csv"));
    CHECK(fs::exists(dir / "diagnostics.csv"));
  }
  SUBCASE("record JSON round-trips canonically") {
    fs::remove_all(dir);
    const RunRecord record = run_experiment(cfg, dir.string(), 1, true);
    const nlohmann::json j = record.to_json();
    const RunRecord back = RunRecord::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.config_hash == config_hash(record.config));
    CHECK(back.rng_algorithm == std::string(Rng::kAlgorithm));
  }
  fs::remove_all(dir);
}

TEST_CASE("eta=0 reruns are bitwise identical at the file level") {
  const fs::path dir_a = fs::temp_directory_path() / "mpgd_det_a";
  const fs::path dir_b = fs::temp_directory_path() / "mpgd_det_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  const ExperimentConfig cfg = small_config("mpgd-ae");
  run_experiment(cfg, dir_a.string(), 1, true);
  run_experiment(cfg, dir_b.string(), 4, true);
  CHECK(slurp(dir_a / "trajectories.csv") == slurp(dir_b / "trajectories.csv"));
  CHECK(slurp(dir_a / "diagnostics.csv") == slurp(dir_b / "diagnostics.csv"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("verify suites") {
  SUBCASE("autoencoder suite passes") {
    const VerifyReport report = verify("autoencoder");
    CHECK(report.all_pass());
    CHECK(report.checks.size() >= 5);
  }
  SUBCASE("gradients suite passes") {
    const VerifyReport report = verify("gradients");
    CHECK(report.all_pass());
  }
  SUBCASE("unknown suite rejected") {
    CHECK_THROWS_AS(verify("nonsense"), std::invalid_argument);
  }
  SUBCASE("report serializes with margins") {
    const VerifyReport report = verify("autoencoder");
    const nlohmann::json j = report.to_json();
    CHECK(j.at("pass").get<bool>());
    CHECK(j.at("checks").size() == report.checks.size());
    for (const auto& c : j.at("checks")) {
      CHECK(c.contains("margin"));
    }
  }
}

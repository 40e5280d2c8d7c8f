#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mpgd/diagnostics.hpp"
#include "mpgd/guidance.hpp"
#include "mpgd/prior.hpp"
#include "mpgd/sampler.hpp"

namespace mpgd {

/// Config validation failure; `key` names the offending field.
struct ConfigError : std::runtime_error {
  ConfigError(std::string key_, const std::string& what_)
      : std::runtime_error("config error at '" + key_ + "': " + what_), key(std::move(key_)) {}
  std::string key;
};

struct ManifoldConfig {
  int d = 64;
  int k = 8;
  std::uint64_t seed = 7;
};

/// Mixture generated from a seed: latent means ~ mean_scale * N(0, I_k),
/// covariances cov_scale * I_k, uniform weights. off_manifold_scale shifts
/// each ambient mean by a random orthogonal offset of that length and
/// ortho_var adds orthogonal thickness — both zero for the standard
/// on-manifold prior.
struct PriorConfig {
  int components = 1;
  std::uint64_t seed = 11;
  double mean_scale = 1.5;
  double cov_scale = 1.0;
  double off_manifold_scale = 0.0;
  double ortho_var = 0.0;
};

struct ScheduleConfig {
  int steps = 50;
  std::string alpha_bar_mode = "linear-beta";  // or "log-linear"
  double eta = 0.0;
};

struct LossConfig {
  std::string type = "linear-inverse";  // or "quadratic-target"
  // linear-inverse: y = A x* + noise with x* a prior draw.
  int measurements = 4;
  std::string a_mode = "gaussian";  // unit-norm Gaussian rows
  double gamma = 200.0;
  double noise_var = 0.0025;  // 0.05^2
  // quadratic-target: on-manifold target with latent coords
  // target_scale * N(0, I_k).
  double target_scale = 4.0;
  std::uint64_t seed = 21;
};

struct StepSizeConfig {
  std::string mode = "constant";
  double rho = 0.01;
};

struct AeConfig {
  std::string kind = "perfect";  // or "perturbed"
  double scale = 0.1;
  std::uint64_t seed = 3;
};

struct WindowConfig {
  double hi = 0.5;
  double lo = 0.3;
};

struct InnerConfig {
  int steps = 1;
  std::string optimizer = "gd";  // or "cg"
};

/// Optional controlled denoiser defect (see make_defective_denoiser);
/// scale 0 keeps the exact optimal denoiser.
struct DenoiserConfig {
  double defect_scale = 0.0;
  std::uint64_t defect_seed = 97;
};

struct OutputConfig {
  bool trajectories = true;
  bool diagnostics = true;
  bool trajectories_json = false;
};

struct ExperimentConfig {
  ManifoldConfig manifold;
  PriorConfig prior;
  ScheduleConfig schedule;
  std::string method = "ddim";  // ddim|dps|mpgd|mpgd-ae|mpgd-z|mpgd-ldm
  LossConfig loss;
  StepSizeConfig step_size;
  AeConfig ae;
  WindowConfig window;
  InnerConfig inner;
  int travel = 0;
  int chains = 4;
  std::uint64_t master_seed = 1234;
  DenoiserConfig denoiser;
  OutputConfig output;

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;  // canonical (sorted keys)
  void validate() const;
};

/// Everything a run needs, instantiated from a config.
struct Problem {
  LinearManifold manifold;
  MixturePrior prior;
  Denoiser denoiser;
  NoiseSchedule schedule;
  std::shared_ptr<GuidanceLoss> loss;
  AutoencoderPair pair;
  // LDM runs diffuse in latent space with their own denoiser.
  std::shared_ptr<MixturePrior> latent_prior;
  Denoiser latent_denoiser;
};
Problem build_problem(const ExperimentConfig& config);

struct ChainSummary {
  int chain = 0;
  Eigen::VectorXd terminal;
  double terminal_loss = 0.0;
  StepTelemetry telemetry;
};

struct RunRecord {
  std::string config_hash;
  nlohmann::json config;
  std::string library_version;
  std::string rng_algorithm;
  std::vector<ChainSummary> chains;
  std::vector<std::string> output_files;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// Runs every chain of the configured experiment (worker threads fan out over
/// chain indices; outputs merge by index, so worker count never changes
/// results), writes trajectories.csv / diagnostics.csv / run.json to out_dir,
/// and returns the record. Existing files require force to overwrite.
RunRecord run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                         int workers = 1, bool force = false);

/// In-memory variant used by tests; writes nothing.
struct RunResult {
  std::vector<TrajectoryRecord> trajectories;
  std::vector<ChainSummary> chains;
};
RunResult run_chains(const ExperimentConfig& config, const Problem& problem, int workers = 1);

struct VerifyCheck {
  std::string name;
  bool pass = false;
  double margin = 0.0;  // signed distance to the threshold (>= 0 passes)
  std::string details;
};

struct VerifyReport {
  std::string suite;
  std::vector<VerifyCheck> checks;

  bool all_pass() const;
  nlohmann::json to_json() const;
};

/// Theorem suites: concentration | shortcut | autoencoder | bound | gradients
/// | all.
VerifyReport verify(const std::string& suite);

std::uint64_t fnv1a64(std::string_view bytes);
/// Hash of the canonical (key-sorted) serialization; stable under key
/// reordering of the input document.
std::string config_hash(const nlohmann::json& config);

void write_trajectories_csv(const std::string& path,
                            const std::vector<TrajectoryRecord>& trajectories,
                            const LinearManifold* manifold, const NoiseSchedule& schedule);
void write_diagnostics_csv(const std::string& path, const std::string& method,
                           const std::vector<TrajectoryRecord>& trajectories,
                           const LinearManifold* manifold, const NoiseSchedule& schedule);

}  // namespace mpgd

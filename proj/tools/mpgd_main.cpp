#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "mpgd/harness.hpp"
#include "mpgd/version.hpp"

namespace {

using mpgd::ExperimentConfig;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitVerification = 3;

struct CommonOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<int> steps;
  std::optional<double> eta;
  std::optional<double> rho;
  std::optional<int> travel;
  std::optional<int> inner;
  std::optional<std::string> optimizer;
  int workers = 1;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt, bool config_required) {
  auto* c = cmd->add_option("--config", opt.config_path, "experiment config JSON");
  if (config_required) c->required();
  cmd->add_option("--out", opt.out_dir, "output directory");
  cmd->add_option("--seed", opt.seed, "override master_seed");
  cmd->add_option("--method", opt.method, "override method");
  cmd->add_option("--steps", opt.steps, "override schedule.T");
  cmd->add_option("--eta", opt.eta, "override schedule.eta");
  cmd->add_option("--rho", opt.rho, "override step_size.rho");
  cmd->add_option("--travel", opt.travel, "override time-travel repeats");
  cmd->add_option("--inner", opt.inner, "override inner optimization steps");
  cmd->add_option("--optimizer", opt.optimizer, "inner optimizer: gd or cg");
  cmd->add_option("--workers", opt.workers, "worker threads across chains");
  cmd->add_flag("--force", opt.force, "overwrite existing outputs");
}

ExperimentConfig load_config(const CommonOptions& opt) {
  nlohmann::json j = nlohmann::json::object();
  if (!opt.config_path.empty()) {
    std::ifstream f(opt.config_path);
    if (!f) throw mpgd::ConfigError("config", "cannot read " + opt.config_path);
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw mpgd::ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
  }
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (opt.method) cfg.method = *opt.method;
  if (opt.steps) cfg.schedule.steps = *opt.steps;
  if (opt.eta) cfg.schedule.eta = *opt.eta;
  if (opt.rho) cfg.step_size.rho = *opt.rho;
  if (opt.travel) cfg.travel = *opt.travel;
  if (opt.inner) cfg.inner.steps = *opt.inner;
  if (opt.optimizer) cfg.inner.optimizer = *opt.optimizer;
  cfg.validate();
  return cfg;
}

int run_and_report(const ExperimentConfig& cfg, const CommonOptions& opt) {
  const mpgd::RunRecord record = mpgd::run_experiment(cfg, opt.out_dir, opt.workers, opt.force);
  double mean_loss = 0.0;
  for (const auto& c : record.chains) mean_loss += c.terminal_loss;
  mean_loss /= static_cast<double>(record.chains.size());
  std::printf("method=%s chains=%zu mean_terminal_loss=%.6g wall=%.2fs hash=%s\n",
              cfg.method.c_str(), record.chains.size(), mean_loss, record.wall_seconds,
              record.config_hash.c_str());
  std::printf("outputs in %s: ", opt.out_dir.c_str());
  for (const auto& f : record.output_files) std::printf("%s ", f.c_str());
  std::printf("\n");
  return kExitOk;
}

/// Per-step bound-audit columns for the configured problem, written next to
/// the standard diagnostics.
int diagnose(const ExperimentConfig& cfg, const CommonOptions& opt) {
  mpgd::Problem problem = mpgd::build_problem(cfg);
  const mpgd::RunResult result = mpgd::run_chains(cfg, problem, opt.workers);

  std::filesystem::create_directories(opt.out_dir);
  const std::string path = opt.out_dir + "/diagnostics.csv";
  if (!opt.force && std::filesystem::exists(path))
    throw mpgd::ConfigError("output", path + " exists; pass --force to overwrite");

  std::ofstream f(path);
  f << "method,chain,t,shell_residual,off_manifold_norm,cosine,bound_lhs,bound_rhs,kappa\n";
  const bool latent = cfg.method == "mpgd-ldm";
  for (const auto& rec : result.trajectories) {
    const auto cosines = mpgd::alignment_curve(rec);
    mpgd::Rng audit_rng = mpgd::Rng::for_chain(cfg.master_seed ^ 0x5eedULL,
                                               static_cast<std::uint64_t>(rec.chain));
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
      const auto& step = rec.steps[i];
      f << cfg.method << ',' << rec.chain << ',' << step.t << ',';
      if (!latent) {
        const double ab = problem.schedule.alpha_bar(step.t);
        const double r_t = mpgd::shell_radius(ab, problem.manifold.ambient_dim(),
                                              problem.manifold.latent_dim());
        const double dist = mpgd::off_manifold_distance(step.x_t, std::sqrt(ab), problem.manifold);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g", std::abs(dist - r_t) / r_t,
                      problem.manifold.orthogonal_part(step.x0_est).norm());
        f << buf;
      } else {
        f << ',';
      }
      f << ',';
      if (cosines[i]) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", *cosines[i]);
        f << buf;
      }
      f << ',';
      if (!latent) {
        const mpgd::BoundAuditResult audit =
            mpgd::bound_audit(step.x_t, problem.denoiser, problem.schedule, step.t, *problem.loss,
                              cfg.step_size.rho, audit_rng);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", audit.lhs, audit.rhs, audit.kappa);
        f << buf;
      } else {
        f << ",,";
      }
      f << '\n';
    }
  }
  std::printf("diagnostics with bound audit written to %s\n", path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold-preserving guided diffusion laboratory"};
  app.set_version_flag("--version", mpgd::kLibraryVersion);
  app.require_subcommand(1);

  CommonOptions sample_opt, guide_opt, diag_opt;
  auto* sample = app.add_subcommand("sample", "unconditional sampling (method forced to ddim)");
  add_common(sample, sample_opt, false);
  auto* guide = app.add_subcommand("guide", "guided sampling with the configured method");
  add_common(guide, guide_opt, true);
  auto* diagnose_cmd =
      app.add_subcommand("diagnose", "run + full diagnostics including the DPS-distance audit");
  add_common(diagnose_cmd, diag_opt, true);

  std::string suite = "all";
  std::string report_path;
  auto* verify_cmd = app.add_subcommand(
      "verify", "theorem suites: concentration|shortcut|autoencoder|bound|gradients|all");
  verify_cmd->add_option("--suite", suite, "suite name")->capture_default_str();
  verify_cmd->add_option("--out", report_path, "write the JSON report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sample->parsed()) {
      ExperimentConfig cfg = load_config(sample_opt);
      cfg.method = "ddim";
      cfg.inner.steps = 1;
      return run_and_report(cfg, sample_opt);
    }
    if (guide->parsed()) {
      const ExperimentConfig cfg = load_config(guide_opt);
      return run_and_report(cfg, guide_opt);
    }
    if (diagnose_cmd->parsed()) {
      const ExperimentConfig cfg = load_config(diag_opt);
      return diagnose(cfg, diag_opt);
    }
    if (verify_cmd->parsed()) {
      const mpgd::VerifyReport report = mpgd::verify(suite);
      for (const auto& check : report.checks) {
        std::printf("[%s] %-34s margin=%.3e %s\n", check.pass ? "PASS" : "FAIL",
                    check.name.c_str(), check.margin, check.details.c_str());
      }
      if (!report_path.empty()) {
        std::ofstream f(report_path);
        f << report.to_json().dump(2) << '\n';
      }
      std::printf("suite '%s': %s\n", suite.c_str(), report.all_pass() ? "PASS" : "FAIL");
      return report.all_pass() ? kExitOk : kExitVerification;
    }
  } catch (const mpgd::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitOk;
}

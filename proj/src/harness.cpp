#include "mpgd/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "mpgd/version.hpp"

namespace mpgd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config io

void require_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) throw ConfigError(std::string(section) + "." + key, "unknown key");
  }
}

template <typename T>
T get_field(const json& j, const char* section, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key, "wrong type");
  }
}


}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  require_keys(j, "config",
               {"manifold", "prior", "schedule", "method", "loss", "step_size", "ae", "window",
                "inner", "travel", "chains", "master_seed", "denoiser", "output"});
  if (j.contains("manifold")) {
    const json& m = j.at("manifold");
    require_keys(m, "manifold", {"d", "k", "seed"});
    cfg.manifold.d = get_field(m, "manifold", "d", cfg.manifold.d);
    cfg.manifold.k = get_field(m, "manifold", "k", cfg.manifold.k);
    cfg.manifold.seed = get_field(m, "manifold", "seed", cfg.manifold.seed);
  }
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    require_keys(p, "prior",
                 {"components", "seed", "mean_scale", "cov_scale", "off_manifold_scale",
                  "ortho_var"});
    cfg.prior.components = get_field(p, "prior", "components", cfg.prior.components);
    cfg.prior.seed = get_field(p, "prior", "seed", cfg.prior.seed);
    cfg.prior.mean_scale = get_field(p, "prior", "mean_scale", cfg.prior.mean_scale);
    cfg.prior.cov_scale = get_field(p, "prior", "cov_scale", cfg.prior.cov_scale);
    cfg.prior.off_manifold_scale =
        get_field(p, "prior", "off_manifold_scale", cfg.prior.off_manifold_scale);
    cfg.prior.ortho_var = get_field(p, "prior", "ortho_var", cfg.prior.ortho_var);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    require_keys(s, "schedule", {"T", "alpha_bar_mode", "eta"});
    cfg.schedule.steps = get_field(s, "schedule", "T", cfg.schedule.steps);
    cfg.schedule.alpha_bar_mode =
        get_field<std::string>(s, "schedule", "alpha_bar_mode", cfg.schedule.alpha_bar_mode);
    cfg.schedule.eta = get_field(s, "schedule", "eta", cfg.schedule.eta);
  }
  cfg.method = get_field<std::string>(j, "config", "method", cfg.method);
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    require_keys(l, "loss",
                 {"type", "m", "a_mode", "gamma", "noise_var", "target_scale", "seed"});
    cfg.loss.type = get_field<std::string>(l, "loss", "type", cfg.loss.type);
    cfg.loss.measurements = get_field(l, "loss", "m", cfg.loss.measurements);
    cfg.loss.a_mode = get_field<std::string>(l, "loss", "a_mode", cfg.loss.a_mode);
    cfg.loss.gamma = get_field(l, "loss", "gamma", cfg.loss.gamma);
    cfg.loss.noise_var = get_field(l, "loss", "noise_var", cfg.loss.noise_var);
    cfg.loss.target_scale = get_field(l, "loss", "target_scale", cfg.loss.target_scale);
    cfg.loss.seed = get_field(l, "loss", "seed", cfg.loss.seed);
  }
  if (j.contains("step_size")) {
    const json& s = j.at("step_size");
    require_keys(s, "step_size", {"mode", "rho"});
    cfg.step_size.mode = get_field<std::string>(s, "step_size", "mode", cfg.step_size.mode);
    cfg.step_size.rho = get_field(s, "step_size", "rho", cfg.step_size.rho);
  }
  if (j.contains("ae")) {
    const json& a = j.at("ae");
    require_keys(a, "ae", {"kind", "scale", "seed"});
    cfg.ae.kind = get_field<std::string>(a, "ae", "kind", cfg.ae.kind);
    cfg.ae.scale = get_field(a, "ae", "scale", cfg.ae.scale);
    cfg.ae.seed = get_field(a, "ae", "seed", cfg.ae.seed);
  }
  if (j.contains("window")) {
    const json& w = j.at("window");
    require_keys(w, "window", {"hi", "lo"});
    cfg.window.hi = get_field(w, "window", "hi", cfg.window.hi);
    cfg.window.lo = get_field(w, "window", "lo", cfg.window.lo);
  }
  if (j.contains("inner")) {
    const json& i = j.at("inner");
    require_keys(i, "inner", {"steps", "optimizer"});
    cfg.inner.steps = get_field(i, "inner", "steps", cfg.inner.steps);
    cfg.inner.optimizer = get_field<std::string>(i, "inner", "optimizer", cfg.inner.optimizer);
  }
  cfg.travel = get_field(j, "config", "travel", cfg.travel);
  cfg.chains = get_field(j, "config", "chains", cfg.chains);
  cfg.master_seed = get_field(j, "config", "master_seed", cfg.master_seed);
  if (j.contains("denoiser")) {
    const json& d = j.at("denoiser");
    require_keys(d, "denoiser", {"defect_scale", "defect_seed"});
    cfg.denoiser.defect_scale =
        get_field(d, "denoiser", "defect_scale", cfg.denoiser.defect_scale);
    cfg.denoiser.defect_seed = get_field(d, "denoiser", "defect_seed", cfg.denoiser.defect_seed);
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    require_keys(o, "output", {"trajectories", "diagnostics"});
    cfg.output.trajectories = get_field(o, "output", "trajectories", cfg.output.trajectories);
    cfg.output.diagnostics = get_field(o, "output", "diagnostics", cfg.output.diagnostics);
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  if (manifold.k < 1 || manifold.k >= manifold.d) throw ConfigError("manifold.k", "need 1 <= k < d");
  if (prior.components < 1) throw ConfigError("prior.components", "must be >= 1");
  if (prior.cov_scale < 0.0) throw ConfigError("prior.cov_scale", "must be >= 0");
  if (prior.ortho_var < 0.0) throw ConfigError("prior.ortho_var", "must be >= 0");
  if (schedule.steps < 1) throw ConfigError("schedule.T", "must be >= 1");
  if (schedule.alpha_bar_mode != "linear-beta" && schedule.alpha_bar_mode != "log-linear")
    throw ConfigError("schedule.alpha_bar_mode", "must be linear-beta or log-linear");
  if (schedule.eta < 0.0 || schedule.eta > 1.0) throw ConfigError("schedule.eta", "must be in [0,1]");
  static const char* kMethods[] = {"ddim", "dps", "mpgd", "mpgd-ae", "mpgd-z", "mpgd-ldm"};
  bool ok = false;
  for (const char* m : kMethods)
    if (method == m) ok = true;
  if (!ok) throw ConfigError("method", "unknown method '" + method + "'");
  if (loss.type != "linear-inverse" && loss.type != "quadratic-target")
    throw ConfigError("loss.type", "must be linear-inverse or quadratic-target");
  if (loss.type == "linear-inverse") {
    if (loss.measurements < 1) throw ConfigError("loss.m", "must be >= 1");
    if (!(loss.gamma > 0.0)) throw ConfigError("loss.gamma", "must be > 0");
    if (!(loss.noise_var >= 0.0)) throw ConfigError("loss.noise_var", "must be >= 0");
    if (loss.a_mode != "gaussian") throw ConfigError("loss.a_mode", "must be gaussian");
  }
  try {
    StepSizeSchedule::parse_mode(step_size.mode);
  } catch (const std::exception& e) {
    throw ConfigError("step_size.mode", e.what());
  }
  if (!(step_size.rho > 0.0)) throw ConfigError("step_size.rho", "must be > 0");
  if (ae.kind != "perfect" && ae.kind != "perturbed")
    throw ConfigError("ae.kind", "must be perfect or perturbed");
  if (ae.scale < 0.0) throw ConfigError("ae.scale", "must be >= 0");
  if (!(window.hi >= window.lo && window.lo >= 0.0 && window.hi <= 1.0))
    throw ConfigError("window", "need 0 <= lo <= hi <= 1");
  if (inner.steps < 1) throw ConfigError("inner.steps", "must be >= 1");
  try {
    parse_inner_method(inner.optimizer);
  } catch (const std::exception& e) {
    throw ConfigError("inner.optimizer", e.what());
  }
  if (inner.steps > 1 && (method == "dps" || method == "ddim"))
    throw ConfigError("inner.steps", "inner optimization applies to mpgd-family methods");
  if (travel < 0) throw ConfigError("travel", "must be >= 0");
  if (chains < 1) throw ConfigError("chains", "must be >= 1");
  if (denoiser.defect_scale < 0.0) throw ConfigError("denoiser.defect_scale", "must be >= 0");
}

json ExperimentConfig::to_json() const {
  json j;
  j["manifold"] = {{"d", manifold.d}, {"k", manifold.k}, {"seed", manifold.seed}};
  j["prior"] = {{"components", prior.components},
                {"seed", prior.seed},
                {"mean_scale", prior.mean_scale},
                {"cov_scale", prior.cov_scale},
                {"off_manifold_scale", prior.off_manifold_scale},
                {"ortho_var", prior.ortho_var}};
  j["schedule"] = {{"T", schedule.steps},
                   {"alpha_bar_mode", schedule.alpha_bar_mode},
                   {"eta", schedule.eta}};
  j["method"] = method;
  j["loss"] = {{"type", loss.type},        {"m", loss.measurements},
               {"a_mode", loss.a_mode},    {"gamma", loss.gamma},
               {"noise_var", loss.noise_var}, {"target_scale", loss.target_scale},
               {"seed", loss.seed}};
  j["step_size"] = {{"mode", step_size.mode}, {"rho", step_size.rho}};
  j["ae"] = {{"kind", ae.kind}, {"scale", ae.scale}, {"seed", ae.seed}};
  j["window"] = {{"hi", window.hi}, {"lo", window.lo}};
  j["inner"] = {{"steps", inner.steps}, {"optimizer", inner.optimizer}};
  j["travel"] = travel;
  j["chains"] = chains;
  j["master_seed"] = master_seed;
  j["denoiser"] = {{"defect_scale", denoiser.defect_scale},
                   {"defect_seed", denoiser.defect_seed}};
  j["output"] = {{"trajectories", output.trajectories}, {"diagnostics", output.diagnostics}};
  return j;
}

// ------------------------------------------------------------ problem build

Problem build_problem(const ExperimentConfig& config) {
  LinearManifold manifold =
      make_manifold(config.manifold.d, config.manifold.k, config.manifold.seed);
  const int d = manifold.ambient_dim();
  const int k = manifold.latent_dim();

  Rng prng(config.prior.seed);
  const int m = config.prior.components;
  Eigen::VectorXd weights = Eigen::VectorXd::Constant(m, 1.0 / m);
  std::vector<Eigen::VectorXd> latent_means;
  std::vector<Eigen::VectorXd> ambient_means;
  std::vector<Eigen::MatrixXd> covs;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd mu = config.prior.mean_scale * prng.normal_vector(k);
    Eigen::VectorXd amb = manifold.from_latent(mu);
    if (config.prior.off_manifold_scale > 0.0) {
      Eigen::VectorXd e = manifold.orthogonal_part(prng.normal_vector(d));
      amb += config.prior.off_manifold_scale * e / e.norm();
    }
    latent_means.push_back(std::move(mu));
    ambient_means.push_back(std::move(amb));
    covs.push_back(config.prior.cov_scale * Eigen::MatrixXd::Identity(k, k));
  }
  MixturePrior prior = MixturePrior::with_ambient_means(manifold, weights, ambient_means, covs,
                                                        config.prior.ortho_var);

  Denoiser denoiser = make_optimal_denoiser(prior);
  if (config.denoiser.defect_scale > 0.0) {
    denoiser = make_defective_denoiser(std::move(denoiser), d, config.denoiser.defect_scale,
                                       config.denoiser.defect_seed);
  }

  NoiseSchedule schedule =
      NoiseSchedule::make(config.schedule.alpha_bar_mode, config.schedule.steps,
                          config.schedule.eta);

  std::shared_ptr<GuidanceLoss> loss;
  Rng lrng(config.loss.seed);
  if (config.loss.type == "linear-inverse") {
    Eigen::MatrixXd a = lrng.normal_matrix(config.loss.measurements, d);
    for (int r = 0; r < a.rows(); ++r) a.row(r) /= a.row(r).norm();
    const Eigen::VectorXd x_star = prior.sample(lrng);
    const Eigen::VectorXd y = a * x_star + std::sqrt(config.loss.noise_var) *
                                               lrng.normal_vector(config.loss.measurements);
    loss = std::make_shared<LinearInverseLoss>(std::move(a), y, config.loss.gamma);
  } else {
    const Eigen::VectorXd target =
        manifold.from_latent(config.loss.target_scale * lrng.normal_vector(k));
    loss = std::make_shared<QuadraticTargetLoss>(target);
  }

  AutoencoderPair pair = config.ae.kind == "perfect"
                             ? perfect_linear_autoencoder(manifold)
                             : perturbed_autoencoder(manifold, config.ae.scale, config.ae.seed);

  Problem problem{std::move(manifold), std::move(prior),    std::move(denoiser),
                  std::move(schedule), std::move(loss),     std::move(pair),
                  nullptr,             Denoiser{}};

  if (config.method == "mpgd-ldm") {
    // Latent diffusion needs the prior expressed in R^k; off-manifold content
    // has no latent representation, so it is rejected at validation level.
    if (config.prior.off_manifold_scale > 0.0 || config.prior.ortho_var > 0.0)
      throw ConfigError("prior", "mpgd-ldm needs an on-manifold prior");
    problem.latent_prior =
        std::make_shared<MixturePrior>(MixturePrior::latent_space(weights, latent_means, covs));
    problem.latent_denoiser = make_optimal_denoiser(*problem.latent_prior);
  }
  return problem;
}

// --------------------------------------------------------------- run chains

namespace {

TrajectoryRecord run_pixel_chain(const ExperimentConfig& cfg, const Problem& prob, int chain) {
  const NoiseSchedule& sch = prob.schedule;
  const GuidanceLoss& loss = *prob.loss;
  const int d = prob.manifold.ambient_dim();
  const StepSizeSchedule ss{StepSizeSchedule::parse_mode(cfg.step_size.mode), cfg.step_size.rho};
  const ActiveWindow window{cfg.window.hi, cfg.window.lo};
  const InnerMethod inner_method = parse_inner_method(cfg.inner.optimizer);

  Rng rng = Rng::for_chain(cfg.master_seed, static_cast<std::uint64_t>(chain));
  TrajectoryRecord rec;
  rec.chain = chain;
  Eigen::VectorXd x = rng.normal_vector(d);
  // Loss-normalized step sizes use the loss at the previous clean estimate
  // (initialized from the raw start state).
  double running_loss = loss.value(x);

  TrajectoryStep pending;
  GuidedStepFn step_fn = [&](const Eigen::VectorXd& x_t, int t, Rng& r) -> Eigen::VectorXd {
    const ResolvedStepSize step = resolve_step_size(ss, t, sch, running_loss);
    GuidedStepResult res;
    if (cfg.method == "ddim") {
      const Eigen::VectorXd noise = r.normal_vector(d);
      const Eigen::VectorXd eps = prob.denoiser.eps_hat(x_t, sch.alpha_bar(t));
      rec.telemetry.denoiser_evals++;
      const Eigen::VectorXd x0 = tweedie_estimate(x_t, eps, sch.alpha_bar(t));
      res.x_prev = ddim_step_with_noise(x_t, eps, x0, sch, t, noise);
      res.eps_hat = eps;
      res.x0_est = x0;
      res.x0_guided = x0;
      res.guidance = Eigen::VectorXd::Zero(d);
    } else if (cfg.method == "dps") {
      res = dps_step(x_t, prob.denoiser, sch, t, loss, step.rho_t, r, &rec.telemetry);
    } else if (cfg.inner.steps > 1) {
      // n inner iterations on the clean estimate, then one recombination.
      const Eigen::VectorXd noise = r.normal_vector(d);
      const Eigen::VectorXd eps = prob.denoiser.eps_hat(x_t, sch.alpha_bar(t));
      rec.telemetry.denoiser_evals++;
      const Eigen::VectorXd x0 = tweedie_estimate(x_t, eps, sch.alpha_bar(t));
      Eigen::VectorXd x0_guided;
      if (cfg.method == "mpgd-z") {
        Eigen::VectorXd z = prob.pair.encode(x0);
        const Eigen::VectorXd residue = x0 - prob.pair.decode(z);
        for (int i = 0; i < cfg.inner.steps; ++i) {
          const Eigen::VectorXd g = loss.gradient(prob.pair.decode(z));
          z -= step.c_t * (prob.pair.decode_jacobian(z).transpose() * g);
        }
        x0_guided = prob.pair.decode(z) + residue;
      } else {
        const bool project = cfg.method == "mpgd-ae" && window.contains(t, sch.steps());
        x0_guided = multi_step_optimize(x0, loss, cfg.inner.steps, inner_method, step.c_t,
                                        project ? &prob.pair : nullptr)
                        .x;
      }
      res.x_prev = ddim_step_with_noise(x_t, eps, x0_guided, sch, t, noise);
      res.eps_hat = eps;
      res.x0_est = x0;
      res.x0_guided = x0_guided;
      res.guidance = x0_guided - x0;
    } else if (cfg.method == "mpgd") {
      res = mpgd_step(x_t, prob.denoiser, sch, t, loss, step.c_t, r, &rec.telemetry);
    } else if (cfg.method == "mpgd-ae") {
      res = mpgd_ae_step(x_t, prob.denoiser, sch, t, prob.pair, loss, step.c_t, r, window,
                         &rec.telemetry);
    } else {  // mpgd-z
      res = mpgd_z_step(x_t, prob.denoiser, sch, t, prob.pair, loss, step.c_t, r, &rec.telemetry);
    }
    running_loss = loss.value(res.x0_guided);
    pending.t = t;
    pending.x_t = x_t;
    pending.eps_hat = res.eps_hat;
    pending.x0_est = res.x0_est;
    pending.x0_guided = res.x0_guided;
    pending.guidance = res.guidance;
    return res.x_prev;
  };

  for (int t = sch.steps(); t >= 1; --t) {
    x = cfg.travel > 0 ? time_travel(step_fn, x, sch, t, cfg.travel, rng) : step_fn(x, t, rng);
    rec.steps.push_back(pending);
  }
  rec.terminal = x;
  return rec;
}

}  // namespace

RunResult run_chains(const ExperimentConfig& config, const Problem& problem, int workers) {
  RunResult out;
  if (config.method == "mpgd-ldm") {
    const StepSizeSchedule ss{StepSizeSchedule::parse_mode(config.step_size.mode),
                              config.step_size.rho};
    LatentSampleResult latent =
        mpgd_ldm_sample(problem.latent_denoiser, problem.schedule, problem.pair, *problem.loss,
                        ss, config.chains, config.master_seed);
    out.trajectories = std::move(latent.latent_trajectories);
    for (int c = 0; c < config.chains; ++c) {
      ChainSummary s;
      s.chain = c;
      s.terminal = latent.terminals[static_cast<std::size_t>(c)];
      s.terminal_loss = problem.loss->value(s.terminal);
      s.telemetry = out.trajectories[static_cast<std::size_t>(c)].telemetry;
      out.chains.push_back(std::move(s));
    }
    return out;
  }

  out.trajectories.resize(static_cast<std::size_t>(config.chains));
  const int n_workers = std::max(1, std::min(workers, config.chains));
  std::atomic<int> next{0};
  auto work = [&] {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= config.chains) return;
      out.trajectories[static_cast<std::size_t>(c)] = run_pixel_chain(config, problem, c);
    }
  };
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (int c = 0; c < config.chains; ++c) {
    const TrajectoryRecord& rec = out.trajectories[static_cast<std::size_t>(c)];
    ChainSummary s;
    s.chain = c;
    s.terminal = rec.terminal;
    s.terminal_loss = problem.loss->value(rec.terminal);
    s.telemetry = rec.telemetry;
    out.chains.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------------- output

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void write_trajectories_csv(const std::string& path,
                            const std::vector<TrajectoryRecord>& trajectories,
                            const LinearManifold* manifold, const NoiseSchedule& schedule) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  if (trajectories.empty() || trajectories.front().steps.empty()) return;
  const Eigen::Index dim = trajectories.front().steps.front().x_t.size();
  f << "chain,t";
  for (Eigen::Index i = 0; i < dim; ++i) f << ",x_" << i;
  for (Eigen::Index i = 0; i < dim; ++i) f << ",x0_" << i;
  f << ",shell_residual\n";
  for (const auto& rec : trajectories) {
    for (const auto& step : rec.steps) {
      f << rec.chain << ',' << step.t;
      for (Eigen::Index i = 0; i < dim; ++i) f << ',' << fmt(step.x_t[i]);
      for (Eigen::Index i = 0; i < dim; ++i) f << ',' << fmt(step.x0_est[i]);
      if (manifold) {
        const double ab = schedule.alpha_bar(step.t);
        const double r_t = shell_radius(ab, manifold->ambient_dim(), manifold->latent_dim());
        const double dist = off_manifold_distance(step.x_t, std::sqrt(ab), *manifold);
        f << ',' << fmt(std::abs(dist - r_t) / r_t);
      } else {
        f << ',';
      }
      f << '\n';
    }
    f << rec.chain << ",0";
    for (Eigen::Index i = 0; i < dim; ++i) f << ',' << fmt(rec.terminal[i]);
    for (Eigen::Index i = 0; i < dim; ++i) f << ',' << fmt(rec.terminal[i]);
    f << ",\n";
  }
}

void write_diagnostics_csv(const std::string& path, const std::string& method,
                           const std::vector<TrajectoryRecord>& trajectories,
                           const LinearManifold* manifold, const NoiseSchedule& schedule) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "method,chain,t,shell_residual,off_manifold_norm,cosine,bound_lhs,bound_rhs,kappa\n";
  for (const auto& rec : trajectories) {
    if (manifold) {
      const DeviationCurve curve = deviation_curve(rec, *manifold, schedule);
      for (const auto& row : curve.rows) {
        f << method << ',' << rec.chain << ',' << row.t << ',' << fmt(row.shell_residual) << ','
          << fmt(row.off_manifold_norm) << ',';
        if (row.alignment_cosine) f << fmt(*row.alignment_cosine);
        f << ',';
        if (row.bound_lhs) f << fmt(*row.bound_lhs);
        f << ',';
        if (row.bound_rhs) f << fmt(*row.bound_rhs);
        f << ',';
        if (row.kappa) f << fmt(*row.kappa);
        f << '\n';
      }
    } else {
      const auto cosines = alignment_curve(rec);
      for (std::size_t i = 0; i < rec.steps.size(); ++i) {
        f << method << ',' << rec.chain << ',' << rec.steps[i].t << ",,,";
        if (cosines[i]) f << fmt(*cosines[i]);
        f << ",,,\n";
      }
    }
  }
}

json RunRecord::to_json() const {
  json j;
  j["config"] = config;
  j["config_hash"] = config_hash;
  j["library_version"] = library_version;
  j["rng_algorithm"] = rng_algorithm;
  json chains_json = json::array();
  for (const auto& c : chains) {
    chains_json.push_back({{"chain", c.chain},
                           {"terminal", to_vec(c.terminal)},
                           {"terminal_loss", c.terminal_loss},
                           {"telemetry",
                            {{"denoiser_evals", c.telemetry.denoiser_evals},
                             {"jacobian_products", c.telemetry.jacobian_products}}}});
  }
  j["chains"] = chains_json;
  j["outputs"] = output_files;
  j["wall_seconds"] = wall_seconds;
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.config = j.at("config");
  r.config_hash = j.at("config_hash").get<std::string>();
  r.library_version = j.at("library_version").get<std::string>();
  r.rng_algorithm = j.at("rng_algorithm").get<std::string>();
  for (const auto& c : j.at("chains")) {
    ChainSummary s;
    s.chain = c.at("chain").get<int>();
    s.terminal = from_vec(c.at("terminal").get<std::vector<double>>());
    s.terminal_loss = c.at("terminal_loss").get<double>();
    s.telemetry.denoiser_evals = c.at("telemetry").at("denoiser_evals").get<long>();
    s.telemetry.jacobian_products = c.at("telemetry").at("jacobian_products").get<long>();
    r.chains.push_back(std::move(s));
  }
  r.output_files = j.at("outputs").get<std::vector<std::string>>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const json& config) {
  const std::string canonical = config.dump();  // object keys are sorted
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

RunRecord run_experiment(const ExperimentConfig& config, const std::string& out_dir, int workers,
                         bool force) {
  const auto start = std::chrono::steady_clock::now();
  Problem problem = build_problem(config);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const fs::path traj_path = dir / "trajectories.csv";
  const fs::path diag_path = dir / "diagnostics.csv";
  const fs::path record_path = dir / "run.json";
  for (const fs::path& p : {traj_path, diag_path, record_path}) {
    if (!force && fs::exists(p))
      throw ConfigError("output", p.string() + " exists; pass force to overwrite");
  }

  RunResult result = run_chains(config, problem, workers);

  RunRecord record;
  record.config = config.to_json();
  record.config_hash = mpgd::config_hash(record.config);
  record.library_version = kLibraryVersion;
  record.rng_algorithm = Rng::kAlgorithm;
  record.chains = result.chains;

  const LinearManifold* manifold_ptr = config.method == "mpgd-ldm" ? nullptr : &problem.manifold;
  if (config.output.trajectories) {
    write_trajectories_csv(traj_path.string(), result.trajectories, manifold_ptr,
                           problem.schedule);
    record.output_files.push_back("trajectories.csv");
  }
  if (config.output.diagnostics) {
    write_diagnostics_csv(diag_path.string(), config.method, result.trajectories, manifold_ptr,
                          problem.schedule);
    record.output_files.push_back("diagnostics.csv");
  }
  record.output_files.push_back("run.json");
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::ofstream f(record_path);
  if (!f) throw std::runtime_error("cannot write " + record_path.string());
  f << record.to_json().dump(2) << '\n';
  return record;
}

bool VerifyReport::all_pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

json VerifyReport::to_json() const {
  json j;
  j["suite"] = suite;
  json arr = json::array();
  for (const auto& c : checks)
    arr.push_back({{"name", c.name}, {"pass", c.pass}, {"margin", c.margin}, {"details", c.details}});
  j["checks"] = arr;
  j["pass"] = all_pass();
  return j;
}

}  // namespace mpgd

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "mpgd/harness.hpp"
#include "mpgd/version.hpp"

namespace py = pybind11;
using namespace mpgd;

namespace {

MixturePrior make_prior(const LinearManifold& manifold, const Eigen::VectorXd& weights,
                        const std::vector<Eigen::VectorXd>& latent_means,
                        const std::vector<Eigen::MatrixXd>& latent_covs) {
  return MixturePrior(manifold, weights, latent_means, latent_covs);
}

}  // namespace

PYBIND11_MODULE(mpgdlab, m) {
  m.doc() =
      "Manifold-preserving guided diffusion laboratory: linear-subspace "
      "manifolds, closed-form mixture denoisers, DDIM/DPS/MPGD samplers and "
      "their verification suites.";
  m.attr("__version__") = kLibraryVersion;

  py::class_<LinearManifold>(m, "LinearManifold")
      .def_property_readonly("d", &LinearManifold::ambient_dim)
      .def_property_readonly("k", &LinearManifold::latent_dim)
      .def_property_readonly("basis", &LinearManifold::basis)
      .def("project_tangent", &LinearManifold::project_tangent, py::arg("x"))
      .def("orthogonal_part", &LinearManifold::orthogonal_part, py::arg("x"))
      .def("to_json", [](const LinearManifold& self) { return manifold_to_json(self).dump(); })
      .def_static("from_json", [](const std::string& text) {
        return manifold_from_json(nlohmann::json::parse(text));
      });

  m.def("make_manifold", &make_manifold, py::arg("d"), py::arg("k"), py::arg("seed"));
  m.def("off_manifold_distance", &off_manifold_distance, py::arg("x"), py::arg("nu"),
        py::arg("manifold"));
  m.def("concentration_epsilon", &concentration_epsilon, py::arg("delta"), py::arg("dof"));
  m.def("shell_radius", &shell_radius, py::arg("alpha_bar"), py::arg("d"), py::arg("k"));
  m.def("shell_band_test", &shell_band_test, py::arg("x_t"), py::arg("manifold"),
        py::arg("alpha_bar_t"), py::arg("epsilon"));

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("linear_beta", &NoiseSchedule::linear_beta, py::arg("steps"), py::arg("eta"))
      .def_static("log_linear", &NoiseSchedule::log_linear, py::arg("steps"), py::arg("eta"),
                  py::arg("alpha_bar_first") = 0.9999, py::arg("alpha_bar_last") = 4e-5)
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def_property_readonly("eta", &NoiseSchedule::eta)
      .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"))
      .def("sigma", &NoiseSchedule::sigma, py::arg("t"));

  m.def("tweedie_estimate", &tweedie_estimate, py::arg("x_t"), py::arg("eps_hat"),
        py::arg("alpha_bar_t"));

  py::class_<MixturePrior>(m, "MixturePrior")
      .def(py::init(&make_prior), py::arg("manifold"), py::arg("weights"),
           py::arg("latent_means"), py::arg("latent_covs"))
      .def_property_readonly("components", &MixturePrior::components)
      .def("sample",
           [](const MixturePrior& self, int n, std::uint64_t seed) {
             Rng rng(seed);
             return self.sample(n, rng);
           },
           py::arg("n"), py::arg("seed"))
      .def("noisy_log_density", &MixturePrior::noisy_log_density, py::arg("alpha_bar"),
           py::arg("x_t"))
      .def("optimal_denoiser", &MixturePrior::optimal_denoiser, py::arg("alpha_bar"),
           py::arg("x_t"))
      .def("denoiser_jacobian", &MixturePrior::denoiser_jacobian, py::arg("alpha_bar"),
           py::arg("x_t"))
      .def("tweedie_on_manifold_check", &MixturePrior::tweedie_on_manifold_check,
           py::arg("alpha_bar"), py::arg("x_t"))
      .def("to_json", [](const MixturePrior& self) { return prior_to_json(self).dump(); });

  m.def(
      "exact_linear_posterior",
      [](const MixturePrior& prior, const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
         double noise_var) {
        const GaussianPosterior post = exact_linear_posterior(prior, a, y, noise_var);
        return py::make_tuple(post.mean, post.covariance);
      },
      py::arg("prior"), py::arg("a"), py::arg("y"), py::arg("noise_var"),
      "Conjugate posterior of x given y = A x + noise; returns (mean, covariance).");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& out_dir, int workers, bool force) {
        const ExperimentConfig cfg =
            ExperimentConfig::from_json(nlohmann::json::parse(config_json));
        return run_experiment(cfg, out_dir, workers, force).to_json().dump();
      },
      py::arg("config_json"), py::arg("out_dir"), py::arg("workers") = 1,
      py::arg("force") = false,
      "Run a configured experiment; returns the run record as a JSON string.");

  m.def(
      "verify",
      [](const std::string& suite) { return verify(suite).to_json().dump(); },
      py::arg("suite") = "all",
      "Run a theorem suite; returns the report as a JSON string.");
}

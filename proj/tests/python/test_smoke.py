import json

import numpy as np
import pytest

import mpgdlab


def test_manifold_orthonormal():
    m = mpgdlab.make_manifold(32, 4, 7)
    basis = np.asarray(m.basis)
    assert basis.shape == (32, 4)
    gram = basis.T @ basis
    assert np.abs(gram - np.eye(4)).max() < 1e-12
    # deterministic
    again = np.asarray(mpgdlab.make_manifold(32, 4, 7).basis)
    assert np.array_equal(basis, again)


def test_off_manifold_distance_matches_numpy():
    m = mpgdlab.make_manifold(16, 3, 5)
    basis = np.asarray(m.basis)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(16)
    want = np.linalg.norm(x - basis @ (basis.T @ x))
    assert mpgdlab.off_manifold_distance(x, 1.0, m) == pytest.approx(want, rel=1e-12)


def test_concentration_epsilon_frozen_value():
    assert mpgdlab.concentration_epsilon(0.05, 100) == pytest.approx(
        0.20743807526938914, abs=1e-15
    )


def test_denoiser_matches_finite_difference_score():
    m = mpgdlab.make_manifold(6, 2, 3)
    prior = mpgdlab.MixturePrior(
        m, np.array([0.5, 0.5]), [np.array([1.0, 0.0]), np.array([-1.0, 0.0])],
        [0.4 * np.eye(2), 0.4 * np.eye(2)]
    )
    ab = 0.5
    rng = np.random.default_rng(1)
    x = rng.standard_normal(6)
    h = 1e-5 * (1 + np.linalg.norm(x))
    fd = np.zeros(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        fd[i] = (
            prior.noisy_log_density(ab, x + e) - prior.noisy_log_density(ab, x - e)
        ) / (2 * h)
    want = -np.sqrt(1 - ab) * fd
    got = np.asarray(prior.optimal_denoiser(ab, x))
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-5


def test_schedule_and_tweedie():
    sch = mpgdlab.NoiseSchedule.linear_beta(20, 0.0)
    assert sch.steps == 20
    assert sch.alpha_bar(0) == 1.0
    assert sch.sigma(5) == 0.0
    x = np.array([2.0, 0.0])
    eps = np.array([0.4, 0.0])
    got = mpgdlab.tweedie_estimate(x, eps, 0.25)
    assert got[0] == pytest.approx(3.3071796769724491, abs=1e-14)


def test_exact_linear_posterior_uninformative():
    m = mpgdlab.make_manifold(8, 3, 9)
    mu = np.array([0.4, -0.7, 1.1])
    prior = mpgdlab.MixturePrior(m, np.array([1.0]), [mu], [np.eye(3)])
    mean, cov = mpgdlab.exact_linear_posterior(prior, np.zeros((2, 8)), np.zeros(2), 0.5)
    basis = np.asarray(m.basis)
    assert np.linalg.norm(np.asarray(mean) - basis @ mu) < 1e-12
    assert np.abs(np.asarray(cov) - basis @ basis.T).max() < 1e-12


def test_run_experiment_end_to_end(tmp_path):
    config = {
        "manifold": {"d": 16, "k": 4, "seed": 7},
        "prior": {"components": 2, "seed": 11, "mean_scale": 1.5, "cov_scale": 0.5},
        "schedule": {"T": 10, "alpha_bar_mode": "linear-beta", "eta": 0.0},
        "method": "mpgd-ae",
        "loss": {"type": "linear-inverse", "m": 3, "gamma": 200.0, "noise_var": 0.0025},
        "step_size": {"mode": "constant", "rho": 0.01},
        "window": {"hi": 1.0, "lo": 0.0},
        "chains": 3,
        "master_seed": 42,
    }
    out = json.loads(
        mpgdlab.run_experiment(json.dumps(config), str(tmp_path / "a"), workers=1)
    )
    assert (tmp_path / "a" / "trajectories.csv").exists()
    assert (tmp_path / "a" / "diagnostics.csv").exists()
    assert (tmp_path / "a" / "run.json").exists()
    assert len(out["chains"]) == 3
    for chain in out["chains"]:
        assert chain["telemetry"]["jacobian_products"] == 0

    again = json.loads(
        mpgdlab.run_experiment(json.dumps(config), str(tmp_path / "b"), workers=4)
    )
    assert out["chains"] == again["chains"]


def test_config_error_names_key(tmp_path):
    with pytest.raises(Exception, match="method"):
        mpgdlab.run_experiment(json.dumps({"method": "bogus"}), str(tmp_path))


def test_verify_autoencoder_suite():
    report = json.loads(mpgdlab.verify("autoencoder"))
    assert report["pass"] is True
    assert all(check["pass"] for check in report["checks"])

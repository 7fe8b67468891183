import math

import numpy as np
import pytest

import vaekrnet as vk


def test_krnet_round_trip_and_density():
    flow = vk.KRnet(4, blocks=2, depth=2, hidden=8, seed=1)
    rng = np.random.default_rng(0)
    y = rng.normal(size=(200, 4))
    flow.initialize(y)
    z, logdet = flow.forward(y)
    back, inv_logdet = flow.inverse(z)
    assert z.shape == (200, 4) and logdet.shape == (200,)
    assert np.max(np.abs(back - y)) < 1e-8
    assert np.max(np.abs(logdet + inv_logdet)) < 1e-9
    # log p(y) = log N(z) + log|det|
    ref = -0.5 * np.sum(z**2, axis=1) - 2 * math.log(2 * math.pi) + logdet
    assert np.allclose(flow.log_pdf(y), ref, atol=1e-10)
    assert flow.schedule == [4, 2]
    assert flow.num_parameters > 0
    assert vk.KRnet(3).schedule == [3, 2, 1]


def test_identity_krnet_samples_are_standard_normal():
    flow = vk.KRnet(3, blocks=2, depth=1, hidden=4)
    flow.initialize_identity()
    s = flow.sample(20000, seed=3)
    assert np.all(np.abs(s.mean(axis=0)) < 4 / math.sqrt(20000))
    assert np.all(np.abs(s.var(axis=0) - 1) < 4 * math.sqrt(2 / 20000))


def test_vae_krnet_shapes():
    model = vk.VaeKrnet(5, 2, D=1, N_D=8, L_pr=2, L_en=2, N_L=8)
    y = vk.LinearProblem(5, 2, seed=2).sample_data(64, seed=1)
    model.initialize_for_data(y)
    xi = np.random.default_rng(1).normal(size=(64, 2))
    elbo = model.elbo(y, xi)
    assert elbo.shape == (64,) and np.all(np.isfinite(elbo))
    assert model.prior_log_pdf(xi).shape == (64,)
    assert model.encoder_cond_log_pdf(xi, y).shape == (64,)
    assert model.sample(10, seed=4).shape == (10, 5)
    assert math.isfinite(model.marginal_log_pdf(y[0], N=100))
    with pytest.raises(ValueError):
        model.elbo(y[:, :3], xi)


def test_linear_problem_entropy():
    p = vk.LinearProblem(4, 1, sigma=0.3, seed=5)
    n = 4
    cov = p.sigma**2 * np.eye(n) + p.A @ p.A.T
    exact = 0.5 * n * (1 + math.log(2 * math.pi)) + 0.5 * np.linalg.slogdet(cov)[1]
    assert p.entropy() == pytest.approx(exact, rel=1e-12)
    h, se = p.entropy_mc(outer=2000, inner=2000, seed=1)
    assert abs(h - exact) < 5 * se + 0.05


def test_inverse_problem_posterior():
    p = vk.InverseProblem(n=4, seed=7)
    mean, cov = p.posterior()
    s2 = 0.05**2
    prec = np.linalg.inv(p.prior_cov) + p.K.T @ p.K / s2
    assert np.allclose(np.linalg.inv(prec), cov, rtol=1e-8, atol=1e-12)
    # log p_hat(y) - log N(y; mean, cov) is the constant log C.
    y = np.random.default_rng(2).multivariate_normal(mean, cov, size=5)
    d = y - mean
    log_post = -0.5 * np.einsum("ij,jk,ik->i", d, np.linalg.inv(cov), d) - 0.5 * np.linalg.slogdet(
        2 * math.pi * cov
    )[1]
    diff = p.log_unnormalized_posterior(y) - log_post
    assert np.allclose(diff, p.log_norm_const(), atol=1e-8)
    exact_draws = np.random.default_rng(3).multivariate_normal(mean, cov, size=20000)
    stats = p.stats(exact_draws, grid_points=64)
    assert len(stats["x"]) == 64
    assert stats["mean_error"] < 4 * stats["mean_error_se"] + 1e-3


def test_config_and_run(tmp_path):
    assert "L=6" in vk.parse_config({"experiment": "inverse", "model": "krnet"}).splitlines()
    with pytest.raises(vk.ConfigError, match="lambda"):
        vk.parse_config({"experiment": "inverse", "model": "vae-krnet", "lambda": 1})
    with pytest.raises(ValueError, match="unknown key"):
        vk.parse_config("experiment=inverse\nmodel=krnet\nwidth=3\n")
    cfg = {
        "experiment": "inverse",
        "model": "krnet",
        "iterations": 100,
        "batch": 200,
        "validation": 1000,
        "validation_every": 50,
        "L": 2,
        "samples": 5,
        "out": str(tmp_path / "run"),
    }
    r = vk.run(cfg)
    assert r["reference"] == pytest.approx(-vk.InverseProblem.load(tmp_path / "run" / "problem.json").log_norm_const())
    assert len(r["report"]["trace"]) == 2
    assert 0 <= r["stats"]["mean_error"]
    s = vk.sample_manifest(tmp_path / "run" / "model.manifest", 7, seed=1)
    assert s.shape == (7, 10)
    with pytest.raises(vk.IoError):
        vk.run(cfg)

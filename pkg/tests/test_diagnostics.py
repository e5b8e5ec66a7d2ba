"""Contraction coefficients, the MSE identity and the heavy-tailed location helpers."""

import math

import numpy as np
import pytest

from isdfilter.densities import make_model
from isdfilter.diagnostics import (
    cauchy_t_score_moments,
    cauchy_t_score_moments_quadrature,
    contraction_coefficient,
    contraction_reports,
    mse_bound_check,
    kappa,
    explicit_contraction_coefficient,
    mse_curve_nonconcave,
    ndr_radius_sq,
    numerical_error_bound,
    probe_decay_slope,
    run_diagnostics,
    static_invertibility_check,
    t_location_stability_bound,
    verify_mse_decomposition,
)
from isdfilter.errors import ConfigError, NotNonExpansive
from isdfilter.estimate import lyapunov_solve
from isdfilter.update import PenaltySpec, isd_update


def test_contraction_coefficient_examples():
    assert contraction_coefficient(np.eye(3), 0.0) == 1.0
    assert contraction_coefficient([[1.0]], 1.0) == pytest.approx(0.25)
    assert contraction_coefficient(np.diag([1.0, 4.0]), 0.5) == pytest.approx((4 / 4.5) ** 2)
    assert contraction_coefficient(np.diag([1.0, 4.0]), 0.5) == pytest.approx(0.790, abs=5e-4)


def test_kappa_examples():
    assert kappa(np.eye(2), np.eye(2), 0.0) == pytest.approx(1.0)
    P = lyapunov_solve(np.array([[0.97]]), np.array([[1.0]]))
    assert kappa(P, [[0.97]], 0.0) == pytest.approx((P[0, 0] - 1) / P[0, 0], rel=1e-12)
    assert kappa(P, [[0.97]], 0.0) == pytest.approx(0.941, abs=5e-4)
    assert kappa([[1.0]], [[0.0]], 0.0) == 0.0
    with pytest.raises(NotNonExpansive):
        kappa([[1.0]], [[1.1]], 0.0)


def test_esd_coefficient_domain():
    assert explicit_contraction_coefficient([[2.0]], 0.5, 1.0) == pytest.approx((2 - 0.5 * 1.5) / 2)
    with pytest.raises(ConfigError):
        explicit_contraction_coefficient([[0.4]], 0.5, 1.0)
    with pytest.raises(ConfigError):
        explicit_contraction_coefficient([[2.0]], 1.5, 1.0)


def test_reports_lie_in_unit_interval(rng):
    for _ in range(500):
        k = int(rng.integers(1, 4))
        A = rng.normal(size=(k, k))
        P = A @ A.T + 0.1 * np.eye(k)
        phi = np.diag(rng.uniform(-0.95, 0.95, k))
        lip = float(rng.uniform(0, 3))
        alpha = rng.uniform(0, lip)
        try:
            reps = contraction_reports(P, phi, alpha, lipschitz=lip)
        except NotNonExpansive:
            continue
        for r in reps:
            assert 0.0 <= r.coefficient <= 1.0
        assert {r.theorem for r in reps} >= {"prop2_shrinkage", "lemma1_isd", "lemma2_kappa"}


def test_ndr_radius():
    assert ndr_radius_sq(1.0, 1.0, 1.0) == pytest.approx(1 / 3)
    assert ndr_radius_sq(1.0, 10.0, 1.0) < ndr_radius_sq(1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        ndr_radius_sq(1.0, 1.0, 0.0)


def test_ndr_updates_improve_outside_radius(rng):
    s2 = 0.5
    m = make_model("gaussian-location", sigma2=s2)
    alpha = m.concavity().alpha
    assert alpha == pytest.approx(1 / s2)
    P = 1.0
    r2 = ndr_radius_sq(1 / s2, P, alpha)
    e0 = 2.0 * math.sqrt(r2)
    improved = 0
    for _ in range(200):
        y = rng.normal(0.0, math.sqrt(s2), 1000)
        upd = (P * e0 + y / s2) / (P + 1 / s2)
        improved += np.mean(upd**2) < e0**2
    assert improved / 200 >= 0.95


def test_invertibility_and_numerical_bound():
    chk = static_invertibility_check([[10.0]], [[0.97]], 0.0)
    assert chk["holds"]
    assert chk["kappa"] == pytest.approx((10 - 10 * (1 - 0.97**2)) / 10)
    b = numerical_error_bound([[10.0]], [[0.97]], 0.0, 1e-6)
    assert 0 < b < 1e-3
    assert not static_invertibility_check(np.eye(1), np.eye(1), 0.0)["holds"]
    assert numerical_error_bound(np.eye(1), np.eye(1), 0.0, 1e-6) == math.inf


@pytest.mark.parametrize("mode", ["isd", "esd"])
def test_mse_identity_poisson(mode):
    dec = verify_mse_decomposition(make_model("poisson"), [0.0], [2.0], [[1.0]], 100_000, seed=3, mode=mode)
    assert abs(dec.residual) <= 4 * dec.mcse
    assert dec.within
    assert dec.contractive >= 0 and dec.expansive >= 0


def test_mse_identity_gaussian_location_at_truth():
    m = make_model("gaussian-location", sigma2=1.0)
    dec = verify_mse_decomposition(m, [0.5], [0.5], [[2.0]], 100_000, seed=1)
    assert dec.se_before == 0.0
    assert abs(dec.residual) <= 4 * dec.mcse
    # with no prediction error the post-update error is pure shrunk noise
    assert dec.mse_after == pytest.approx(2.0 * 1.0 / 9.0, rel=0.02)


def test_mse_identity_matches_direct_updates():
    m = make_model("gamma", kappa=2.0)
    dec = verify_mse_decomposition(m, [0.3], [-0.4], [[1.5]], 2000, seed=4)
    rng = np.random.default_rng(np.random.SeedSequence(4))
    y = m.sample(np.full((2000, 1), 0.3), rng)
    direct = np.mean([1.5 * (isd_update(m, yi, [-0.4], PenaltySpec.static(1.5)).theta_upd[0] - 0.3) ** 2
                      for yi in y])
    assert dec.mse_after == pytest.approx(direct, rel=1e-8)


def test_esd_expansion_dominates_for_heavy_ged():
    dec = verify_mse_decomposition(make_model("ged", upsilon=4.0), [0.0], [3.0], [[1.0]], 50_000, seed=2,
                                   mode="esd")
    assert dec.expansive > dec.contractive


def test_mse_bound_inequality():
    m = make_model("gaussian-location", sigma2=0.7)
    out = mse_bound_check(m, [0.0], [1.5], [[0.8]], 100_000, seed=5)
    assert out["holds"]
    with pytest.raises(ConfigError):
        mse_bound_check(make_model("poisson"), [0.0], [1.0], [[1.0]], 100)


def test_t_location_stability_bound():
    assert t_location_stability_bound(1e-9, 1.0, 3.0) == pytest.approx(1.0)
    assert t_location_stability_bound(23.717, math.sqrt(0.387), 2.0) == pytest.approx(1 - 23.717 * 3 / (16 * 0.387))
    assert t_location_stability_bound(23.717, math.sqrt(0.387), 2.0) < 0
    assert t_location_stability_bound(1.0, 1.0, 1e12) == pytest.approx(0.875)


def test_score_moments_examples():
    assert cauchy_t_score_moments(0.0, 1.3, 2.0, 1.0)[0] == 0.0
    assert cauchy_t_score_moments(1.0, 1.0, 1.0, 1.0)[0] == pytest.approx(-0.2)
    q = cauchy_t_score_moments_quadrature(1.0, 1.0, 1.0, 1.0)
    assert q[0] == pytest.approx(-0.2, rel=1e-6)
    assert q[1] == pytest.approx(cauchy_t_score_moments(1.0, 1.0, 1.0, 1.0)[1], rel=1e-6)
    mu = 1e6
    m1, m2 = cauchy_t_score_moments(mu, 1.3, 2.0, 1.0)
    assert mu * m1 == pytest.approx(-2.0 * 1.3**2, rel=0.01)
    # mu^2 m2 tends to nu^1.5 sigma^3 (sqrt(nu) sigma + xi) / 2
    a = math.sqrt(2.0) * 1.3
    assert mu * mu * m2 == pytest.approx(2.0**1.5 * 1.3**3 * (2 * a + 1.0) / 2, rel=0.01)


def test_score_moments_match_quadrature(rng):
    for _ in range(20):
        mu, s, nu, g = rng.normal() * 3, rng.uniform(0.3, 2), rng.uniform(0.5, 6), rng.uniform(0.3, 3)
        cf = cauchy_t_score_moments(mu, s, nu, g)
        q = cauchy_t_score_moments_quadrature(mu, s, nu, g)
        assert q[0] == pytest.approx(cf[0], rel=1e-6, abs=1e-12)
        assert q[1] == pytest.approx(cf[1], rel=1e-6)


def test_mse_curve():
    H, g, s, nu = 1.0, 1.0, 1.3, 2.0
    assert mse_curve_nonconcave(H, g, s, nu, [0.0])[0] == pytest.approx(H * H * cauchy_t_score_moments(0, s, nu, g)[1])
    big = 1e10
    assert mse_curve_nonconcave(H, g, s, nu, [big])[0] - big == pytest.approx(-2 * H * nu * s * s, rel=0.01)
    grid = np.linspace(1.0, 100.0, 400)
    assert np.all(np.diff(mse_curve_nonconcave(H, g, s, nu, grid)) > 0)


def test_probe_slope_and_report():
    d = 0.5 ** np.arange(50)
    assert probe_decay_slope(d) == pytest.approx(math.log(0.5))
    rep = run_diagnostics(make_model("poisson"), [[10.0]], [[0.97]], test_points=[([0.0], [0.5])], n_draws=20_000)
    assert rep["invertibility"]["holds"]
    assert len(rep["mse_decomposition"]) == 2
    assert all("error" not in c for c in rep["mse_decomposition"])
    assert rep["probe"]["final"] < 1e-6 * rep["probe"]["initial"]

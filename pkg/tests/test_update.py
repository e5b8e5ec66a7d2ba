"""Implicit and explicit updates: oracles, closed forms, invariants and errors."""

import math

import numpy as np
import pytest
from scipy import optimize

from isdfilter.densities import ScalingSpec, log_density, make_model, score
from isdfilter.errors import ConfigError, CrossedPredictions, NonDifferentiableError
from isdfilter.update import (
    PenaltySpec,
    SolverOptions,
    compute_average_hessian,
    esd_update,
    isd_update,
    isd_update_many,
    isd_update_quantile,
    isd_update_regression,
    isd_update_t_location,
)

from conftest import FAMILY_CASES, LOG_CONCAVE_CASES, build, random_point


def _objective(m, y, th, tp, P, exo=None):
    d = np.atleast_1d(th) - np.atleast_1d(tp)
    return log_density(m, y, th, exo) - 0.5 * d @ np.atleast_2d(P) @ d


def test_penalty_constructors():
    assert PenaltySpec.from_learning_rate(0.1).matrix[0, 0] == pytest.approx(10.0)
    lp = PenaltySpec.lyapunov(np.eye(1), np.array([[0.97]]))
    assert lp.matrix[0, 0] == pytest.approx(1 / (1 - 0.97**2), rel=1e-14)
    assert lp.matrix[0, 0] == pytest.approx(16.920, abs=5e-4)
    info = PenaltySpec.info_scaled(0.5)
    assert info.at(2.0)[0, 0] == pytest.approx(math.e / 0.5)
    assert info.learning_rate(2.0)[0, 0] == pytest.approx(0.5 / math.e)
    with pytest.raises(ConfigError):
        PenaltySpec.static([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ConfigError):
        PenaltySpec.info_scaled(0.0)


def test_zero_score_keeps_prediction():
    m = make_model("poisson")
    r = isd_update(m, 2, math.log(2.0), PenaltySpec.static(3.0))
    assert r.theta_upd[0] == pytest.approx(math.log(2.0), abs=1e-14)
    assert r.objective_gain == pytest.approx(0.0, abs=1e-14)


def test_poisson_against_bisection():
    m = make_model("poisson")
    r = isd_update(m, 3, 0.0, PenaltySpec.static(1.0))
    lo, hi = 0.0, 3.0
    f = lambda t: (3 - math.exp(t)) - t  # noqa: E731
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > 0 else (lo, mid)
    assert r.theta_upd[0] == pytest.approx(0.5 * (lo + hi), abs=1e-12)
    assert r.foc_residual <= 1e-10


def test_gaussian_volatility_against_dense_grid(rng):
    m = make_model("gaussian-vol")
    for _ in range(20):
        tp = rng.uniform(-2, 2)
        y = rng.normal() * math.exp(0.5 * rng.uniform(-2, 2))
        P = rng.uniform(0.05, 5)
        grid = np.linspace(tp - 10, tp + 10, 1_000_001)
        obj = m.logpdf_many(np.full((grid.size, 1), y), grid[:, None]) - 0.5 * P * (grid - tp) ** 2
        best = grid[np.argmax(obj)]
        r = isd_update(m, y, tp, PenaltySpec.static(P))
        assert abs(r.theta_upd[0] - best) <= grid[1] - grid[0]


def test_update_result_fields():
    m = make_model("poisson")
    r = isd_update(m, 5, 0.0, PenaltySpec.static(2.0))
    assert r.solver in ("closed_form", "bisection", "newton_linesearch", "projected_newton")
    assert r.status == "ok" or r.status == 0
    assert r.objective_gain >= -1e-12
    d = r.theta_upd - 0.0
    assert r.loglik_gain >= 0.5 * 2.0 * d @ d - 1e-10
    assert r.iterations >= 1


# -- explicit update -------------------------------------------------------------


def test_esd_zero_score():
    m = make_model("poisson")
    assert esd_update(m, 1, 0.0, 0.1).theta_upd[0] == 0.0


def test_esd_info_scaled_poisson():
    m = make_model("poisson")
    pen = PenaltySpec.info_scaled(0.1)
    assert esd_update(m, 1, 0.0, pen).theta_upd[0] == pytest.approx(0.0, abs=1e-15)
    tp, y = 0.4, 3
    expected = tp + 0.1 * math.exp(-tp / 2) * (y - math.exp(tp))
    assert esd_update(m, y, tp, pen).theta_upd[0] == pytest.approx(expected, rel=1e-14)


def test_esd_regression_equals_nlms_without_shrinkage(rng):
    m = make_model("regression", dim=3, sigma2=0.8)
    for _ in range(50):
        x = rng.normal(size=3)
        b = rng.normal(size=3)
        y = rng.normal()
        A = rng.normal(size=(3, 3))
        H = A @ A.T + 0.1 * np.eye(3)
        ex = esd_update(m, y, b, H, exo=x).theta_upd
        np.testing.assert_allclose(ex, b + H @ x * (y - x @ b) / 0.8, rtol=1e-12, atol=1e-12)
        # the implicit step is the explicit one shrunk by sigma2 / (sigma2 + x'Hx)
        im = isd_update_regression(y, x, b, H, 0.8)
        np.testing.assert_allclose(im - b, (ex - b) * 0.8 / (0.8 + x @ H @ x), rtol=1e-10, atol=1e-12)


def test_esd_flags_domain_exit():
    m = make_model("gamma2")
    r = esd_update(m, 50.0, np.array([0.5, 0.5]), np.eye(2) * 10)
    assert r.out_of_domain


def test_esd_quantile_at_kink_raises():
    m = make_model("quantile", taus=(0.5,))
    with pytest.raises(NonDifferentiableError):
        score(m, 1.0, 1.0)


# -- closed forms ------------------------------------------------------------------


def test_regression_zero_regressor():
    b = np.array([0.3, -1.0])
    np.testing.assert_array_equal(isd_update_regression(2.0, np.zeros(2), b, np.eye(2), 1.0), b)


def test_regression_large_regressor_shrinks():
    out = isd_update_regression(0.0, np.array([1e6]), np.array([1.0]), np.array([[0.0169]]), 1.0)
    assert abs(out[0]) < 1e-4


def test_regression_matches_generic_solver(rng):
    for _ in range(1000):
        k = rng.integers(1, 4)
        m = make_model("regression", dim=int(k), sigma2=float(rng.uniform(0.2, 3)))
        x = rng.normal(size=k)
        b = rng.normal(size=k)
        y = rng.normal() * 2
        A = rng.normal(size=(k, k))
        H = A @ A.T + 0.05 * np.eye(k)
        gen = isd_update(m, y, b, PenaltySpec.from_learning_rate(H), exo=x).theta_upd
        np.testing.assert_allclose(isd_update_regression(y, x, b, H, m.sigma2), gen, atol=1e-10, rtol=1e-10)


def test_quantile_examples():
    assert isd_update_quantile(0.7, [0.7], [0.5], 2.0, 1.0)[0] == 0.7
    assert isd_update_quantile(1.0, [0.0], [0.5], 4.002, 1.0)[0] == 1.0
    q = isd_update_quantile(0.0, [-1.0, 1.0], [0.25, 0.5], 0.5, 1.0)
    assert q[0] > -1.0 and q[1] < 1.0 and q[0] <= q[1]
    with pytest.raises(CrossedPredictions):
        isd_update_quantile(0.0, [1.0, 0.0], [0.25, 0.5], 1.0, 1.0)


def test_quantile_matches_generic_solver(rng):
    for _ in range(300):
        taus = tuple(np.sort(rng.choice(np.arange(0.05, 0.96, 0.05), size=3, replace=False)))
        m = make_model("quantile", taus=taus, sigma=float(rng.uniform(0.5, 2)))
        q = np.sort(rng.normal(size=3))
        y = rng.normal() * 2
        H = rng.uniform(0.01, 5)
        gen = isd_update(m, y, q, PenaltySpec.from_learning_rate(H * np.eye(3)),
                         opts=SolverOptions(multistart=True)).theta_upd
        np.testing.assert_allclose(isd_update_quantile(y, q, taus, H, m.sigma), gen, atol=1e-8)


def test_t_location_examples():
    r = isd_update_t_location(1.0, 1.0, 2.0, 1.0, 3.0)
    assert r.theta_upd[0] == 1.0
    r = isd_update_t_location(3.0, 1.0, 1.0, 1.0, 1e12)
    assert (r.theta_upd[0] - 1.0) / 2.0 == pytest.approx(0.5, abs=1e-6)


def test_t_location_fitted_parameters_match_grid():
    H, s2, nu, tp, e = 23.717, 0.387, 2.060, 0.0, 10.0
    sigma = math.sqrt(s2)
    r = isd_update_t_location(tp + e, tp, H, sigma, nu)
    grid = np.linspace(tp - 1, tp + e + 1, 1_000_001)
    # scaled objective: (nu sigma^2/(nu+1)) log p - (1/(2H)) (theta - tp)^2
    c = nu * s2 / (nu + 1)
    obj = -c * (nu + 1) / 2 * np.log1p((tp + e - grid) ** 2 / (nu * s2)) - (grid - tp) ** 2 / (2 * H)
    assert abs(r.theta_upd[0] - grid[np.argmax(obj)]) <= grid[1] - grid[0]
    # at these values the outlier is discounted: the update stays near the prediction
    assert r.theta_upd[0] < tp + 0.5 * e


def test_t_location_closed_form_matches_generic(rng):
    for _ in range(500):
        nu = rng.uniform(1, 10)
        sigma = rng.uniform(0.3, 2)
        H = rng.uniform(0.01, 30)
        tp = rng.normal()
        y = tp + rng.standard_cauchy()
        m = make_model("t-location", nu=nu, sigma=sigma)
        cf = isd_update_t_location(y, tp, H, sigma, nu).theta_upd[0]
        # the closed form uses the conventional scaling; P = 1/H under that scaling
        gen = isd_update(m, y, tp, PenaltySpec.static(1.0 / H), scaling=ScalingSpec.literature(m),
                         opts=SolverOptions(multistart=True)).theta_upd[0]
        assert cf == pytest.approx(gen, abs=1e-8 * (1 + abs(cf)))


def test_t_location_weight_bound(rng):
    for _ in range(10_000):
        nu, sigma, H = rng.uniform(0.5, 20), rng.uniform(0.2, 3), rng.uniform(1e-3, 50)
        tp, y = rng.normal(), rng.normal() * 10
        th = isd_update_t_location(y, tp, H, sigma, nu).theta_upd[0]
        if y == tp:
            continue
        w = (th - tp) / (y - tp)
        assert 0 < w <= H / (1 + H) + 1e-12
        assert min(y, tp) - 1e-12 <= th <= max(y, tp) + 1e-12


# -- average Hessian -----------------------------------------------------------------


def test_average_hessian_examples():
    m = make_model("poisson")
    assert compute_average_hessian(m, 1, 0.0, 1.0)[0, 0] == pytest.approx(math.e - 1, abs=1e-10)
    assert compute_average_hessian(m, 1, 0.3, 0.3)[0, 0] == pytest.approx(math.exp(0.3), rel=1e-14)
    r = make_model("regression", dim=2, sigma2=2.0)
    x = np.array([1.0, -3.0])
    np.testing.assert_allclose(compute_average_hessian(r, 0.1, [0, 0], [5, -2], exo=x), np.outer(x, x) / 2.0,
                               atol=1e-13)


@pytest.mark.parametrize("name,kwargs,rng_range", LOG_CONCAVE_CASES, ids=[c[0] for c in LOG_CONCAVE_CASES])
def test_curvature_corrected_identity(name, kwargs, rng_range, rng):
    m = build(name, kwargs)
    for _ in range(50):
        y, tp, exo = random_point(m, *rng_range, rng)
        P = np.diag(rng.uniform(0.3, 5, m.param_dim))
        r = isd_update(m, y, tp, PenaltySpec.static(P), exo=exo)
        Ibar = compute_average_hessian(m, y, tp, r.theta_upd, exo=exo)
        step = np.linalg.solve(P + Ibar, score(m, y, tp, exo))
        assert np.linalg.norm(r.theta_upd - tp - step) <= 1e-6


# -- invariants over random instances --------------------------------------------------


@pytest.mark.parametrize("name,kwargs,rng_range", FAMILY_CASES, ids=[c[0] for c in FAMILY_CASES])
def test_likelihood_improvement(name, kwargs, rng_range, rng):
    m = build(name, kwargs)
    opts = SolverOptions(multistart=True)
    for _ in range(200):
        y, tp, exo = random_point(m, *rng_range, rng)
        P = np.diag(rng.uniform(0.3, 5, m.param_dim))
        r = isd_update(m, y, tp, PenaltySpec.static(P), exo=exo, opts=opts)
        d = r.theta_upd - tp
        gain = log_density(m, y, r.theta_upd, exo) - log_density(m, y, tp, exo)
        assert gain >= 0.5 * d @ P @ d - 1e-9
        assert m.domain.contains(r.theta_upd)


@pytest.mark.parametrize("name,kwargs,rng_range", LOG_CONCAVE_CASES, ids=[c[0] for c in LOG_CONCAVE_CASES])
def test_alignment_and_shrinkage(name, kwargs, rng_range, rng):
    m = build(name, kwargs)
    alpha = m.concavity().alpha
    for _ in range(200):
        y, tp, exo = random_point(m, *rng_range, rng)
        P = np.diag(rng.uniform(0.3, 5, m.param_dim))
        r = isd_update(m, y, tp, PenaltySpec.static(P), exo=exo)
        g = score(m, y, tp, exo)
        d = r.theta_upd - tp
        assert d @ g >= -1e-10
        dex = np.linalg.solve(P, g)
        lmax = np.linalg.eigvalsh(P)[-1]
        assert d @ P @ d <= (lmax / (lmax + alpha)) ** 2 * dex @ P @ dex + 1e-9


def test_batch_update_matches_single(rng, backend):
    m = make_model("gamma", kappa=1.5)
    y = m.sample(rng.normal(size=200), rng)
    tp = rng.normal(size=200)
    P = rng.uniform(0.2, 4, 200)
    rows = m.kernel_rows(y)
    upd, _, st = backend.isd_batch(m.kernel_code, rows, m.kernel_params(), tp, P, 1.0, 1e-10, 100, 200, False, False)
    for i in range(200):
        single = isd_update(m, y[i], tp[i], PenaltySpec.static(P[i])).theta_upd[0]
        assert upd[i] == pytest.approx(single, abs=1e-10)
    assert np.all(np.asarray(st) == 0)


def test_batch_update_accepts_readonly_inputs():
    m = make_model("poisson")
    y = np.ones((5, 1))
    tp = np.broadcast_to(np.array(0.0), (5,))
    upd, _, _ = isd_update_many(m, y, tp, np.broadcast_to(np.array(1.0), (5,)))
    assert np.allclose(upd, upd[0])


def test_nonconcave_multistart_picks_global(rng):
    m = make_model("gaussian-corr")
    for _ in range(100):
        y, tp, _ = random_point(m, -2, 2, rng)
        P = rng.uniform(0.05, 0.25)
        r = isd_update(m, y, tp, PenaltySpec.static(P), opts=SolverOptions(multistart=True))
        res = optimize.minimize_scalar(lambda t: -_objective(m, y, t, tp, P), bounds=(tp[0] - 40, tp[0] + 40),
                                       method="bounded", options={"xatol": 1e-10})
        assert _objective(m, y, r.theta_upd, tp, P) >= -res.fun - 1e-8


@pytest.mark.parametrize("backend_name", ["python", "cython"])
def test_nonconcave_global_maximum_against_the_score(backend_name, monkeypatch):
    from isdfilter import kernels

    if backend_name == "cython" and not kernels.compiled_available():
        pytest.skip("compiled kernels not built")
    monkeypatch.setattr(kernels, "backend", kernels.get_backend(backend_name))
    # the score at tp points up, but the global maximum sits well below tp
    m = make_model("t-corr", nu=6.0)
    y = np.array([-0.28354564, 0.20482858])
    tp, P = 0.46832164250405217, 0.12175147627396063
    assert score(m, y, [tp])[0] > 0
    r = isd_update(m, y, [tp], PenaltySpec.static(P), opts=SolverOptions(multistart=True))
    grid = np.linspace(tp - 10, tp + 10, 1_000_001)
    obj = m.logpdf_many(np.broadcast_to(y, (grid.size, 2)), grid[:, None]) - 0.5 * P * (grid - tp) ** 2
    assert r.theta_upd[0] < tp
    assert abs(r.theta_upd[0] - grid[np.argmax(obj)]) <= grid[1] - grid[0]

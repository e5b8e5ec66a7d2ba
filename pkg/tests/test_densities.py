"""Density catalogue: closed-form values, derivative checks, concavity certificates, normalization."""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from isdfilter.densities import (
    FAMILIES,
    ScalingSpec,
    concavity_info,
    hessian,
    log_density,
    make_model,
    score,
)
from isdfilter.errors import (
    ConfigError,
    DomainError,
    NonDifferentiableError,
    ShapeError,
    SupportError,
)

from conftest import FAMILY_CASES, LOG_CONCAVE_CASES, build, random_point


def _fd_grad(model, y, theta, exo, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        step = h * max(1.0, abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        g[i] = (log_density(model, y, tp, exo) - log_density(model, y, tm, exo)) / (2 * step)
    return g


def _fd_hess(model, y, theta, exo, h=1e-5):
    K = theta.size
    H = np.zeros((K, K))
    for i in range(K):
        step = h * max(1.0, abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        H[:, i] = (score(model, y, tp, exo) - score(model, y, tm, exo)) / (2 * step)
    return 0.5 * (H + H.T)


# -- closed-form examples -------------------------------------------------------


def test_poisson_log_density_at_unit_intensity():
    assert log_density(make_model("poisson"), 0, 0.0) == pytest.approx(-1.0, abs=1e-15)


def test_gaussian_volatility_log_density_at_zero():
    assert log_density(make_model("gaussian-vol"), 0.0, 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_gamma2_density_normalizes_and_matches_scipy():
    m = make_model("gamma2")
    assert log_density(m, 0.25, [2.0, 8.0]) == pytest.approx(stats.gamma.logpdf(0.25, 2.0, scale=1 / 8.0), rel=1e-12)
    total, _ = integrate.quad(lambda y: math.exp(log_density(m, y, [2.0, 8.0])), 0, np.inf, epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_poisson_score_zero_at_mean():
    assert score(make_model("poisson"), 2, math.log(2.0))[0] == pytest.approx(0.0, abs=1e-14)


def test_ged_two_is_gaussian_score():
    m = make_model("ged", upsilon=2.0, sigma=1.3)
    # upsilon = 2 is a Gaussian with variance sigma^2 / 2
    assert score(m, 1.0, 0.0)[0] == pytest.approx(2.0 / 1.3**2, rel=1e-10)
    assert score(m, 1.0, 0.0)[0] == pytest.approx(_fd_grad(m, np.array([1.0]), np.array([0.0]), None)[0], abs=1e-6)


def test_t_location_scaled_score():
    m = make_model("t-location", nu=2.0, sigma=1.0)
    s = score(m, math.sqrt(2.0), 0.0, scaling=ScalingSpec.literature(m))[0]
    assert s == pytest.approx(math.sqrt(2.0) / 2.0, rel=1e-12)
    # the raw score is the scaled one times (nu+1)/(nu sigma^2)
    assert score(m, math.sqrt(2.0), 0.0)[0] == pytest.approx(1.5 * math.sqrt(2.0) / 2.0, rel=1e-12)


def test_regression_hessian_is_minus_xx():
    m = make_model("regression", dim=2, sigma2=1.0)
    H = hessian(m, 0.3, [0.1, -0.2], exo=[1.0, 2.0])
    np.testing.assert_allclose(H, -np.array([[1.0, 2.0], [2.0, 4.0]]), atol=1e-15)


def test_poisson_hessian_at_zero():
    assert hessian(make_model("poisson"), 3, 0.0)[0, 0] == pytest.approx(-1.0, abs=1e-15)


@pytest.mark.parametrize("nu,sigma", [(2.0, 1.0), (5.0, 0.7), (30.0, 2.0)])
def test_t_location_hessian_reaches_upper_bound(nu, sigma):
    m = make_model("t-location", nu=nu, sigma=sigma)
    e = math.sqrt(3 * nu) * sigma
    assert hessian(m, e, 0.0)[0, 0] == pytest.approx((nu + 1) / (8 * nu * sigma**2), rel=1e-12)


def test_concavity_catalogue():
    assert concavity_info(make_model("poisson")).alpha == 0.0
    ci = concavity_info(make_model("gaussian-corr"))
    assert ci.not_log_concave and ci.hessian_upper_bound == 0.25
    ct = concavity_info(make_model("t-location", nu=2.0, sigma=1.0))
    assert ct.not_log_concave and ct.hessian_upper_bound == pytest.approx(3 / 16)
    assert concavity_info(make_model("ged", upsilon=0.8)).not_log_concave
    assert concavity_info(make_model("ged", upsilon=1.0)).alpha == 0.0
    assert concavity_info(make_model("gaussian-location", sigma2=0.25)).alpha == pytest.approx(4.0)
    for key in ("negbin", "exponential", "gamma", "weibull", "gaussian-vol", "t-vol", "gamma2", "dirichlet",
                "regression", "quantile"):
        assert concavity_info(make_model(key)).alpha == 0.0, key


def test_quantile_log_density_is_check_loss():
    m = make_model("quantile", taus=(0.25,), sigma=1.0)
    c0 = log_density(m, 0.0, 0.0)
    for y, th in [(1.0, 0.0), (-2.0, 0.5), (0.3, 0.3)]:
        u = y - th
        rho = u * (0.25 - (u < 0))
        assert log_density(m, y, th) == pytest.approx(c0 - rho, abs=1e-14)


def test_family_identifiers_and_aliases():
    assert make_model("poisson_log_intensity").key == "poisson"
    assert set(FAMILIES) >= {"poisson", "ged", "t-location", "gamma2", "dirichlet", "quantile"}
    with pytest.raises(ConfigError):
        make_model("no-such-family")


# -- errors ---------------------------------------------------------------------


def test_errors():
    m = make_model("poisson")
    with pytest.raises(SupportError):
        log_density(m, -1, 0.0)
    with pytest.raises(SupportError):
        log_density(m, 1.5, 0.0)
    with pytest.raises(DomainError):
        log_density(make_model("gamma2"), 1.0, [-1.0, 2.0])
    with pytest.raises(ShapeError):
        log_density(m, [1, 2], 0.0)
    with pytest.raises(NonDifferentiableError):
        score(make_model("quantile"), 0.5, 0.5)
    with pytest.raises(ConfigError):
        make_model("t-vol", nu=2.0)
    with pytest.raises(ConfigError):
        make_model("quantile", taus=(0.5, 0.25))


def test_dirichlet_support_requires_unit_sum():
    m = make_model("dirichlet", n_components=3)
    log_density(m, [0.2, 0.3, 0.5], 0.0)
    with pytest.raises(SupportError):
        log_density(m, [0.2, 0.3, 0.5 + 1e-8], 0.0)
    with pytest.raises(SupportError):
        log_density(m, [-0.1, 0.6, 0.5], 0.0)


# -- derivative properties over random interior points ---------------------------


@pytest.mark.parametrize("name,kwargs,rng_range", FAMILY_CASES, ids=[c[0] for c in FAMILY_CASES])
def test_score_and_hessian_match_finite_differences(name, kwargs, rng_range, rng):
    m = build(name, kwargs)
    for _ in range(100):
        y, theta, exo = random_point(m, *rng_range, rng)
        g = score(m, y, theta, exo)
        gf = _fd_grad(m, y, theta, exo)
        np.testing.assert_allclose(g, gf, rtol=1e-5, atol=1e-5 * (1 + np.abs(gf).max()))
        H = hessian(m, y, theta, exo)
        Hf = _fd_hess(m, y, theta, exo)
        np.testing.assert_allclose(H, Hf, rtol=1e-5, atol=1e-5 * (1 + np.abs(Hf).max()))


@pytest.mark.parametrize("name,kwargs,rng_range", LOG_CONCAVE_CASES, ids=[c[0] for c in LOG_CONCAVE_CASES])
def test_concavity_certificate_holds(name, kwargs, rng_range, rng):
    m = build(name, kwargs)
    alpha = m.concavity().alpha
    for _ in range(1000):
        y, theta, exo = random_point(m, *rng_range, rng)
        lam = np.linalg.eigvalsh(-hessian(m, y, theta, exo))[0]
        assert lam >= alpha - 1e-10


def test_t_location_hessian_bounds(rng):
    for nu, sigma in [(2.0, 1.0), (2.06, math.sqrt(0.387)), (8.0, 0.5)]:
        m = make_model("t-location", nu=nu, sigma=sigma)
        up = (nu + 1) / (8 * nu * sigma**2)
        lo = -(nu + 1) / (nu * sigma**2)
        e = rng.standard_cauchy(1000) * 3
        h = m.hessian_many(e[:, None], np.zeros((1000, 1)))
        assert np.all(h <= up + 1e-10) and np.all(h >= lo - 1e-10)


_CONTINUOUS = [
    ("exponential", {}, (0, np.inf)),
    ("gamma", {"kappa": 1.5}, (0, np.inf)),
    ("weibull", {"kappa": 1.2}, (0, np.inf)),
    ("gaussian-vol", {}, (-np.inf, np.inf)),
    ("t-vol", {"nu": 6.0}, (-np.inf, np.inf)),
    ("ged", {"upsilon": 1.5}, (-np.inf, np.inf)),
    ("t-location", {"nu": 3.0, "sigma": 0.8}, (-np.inf, np.inf)),
    ("gaussian-location", {"sigma2": 0.5}, (-np.inf, np.inf)),
]


@pytest.mark.parametrize("name,kwargs,support", _CONTINUOUS, ids=[c[0] for c in _CONTINUOUS])
def test_normalization(name, kwargs, support, rng):
    m = build(name, kwargs)
    for theta in rng.uniform(-1.5, 1.5, 20):
        f = lambda y: math.exp(log_density(m, y, theta))  # noqa: E731
        pts = None if math.isinf(support[0]) else None
        total = integrate.quad(f, support[0], support[1], epsabs=1e-12, epsrel=1e-10, limit=400, points=pts)[0]
        assert total == pytest.approx(1.0, abs=1e-6)


def test_discrete_families_normalize():
    m = make_model("poisson")
    assert sum(math.exp(log_density(m, k, 0.7)) for k in range(200)) == pytest.approx(1.0, abs=1e-12)
    nb = make_model("negbin", kappa=4.0)
    assert sum(math.exp(log_density(nb, k, 0.7)) for k in range(2000)) == pytest.approx(1.0, abs=1e-10)


def test_correlation_density_normalizes():
    m = make_model("gaussian-corr")
    th = 0.8
    f = lambda a, b: math.exp(log_density(m, [a, b], th))  # noqa: E731
    total = integrate.dblquad(f, -9, 9, -9, 9, epsabs=1e-9)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


# -- samplers -------------------------------------------------------------------


def test_ged_unit_variance_by_simulation():
    for u in (1.0, 1.5, 2.0, 3.0, 4.0):
        m = make_model("ged", upsilon=u)
        assert m.sigma**2 == pytest.approx(special.gamma(1 / u) / special.gamma(3 / u), rel=1e-12)
        y = m.sample(np.zeros(400_000), np.random.default_rng(int(u * 10)))[:, 0]
        assert np.var(y) == pytest.approx(1.0, abs=0.01)


def test_ged_with_shape_keeps_unit_variance():
    m = make_model("ged", upsilon=2.0).with_shape(upsilon=1.0)
    assert m.sigma == pytest.approx(math.sqrt(0.5), rel=1e-12)


@pytest.mark.parametrize("name,kwargs,rng_range", FAMILY_CASES, ids=[c[0] for c in FAMILY_CASES])
def test_sampler_matches_score_mean_zero(name, kwargs, rng_range, rng):
    # under correct specification the score has mean zero
    m = build(name, kwargs)
    theta = np.full(m.param_dim, 0.5 * (rng_range[0] + rng_range[1]) + 0.3)
    n = 200_000
    exo = rng.normal(size=(n, m.exo_dim)) if m.exo_dim else None
    y = m.sample(np.broadcast_to(theta, (n, m.param_dim)), rng, exo)
    s = np.asarray(m.score_many(y, np.broadcast_to(theta, (n, m.param_dim)), exo)).reshape(n, -1)
    se = s.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(s.mean(axis=0)) <= 5 * se + 1e-12)


def test_dirichlet_draws_on_simplex(rng):
    m = make_model("dirichlet", n_components=5)
    y = m.sample(rng.normal(size=1000), rng)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

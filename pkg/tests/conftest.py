"""Shared fixtures: family catalogue, random interior points and kernel backends."""

import numpy as np
import pytest

from isdfilter import kernels
from isdfilter.densities import make_model

# (id, constructor kwargs, theta range) for every family with a scalar or small parameter
FAMILY_CASES = [
    ("poisson", {}, (-2.0, 2.0)),
    ("negbin", {"kappa": 4.0}, (-2.0, 2.0)),
    ("exponential", {}, (-2.0, 2.0)),
    ("gamma", {"kappa": 1.5}, (-2.0, 2.0)),
    ("weibull", {"kappa": 1.2}, (-2.0, 2.0)),
    ("gaussian-vol", {}, (-2.0, 2.0)),
    ("t-vol", {"nu": 6.0}, (-2.0, 2.0)),
    ("gaussian-corr", {}, (-3.0, 3.0)),
    ("t-corr", {"nu": 6.0}, (-3.0, 3.0)),
    ("ged", {"upsilon": 1.5}, (-2.0, 2.0)),
    ("gamma2", {}, (0.5, 4.0)),
    ("dirichlet", {"n_components": 4}, (-1.0, 2.0)),
    ("regression", {"dim": 2, "sigma2": 0.7}, (-2.0, 2.0)),
    ("t-location", {"nu": 3.0, "sigma": 0.8}, (-2.0, 2.0)),
    ("gaussian-location", {"sigma2": 0.5}, (-2.0, 2.0)),
]

SMOOTH_CASES = [c for c in FAMILY_CASES]
SCALAR_KERNEL_CASES = [c for c in FAMILY_CASES if c[0] not in ("gamma2", "regression")]
LOG_CONCAVE_CASES = [c for c in FAMILY_CASES if c[0] not in ("gaussian-corr", "t-corr", "t-location")]


def build(name, kwargs):
    return make_model(name, **kwargs)


def random_point(model, lo, hi, rng):
    """Interior parameter, an observation drawn at a nearby parameter and exogenous input."""
    theta = rng.uniform(lo, hi, model.param_dim)
    exo = rng.normal(size=model.exo_dim) if model.exo_dim else None
    draw_at = theta + rng.normal(scale=0.3, size=theta.shape)
    if model.domain.kind == "positive":
        draw_at = np.abs(draw_at) + 0.2
    y = model.sample(draw_at[None, :], rng, None if exo is None else exo[None, :])[0]
    return y, theta, exo


def backend_names():
    names = ["python"]
    if kernels.compiled_available():
        names.append("cython")
    return names


@pytest.fixture(params=backend_names())
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# PASS/FAIL lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

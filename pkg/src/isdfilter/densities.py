"""Catalog of observation densities with hand-coded scores and Hessians.

Every family exposes the log-density, the raw score and the raw Hessian with
respect to its time-varying parameter, a concavity certificate and a parameter
domain.  The vectorized ``*_many`` methods work on batches and are used by the
solvers and the Monte-Carlo diagnostics; the module-level functions validate a
single point and are the public entry points.

Families are addressed by stable string identifiers (``"poisson"``,
``"t-location"``, ...) through :func:`make_model`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence

import numpy as np
from scipy import special

from .errors import (
    ConfigError,
    DomainError,
    NonDifferentiableError,
    ShapeError,
    SupportError,
)

__all__ = [
    "ParamDomain",
    "ParamVector",
    "ConcavityInfo",
    "ScalingSpec",
    "DensityModel",
    "PoissonLogIntensity",
    "NegBinLogIntensity",
    "ExponentialLogIntensity",
    "GammaLogScale",
    "WeibullLogScale",
    "GaussianLogVariance",
    "StudentTLogVariance",
    "GaussianCorrelation",
    "StudentTCorrelation",
    "GEDLocation",
    "GammaTwoParam",
    "DirichletLogConcentration",
    "GaussianRegression",
    "AsymmetricLaplaceQuantile",
    "StudentTLocation",
    "GaussianLocation",
    "FAMILIES",
    "make_model",
    "log_density",
    "score",
    "hessian",
    "concavity_info",
]

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Domains and parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamDomain:
    """Parameter space of the time-varying parameter.

    Parameters
    ----------
    kind : {"unconstrained", "positive", "box"}
        Shape of the domain.
    dim : int
        Number of parameters K.
    lower, upper : tuple of float, optional
        Bounds for ``kind="box"``.
    """

    kind: str
    dim: int
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.kind not in ("unconstrained", "positive", "box"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("domain dimension must be positive")
        if self.kind == "box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ConfigError("box bounds must have length dim")
            if not np.all(lo < hi):
                raise ConfigError("box bounds require lower < upper")

    def contains(self, theta) -> bool:
        """Return True when ``theta`` is finite and strictly interior."""
        t = np.asarray(theta, dtype=float)
        if t.shape[-1:] != (self.dim,) or not np.all(np.isfinite(t)):
            return False
        if self.kind == "positive":
            return bool(np.all(t > 0))
        if self.kind == "box":
            return bool(np.all(t > np.asarray(self.lower)) and np.all(t < np.asarray(self.upper)))
        return True

    def check(self, theta) -> np.ndarray:
        """Validate ``theta`` and return it as a float vector."""
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.shape != (self.dim,):
            raise ShapeError(f"expected parameter of length {self.dim}, got shape {t.shape}")
        if not self.contains(t):
            raise DomainError(f"parameter {t} is not in the interior of the {self.kind} domain")
        return t

    def max_step(self, theta: np.ndarray, direction: np.ndarray) -> float:
        """Largest step s such that ``theta + s * direction`` stays inside."""
        if self.kind == "unconstrained":
            return math.inf
        if self.kind == "positive":
            lo = np.zeros(self.dim)
            hi = np.full(self.dim, np.inf)
        else:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
        s = math.inf
        for i in range(self.dim):
            if direction[i] < 0:
                s = min(s, (lo[i] - theta[i]) / direction[i])
            elif direction[i] > 0 and np.isfinite(hi[i]):
                s = min(s, (hi[i] - theta[i]) / direction[i])
        return s


@dataclass(frozen=True)
class ParamVector:
    """A point of the parameter space together with its domain."""

    values: np.ndarray
    domain: ParamDomain

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", self.domain.check(self.values))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class ConcavityInfo:
    """Concavity certificate of a family.

    ``alpha`` is the uniform strong-concavity coefficient when the family is
    log-concave and ``None`` otherwise.  ``hessian_upper_bound`` bounds the
    Hessian from above when it is known (non-concave families).
    """

    alpha: Optional[float]
    hessian_upper_bound: Optional[float] = None
    hessian_lower_bound: Optional[float] = None

    @property
    def log_concave(self) -> bool:
        return self.alpha is not None

    @property
    def not_log_concave(self) -> bool:
        return self.alpha is None


@dataclass(frozen=True)
class ScalingSpec:
    """Constant factor applied to the log-density objective.

    The update solves ``argmax c * log p(y|theta) - 0.5 ||theta - theta_pred||_P^2``
    so that ``c`` multiplies the score and the Hessian.  ``c = 1`` is the raw
    convention.
    """

    factor: float = 1.0

    def __post_init__(self) -> None:
        if not (self.factor > 0 and math.isfinite(self.factor)):
            raise ConfigError("scaling factor must be positive and finite")

    @classmethod
    def raw(cls) -> "ScalingSpec":
        return cls(1.0)

    @classmethod
    def literature(cls, model: "DensityModel") -> "ScalingSpec":
        """Conventional scaling of the family (``nu sigma^2/(nu+1)`` for t-location)."""
        return cls(model.literature_scale())


def _as_theta(theta) -> np.ndarray:
    if isinstance(theta, ParamVector):
        return theta.values
    return np.atleast_1d(np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Base class
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityModel:
    """Base class of the density catalog.

    Subclasses implement the vectorized ``_logpdf``, ``_score`` and ``_hess``
    methods on arrays with shapes ``y: (n, obs_dim)``, ``theta: (n, K)`` and
    ``exo: (n, E)``; the leading axes broadcast.
    """

    family: ClassVar[str] = ""
    key: ClassVar[str] = ""
    kernel_code: ClassVar[int] = -1
    obs_dim: ClassVar[int] = 1
    shape_names: ClassVar[tuple] = ()
    nonsmooth: ClassVar[bool] = False

    # -- structural properties ------------------------------------------
    @property
    def param_dim(self) -> int:
        return 1

    @property
    def exo_dim(self) -> int:
        return 0

    @property
    def domain(self) -> ParamDomain:
        return ParamDomain("unconstrained", self.param_dim)

    @property
    def param_domain(self) -> ParamDomain:
        return self.domain

    @property
    def shape(self) -> np.ndarray:
        return np.array([float(getattr(self, n)) for n in self.shape_names])

    def with_shape(self, **kwargs) -> "DensityModel":
        return dataclasses.replace(self, **kwargs)

    def literature_scale(self) -> float:
        return 1.0

    def concavity(self) -> ConcavityInfo:
        return ConcavityInfo(alpha=0.0)

    # -- support --------------------------------------------------------
    def check_support(self, y: np.ndarray) -> None:
        if not np.all(np.isfinite(y)):
            raise SupportError("observations must be finite")

    # -- vectorized interface ---------------------------------------------
    def logpdf_many(self, y, theta, exo=None) -> np.ndarray:
        y, theta, exo = self._batch(y, theta, exo)
        return self._logpdf(y, theta, exo)

    def score_many(self, y, theta, exo=None) -> np.ndarray:
        y, theta, exo = self._batch(y, theta, exo)
        return self._score(y, theta, exo)

    def hessian_many(self, y, theta, exo=None) -> np.ndarray:
        y, theta, exo = self._batch(y, theta, exo)
        return self._hess(y, theta, exo)

    def _batch(self, y, theta, exo):
        y = np.asarray(y, dtype=float)
        if y.ndim < 2:
            y = y.reshape(-1, self.obs_dim)
        theta = np.asarray(theta, dtype=float)
        if theta.ndim < 2:
            theta = theta.reshape(-1, self.param_dim)
        if exo is not None:
            exo = np.asarray(exo, dtype=float)
            if exo.ndim < 2:
                exo = exo.reshape(-1, self.exo_dim)
        return y, theta, exo

    def _logpdf(self, y, theta, exo):  # pragma: no cover - abstract
        raise NotImplementedError

    def _score(self, y, theta, exo):  # pragma: no cover - abstract
        raise NotImplementedError

    def _hess(self, y, theta, exo):  # pragma: no cover - abstract
        raise NotImplementedError

    # -- simulation and kernel packing ----------------------------------
    def sample(self, theta, rng: np.random.Generator, exo=None) -> np.ndarray:
        """Draw one observation per row of ``theta``; returns ``(n, obs_dim)``."""
        raise NotImplementedError(f"sampling is not available for {self.key}")

    def kernel_rows(self, y, exo=None) -> np.ndarray:
        """Pack a series into the ``(T, 3)`` layout of the compiled core."""
        raise NotImplementedError(f"{self.key} has no compiled kernel")

    def kernel_params(self) -> np.ndarray:
        return np.zeros(4)


class _ScalarFamily(DensityModel):
    """Helper base for families with a scalar parameter.

    Subclasses implement ``_lp(y, t)``, ``_sc(y, t)`` and ``_hs(y, t)`` where
    ``y`` has shape ``(n, obs_dim)`` and ``t`` shape ``(n,)`` (broadcasting).
    """

    def _logpdf(self, y, theta, exo):
        return self._lp(y, theta[..., 0])

    def _score(self, y, theta, exo):
        return self._sc(y, theta[..., 0])[..., None]

    def _hess(self, y, theta, exo):
        return self._hs(y, theta[..., 0])[..., None, None]

    def _lp(self, y, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _sc(self, y, t):  # pragma: no cover - abstract
        raise NotImplementedError

    def _hs(self, y, t):  # pragma: no cover - abstract
        raise NotImplementedError


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"shape parameter {name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# Count and duration families (log link)
# ---------------------------------------------------------------------------


def _check_counts(model: DensityModel, y) -> None:
    DensityModel.check_support(model, y)
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise SupportError(f"{model.key} observations must be nonnegative integers")


@dataclass(frozen=True)
class PoissonLogIntensity(_ScalarFamily):
    """Poisson counts with log-intensity ``theta``."""

    family: ClassVar[str] = "poisson_log_intensity"
    key: ClassVar[str] = "poisson"
    kernel_code: ClassVar[int] = 0

    def check_support(self, y):
        _check_counts(self, y)

    def _lp(self, y, t):
        y = y[..., 0]
        return y * t - np.exp(t) - special.gammaln(y + 1.0)

    def _sc(self, y, t):
        return y[..., 0] - np.exp(t)

    def _hs(self, y, t):
        return -np.exp(t) + 0.0 * y[..., 0]

    def sample(self, theta, rng, exo=None):
        lam = np.exp(np.asarray(theta, dtype=float).reshape(-1))
        return rng.poisson(lam).astype(float)[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.column_stack([y, np.zeros_like(y), -special.gammaln(y + 1.0)])


@dataclass(frozen=True)
class NegBinLogIntensity(_ScalarFamily):
    """Negative binomial counts with log-mean ``theta`` and dispersion ``kappa``."""

    kappa: float = 4.0
    family: ClassVar[str] = "negbin_log_intensity"
    key: ClassVar[str] = "negbin"
    kernel_code: ClassVar[int] = 1
    shape_names: ClassVar[tuple] = ("kappa",)

    def __post_init__(self):
        _positive("kappa", self.kappa)

    def check_support(self, y):
        _check_counts(self, y)

    def _lp(self, y, t):
        y = y[..., 0]
        k = self.kappa
        return (
            special.gammaln(k + y)
            - special.gammaln(k)
            - special.gammaln(y + 1.0)
            + k * math.log(k)
            + y * t
            - (k + y) * np.logaddexp(math.log(k), t)
        )

    def _sc(self, y, t):
        y = y[..., 0]
        k = self.kappa
        lam = np.exp(t)
        return y - (k + y) * lam / (k + lam)

    def _hs(self, y, t):
        y = y[..., 0]
        k = self.kappa
        lam = np.exp(t)
        return -k * lam * (k + y) / (k + lam) ** 2

    def sample(self, theta, rng, exo=None):
        lam = np.exp(np.asarray(theta, dtype=float).reshape(-1))
        mix = rng.gamma(self.kappa, lam / self.kappa)
        return rng.poisson(mix).astype(float)[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        k = self.kappa
        c = special.gammaln(k + y) - special.gammaln(k) - special.gammaln(y + 1.0) + k * math.log(k)
        return np.column_stack([y, np.zeros_like(y), c])

    def kernel_params(self):
        return np.array([self.kappa, 0.0, 0.0, 0.0])


class _PositiveObs:
    def check_support(self, y):
        DensityModel.check_support(self, y)
        if np.any(y <= 0):
            raise SupportError(f"{self.key} observations must be positive")


@dataclass(frozen=True)
class ExponentialLogIntensity(_PositiveObs, _ScalarFamily):
    """Exponential durations with log-rate ``theta``."""

    family: ClassVar[str] = "exponential_log_intensity"
    key: ClassVar[str] = "exponential"
    kernel_code: ClassVar[int] = 2

    def _lp(self, y, t):
        return t - np.exp(t) * y[..., 0]

    def _sc(self, y, t):
        return 1.0 - np.exp(t) * y[..., 0]

    def _hs(self, y, t):
        return -np.exp(t) * y[..., 0]

    def sample(self, theta, rng, exo=None):
        scale = np.exp(-np.asarray(theta, dtype=float).reshape(-1))
        return rng.exponential(scale)[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.column_stack([y, np.zeros_like(y), np.zeros_like(y)])


@dataclass(frozen=True)
class GammaLogScale(_PositiveObs, _ScalarFamily):
    """Gamma durations with shape ``kappa`` and log-scale ``theta``."""

    kappa: float = 1.5
    family: ClassVar[str] = "gamma_log_scale"
    key: ClassVar[str] = "gamma"
    kernel_code: ClassVar[int] = 3
    shape_names: ClassVar[tuple] = ("kappa",)

    def __post_init__(self):
        _positive("kappa", self.kappa)

    def _lp(self, y, t):
        y = y[..., 0]
        k = self.kappa
        return (k - 1.0) * np.log(y) - y * np.exp(-t) - k * t - special.gammaln(k)

    def _sc(self, y, t):
        return y[..., 0] * np.exp(-t) - self.kappa

    def _hs(self, y, t):
        return -y[..., 0] * np.exp(-t)

    def sample(self, theta, rng, exo=None):
        scale = np.exp(np.asarray(theta, dtype=float).reshape(-1))
        return rng.gamma(self.kappa, scale)[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        c = (self.kappa - 1.0) * np.log(y) - special.gammaln(self.kappa)
        return np.column_stack([y, np.zeros_like(y), c])

    def kernel_params(self):
        return np.array([self.kappa, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class WeibullLogScale(_PositiveObs, _ScalarFamily):
    """Weibull durations with shape ``kappa`` and log-scale ``theta``."""

    kappa: float = 1.2
    family: ClassVar[str] = "weibull_log_scale"
    key: ClassVar[str] = "weibull"
    kernel_code: ClassVar[int] = 4
    shape_names: ClassVar[tuple] = ("kappa",)

    def __post_init__(self):
        _positive("kappa", self.kappa)

    def _lp(self, y, t):
        y = y[..., 0]
        k = self.kappa
        ly = np.log(y)
        return math.log(k) + (k - 1.0) * ly - k * t - np.exp(k * (ly - t))

    def _sc(self, y, t):
        k = self.kappa
        return k * np.exp(k * (np.log(y[..., 0]) - t)) - k

    def _hs(self, y, t):
        k = self.kappa
        return -k * k * np.exp(k * (np.log(y[..., 0]) - t))

    def sample(self, theta, rng, exo=None):
        scale = np.exp(np.asarray(theta, dtype=float).reshape(-1))
        u = rng.random(scale.shape[0])
        return (scale * (-np.log1p(-u)) ** (1.0 / self.kappa))[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        ly = np.log(y)
        c = math.log(self.kappa) + (self.kappa - 1.0) * ly
        return np.column_stack([y, ly, c])

    def kernel_params(self):
        return np.array([self.kappa, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Volatility families (log-variance link)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianLogVariance(_ScalarFamily):
    """Zero-mean Gaussian with log-variance ``theta``."""

    family: ClassVar[str] = "gaussian_log_variance"
    key: ClassVar[str] = "gaussian-vol"
    kernel_code: ClassVar[int] = 5

    def _lp(self, y, t):
        return -0.5 * LOG_2PI - 0.5 * t - 0.5 * y[..., 0] ** 2 * np.exp(-t)

    def _sc(self, y, t):
        return 0.5 * y[..., 0] ** 2 * np.exp(-t) - 0.5

    def _hs(self, y, t):
        return -0.5 * y[..., 0] ** 2 * np.exp(-t)

    def sample(self, theta, rng, exo=None):
        sd = np.exp(0.5 * np.asarray(theta, dtype=float).reshape(-1))
        return (sd * rng.standard_normal(sd.shape[0]))[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.column_stack([y * y, np.zeros_like(y), np.full_like(y, -0.5 * LOG_2PI)])


@dataclass(frozen=True)
class StudentTLogVariance(_ScalarFamily):
    """Variance-targeted Student-t with log-variance ``theta`` and ``nu > 2``."""

    nu: float = 6.0
    family: ClassVar[str] = "t_log_variance"
    key: ClassVar[str] = "t-vol"
    kernel_code: ClassVar[int] = 6
    shape_names: ClassVar[tuple] = ("nu",)

    def __post_init__(self):
        if not (self.nu > 2 and math.isfinite(self.nu)):
            raise ConfigError("t volatility requires nu > 2")

    def _const(self) -> float:
        nu = self.nu
        return special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log((nu - 2) * math.pi)

    def _lp(self, y, t):
        nu = self.nu
        u = y[..., 0] ** 2 * np.exp(-t)
        return self._const() - 0.5 * t - 0.5 * (nu + 1) * np.log1p(u / (nu - 2))

    def _sc(self, y, t):
        nu = self.nu
        u = y[..., 0] ** 2 * np.exp(-t)
        return 0.5 * (nu + 1) * u / (nu - 2 + u) - 0.5

    def _hs(self, y, t):
        nu = self.nu
        u = y[..., 0] ** 2 * np.exp(-t)
        return -0.5 * (nu + 1) * (nu - 2) * u / (nu - 2 + u) ** 2

    def sample(self, theta, rng, exo=None):
        sd = np.exp(0.5 * np.asarray(theta, dtype=float).reshape(-1))
        z = rng.standard_t(self.nu, sd.shape[0]) * math.sqrt((self.nu - 2) / self.nu)
        return (sd * z)[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.column_stack([y * y, np.zeros_like(y), np.full_like(y, self._const())])

    def kernel_params(self):
        return np.array([self.nu, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Dependence families (correlation through rho = tanh(theta / 2))
# ---------------------------------------------------------------------------


def _corr_terms(y, t):
    """Return rho, 1 - rho^2, Q, u = Q/D and its first two rho-derivatives."""
    y1 = y[..., 0]
    y2 = y[..., 1]
    rho = np.tanh(0.5 * t)
    # 1 - tanh^2(t/2) = 4 e^{-|t|} / (1 + e^{-|t|})^2, stable for large |t|
    e = np.exp(-np.abs(t))
    d = 4.0 * e / (1.0 + e) ** 2
    a = y1 * y1 + y2 * y2
    b = y1 * y2
    q = a - 2.0 * rho * b
    n1 = b * d - rho * q
    u = q / d
    du = -2.0 * n1 / d**2
    d2u = (2.0 * q * d - 8.0 * rho * n1) / d**3
    return rho, d, u, du, d2u


def _log_one_minus_rho2(t):
    # log(1 - tanh(t/2)^2) = -2 log cosh(t/2)
    a = np.abs(0.5 * t)
    return -2.0 * (a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0))


@dataclass(frozen=True)
class GaussianCorrelation(_ScalarFamily):
    """Bivariate standard Gaussian with correlation ``(1-e^-t)/(1+e^-t)``."""

    family: ClassVar[str] = "gaussian_correlation"
    key: ClassVar[str] = "gaussian-corr"
    kernel_code: ClassVar[int] = 7
    obs_dim: ClassVar[int] = 2

    def concavity(self):
        return ConcavityInfo(alpha=None, hessian_upper_bound=0.25)

    def _lp(self, y, t):
        rho, d, u, du, d2u = _corr_terms(y, t)
        return -LOG_2PI - 0.5 * _log_one_minus_rho2(t) - 0.5 * u

    def _rho_derivs(self, y, t):
        rho, d, u, du, d2u = _corr_terms(y, t)
        l1 = rho / d - 0.5 * du
        l2 = (1.0 + rho**2) / d**2 - 0.5 * d2u
        return rho, d, l1, l2

    def _sc(self, y, t):
        rho, d, l1, l2 = self._rho_derivs(y, t)
        return 0.5 * l1 * d

    def _hs(self, y, t):
        rho, d, l1, l2 = self._rho_derivs(y, t)
        return 0.25 * l2 * d * d - 0.5 * l1 * rho * d

    def _draw_pair(self, rho, rng):
        n = rho.shape[0]
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        return z1, rho * z1 + np.sqrt(1.0 - rho**2) * z2

    def sample(self, theta, rng, exo=None):
        rho = np.tanh(0.5 * np.asarray(theta, dtype=float).reshape(-1))
        y1, y2 = self._draw_pair(rho, rng)
        return np.column_stack([y1, y2])

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        return np.column_stack([y[:, 0], y[:, 1], np.full(y.shape[0], -LOG_2PI)])


@dataclass(frozen=True)
class StudentTCorrelation(GaussianCorrelation):
    """Bivariate unit-variance Student-t with correlation ``(1-e^-t)/(1+e^-t)``."""

    nu: float = 6.0
    family: ClassVar[str] = "t_correlation"
    key: ClassVar[str] = "t-corr"
    kernel_code: ClassVar[int] = 8
    shape_names: ClassVar[tuple] = ("nu",)

    def __post_init__(self):
        if not (self.nu > 2 and math.isfinite(self.nu)):
            raise ConfigError("t correlation requires nu > 2")

    def _const(self) -> float:
        return math.log(self.nu) - math.log(2.0 * math.pi * (self.nu - 2.0))

    def _lp(self, y, t):
        rho, d, u, du, d2u = _corr_terms(y, t)
        m = self.nu - 2.0
        return self._const() - 0.5 * _log_one_minus_rho2(t) - 0.5 * (self.nu + 2.0) * np.log1p(u / m)

    def _rho_derivs(self, y, t):
        rho, d, u, du, d2u = _corr_terms(y, t)
        m = self.nu - 2.0
        c = 0.5 * (self.nu + 2.0)
        l1 = rho / d - c * du / (m + u)
        l2 = (1.0 + rho**2) / d**2 - c * (d2u / (m + u) - du**2 / (m + u) ** 2)
        return rho, d, l1, l2

    def sample(self, theta, rng, exo=None):
        rho = np.tanh(0.5 * np.asarray(theta, dtype=float).reshape(-1))
        y1, y2 = self._draw_pair(rho, rng)
        w = np.sqrt((self.nu - 2.0) / rng.chisquare(self.nu, rho.shape[0]))
        return np.column_stack([y1 * w, y2 * w])

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        return np.column_stack([y[:, 0], y[:, 1], np.full(y.shape[0], self._const())])

    def kernel_params(self):
        return np.array([self.nu, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Location families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GEDLocation(_ScalarFamily):
    """Generalized error distribution with time-varying location.

    ``sigma=None`` selects the unit-variance scale
    ``sigma^2 = Gamma(1/upsilon) / Gamma(3/upsilon)``.
    """

    upsilon: float = 2.0
    sigma: Optional[float] = None
    unit_variance: bool = field(default=False, repr=False)
    family: ClassVar[str] = "ged_location"
    key: ClassVar[str] = "ged"
    kernel_code: ClassVar[int] = 9
    shape_names: ClassVar[tuple] = ("upsilon", "sigma")

    def __post_init__(self):
        _positive("upsilon", self.upsilon)
        if self.sigma is None:
            u = self.upsilon
            s2 = math.exp(special.gammaln(1.0 / u) - special.gammaln(3.0 / u))
            object.__setattr__(self, "sigma", math.sqrt(s2))
            object.__setattr__(self, "unit_variance", True)
        _positive("sigma", self.sigma)

    def with_shape(self, **kwargs) -> "GEDLocation":
        # a unit-variance model keeps unit variance when upsilon changes
        if self.unit_variance and "sigma" not in kwargs:
            kwargs["sigma"] = None
        return dataclasses.replace(self, **kwargs)

    @property
    def nonsmooth(self) -> bool:  # type: ignore[override]
        return self.upsilon <= 1.0

    def concavity(self):
        if self.upsilon >= 1.0:
            return ConcavityInfo(alpha=0.0)
        return ConcavityInfo(alpha=None)

    def _const(self) -> float:
        return math.log(self.upsilon) - math.log(2.0 * self.sigma) - special.gammaln(1.0 / self.upsilon)

    def _lp(self, y, t):
        z = np.abs((y[..., 0] - t) / self.sigma)
        return self._const() - z**self.upsilon

    def _sc(self, y, t):
        e = y[..., 0] - t
        z = np.abs(e / self.sigma)
        u = self.upsilon
        with np.errstate(divide="ignore", invalid="ignore"):
            s = u / self.sigma * np.sign(e) * z ** (u - 1.0)
        return np.where(e == 0, 0.0, s)

    def _hs(self, y, t):
        e = y[..., 0] - t
        z = np.abs(e / self.sigma)
        u = self.upsilon
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -u * (u - 1.0) / self.sigma**2 * z ** (u - 2.0)
        if u == 2.0:
            return -2.0 / self.sigma**2 + 0.0 * h
        if u > 2.0:
            return np.where(e == 0, 0.0, h)
        return h

    def sample(self, theta, rng, exo=None):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        n = theta.shape[0]
        g = rng.gamma(1.0 / self.upsilon, 1.0, n)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return (theta + self.sigma * sign * g ** (1.0 / self.upsilon))[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.column_stack([y, np.zeros_like(y), np.full_like(y, self._const())])

    def kernel_params(self):
        return np.array([self.upsilon, self.sigma, 0.0, 0.0])


@dataclass(frozen=True)
class StudentTLocation(_ScalarFamily):
    """Student-t with time-varying location, scale ``sigma`` and ``nu`` degrees of freedom."""

    nu: float = 5.0
    sigma: float = 1.0
    family: ClassVar[str] = "t_location"
    key: ClassVar[str] = "t-location"
    kernel_code: ClassVar[int] = 11
    shape_names: ClassVar[tuple] = ("nu", "sigma")

    def __post_init__(self):
        _positive("nu", self.nu)
        _positive("sigma", self.sigma)

    def literature_scale(self) -> float:
        return self.nu * self.sigma**2 / (self.nu + 1.0)

    def concavity(self):
        c = (self.nu + 1.0) / (self.nu * self.sigma**2)
        return ConcavityInfo(alpha=None, hessian_upper_bound=c / 8.0, hessian_lower_bound=-c)

    def _const(self) -> float:
        nu = self.nu
        return (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi * self.sigma**2)
        )

    def _lp(self, y, t):
        e = y[..., 0] - t
        return self._const() - 0.5 * (self.nu + 1) * np.log1p(e * e / (self.nu * self.sigma**2))

    def _sc(self, y, t):
        e = y[..., 0] - t
        s2n = self.nu * self.sigma**2
        return (self.nu + 1) / s2n * e / (1.0 + e * e / s2n)

    def _hs(self, y, t):
        e = y[..., 0] - t
        s2n = self.nu * self.sigma**2
        k = e * e / s2n
        return (self.nu + 1) / s2n * (k - 1.0) / (1.0 + k) ** 2

    def sample(self, theta, rng, exo=None):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return (theta + self.sigma * rng.standard_t(self.nu, theta.shape[0]))[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        return np.column_stack([y, np.zeros_like(y), np.full_like(y, self._const())])

    def kernel_params(self):
        return np.array([self.nu, self.sigma, 0.0, 0.0])


@dataclass(frozen=True)
class GaussianLocation(_ScalarFamily):
    """Gaussian with time-varying mean and known variance ``sigma2``.

    Strongly log-concave with ``alpha = 1/sigma2``; used by the diagnostics.
    """

    sigma2: float = 1.0
    family: ClassVar[str] = "gaussian_location"
    key: ClassVar[str] = "gaussian-location"
    kernel_code: ClassVar[int] = 13
    shape_names: ClassVar[tuple] = ("sigma2",)

    def __post_init__(self):
        _positive("sigma2", self.sigma2)

    def concavity(self):
        return ConcavityInfo(alpha=1.0 / self.sigma2)

    def _lp(self, y, t):
        e = y[..., 0] - t
        return -0.5 * (LOG_2PI + math.log(self.sigma2)) - 0.5 * e * e / self.sigma2

    def _sc(self, y, t):
        return (y[..., 0] - t) / self.sigma2

    def _hs(self, y, t):
        return np.full(np.broadcast(y[..., 0], t).shape, -1.0 / self.sigma2)

    def sample(self, theta, rng, exo=None):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return (theta + math.sqrt(self.sigma2) * rng.standard_normal(theta.shape[0]))[:, None]

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1)
        c = -0.5 * (LOG_2PI + math.log(self.sigma2))
        return np.column_stack([y, np.zeros_like(y), np.full_like(y, c)])

    def kernel_params(self):
        return np.array([self.sigma2, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Two-parameter Gamma
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaTwoParam(_PositiveObs, DensityModel):
    """Gamma with time-varying shape ``a`` and rate ``b``.

    ``link="identity"`` works on the positive quadrant directly;
    ``link="exp"`` uses ``theta = (log a, log b)`` on the whole plane.
    """

    link: str = "identity"
    family: ClassVar[str] = "gamma_two_param"
    key: ClassVar[str] = "gamma2"

    def __post_init__(self):
        if self.link not in ("identity", "exp"):
            raise ConfigError("gamma2 link must be 'identity' or 'exp'")

    @property
    def param_dim(self) -> int:
        return 2

    @property
    def domain(self) -> ParamDomain:
        kind = "positive" if self.link == "identity" else "unconstrained"
        return ParamDomain(kind, 2)

    def natural(self, theta) -> np.ndarray:
        """Map ``theta`` to ``(a, b)``."""
        theta = np.asarray(theta, dtype=float)
        return np.exp(theta) if self.link == "exp" else theta

    def _logpdf(self, y, theta, exo):
        ab = self.natural(theta)
        a, b = ab[..., 0], ab[..., 1]
        y = y[..., 0]
        return a * np.log(b) + (a - 1.0) * np.log(y) - b * y - special.gammaln(a)

    def _score(self, y, theta, exo):
        ab = self.natural(theta)
        a, b = ab[..., 0], ab[..., 1]
        y = y[..., 0]
        sa = np.log(b) + np.log(y) - special.digamma(a)
        sb = a / b - y
        if self.link == "exp":
            sa, sb = a * sa, b * sb
        return np.stack(np.broadcast_arrays(sa, sb), axis=-1)

    def _hess(self, y, theta, exo):
        ab = self.natural(theta)
        a, b = ab[..., 0], ab[..., 1]
        y = y[..., 0]
        if self.link == "exp":
            sa = np.log(b) + np.log(y) - special.digamma(a)
            haa = a * sa - a * a * special.polygamma(1, a)
            hab = a + 0.0 * y
            hbb = -b * y
        else:
            haa = -special.polygamma(1, a) + 0.0 * y
            hab = 1.0 / b + 0.0 * y
            hbb = -a / b**2 + 0.0 * y
        haa, hab, hbb = np.broadcast_arrays(haa, hab, hbb)
        row0 = np.stack([haa, hab], axis=-1)
        row1 = np.stack([hab, hbb], axis=-1)
        return np.stack([row0, row1], axis=-2)

    def concavity(self):
        if self.link == "identity":
            return ConcavityInfo(alpha=0.0)
        return ConcavityInfo(alpha=None)

    def sample(self, theta, rng, exo=None):
        ab = self.natural(np.asarray(theta, dtype=float).reshape(-1, 2))
        return rng.gamma(ab[:, 0], 1.0 / ab[:, 1])[:, None]


# ---------------------------------------------------------------------------
# Dirichlet with a common concentration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletLogConcentration(_ScalarFamily):
    """Symmetric Dirichlet on ``n_components`` shares with log-concentration ``theta``."""

    n_components: int = 2
    family: ClassVar[str] = "dirichlet_log_concentration"
    key: ClassVar[str] = "dirichlet"
    kernel_code: ClassVar[int] = 10
    shape_names: ClassVar[tuple] = ("n_components",)
    sum_tol: ClassVar[float] = 1e-10

    def __post_init__(self):
        if int(self.n_components) != self.n_components or self.n_components < 2:
            raise ConfigError("Dirichlet needs an integer n_components >= 2")

    @property
    def obs_dim(self) -> int:  # type: ignore[override]
        return int(self.n_components)

    def check_support(self, y):
        DensityModel.check_support(self, y)
        y = np.asarray(y, dtype=float).reshape(-1, self.obs_dim)
        if np.any(y < 0):
            raise SupportError("Dirichlet components must be nonnegative")
        if np.any(np.abs(y.sum(axis=1) - 1.0) > self.sum_tol):
            raise SupportError("Dirichlet components must sum to 1 within 1e-10")

    def _logsum(self, y):
        with np.errstate(divide="ignore"):
            return np.sum(np.log(y), axis=-1)

    def _lp(self, y, t):
        n = self.n_components
        lam = np.exp(t)
        return special.gammaln(n * lam) - n * special.gammaln(lam) + (lam - 1.0) * self._logsum(y)

    def _sc(self, y, t):
        n = self.n_components
        lam = np.exp(t)
        return lam * (n * special.digamma(n * lam) - n * special.digamma(lam) + self._logsum(y))

    def _hs(self, y, t):
        n = self.n_components
        lam = np.exp(t)
        first = lam * (n * special.digamma(n * lam) - n * special.digamma(lam) + self._logsum(y))
        second = lam**2 * (n * n * special.polygamma(1, n * lam) - n * special.polygamma(1, lam))
        return first + second

    def sample(self, theta, rng, exo=None):
        lam = np.exp(np.asarray(theta, dtype=float).reshape(-1))
        g = rng.gamma(np.repeat(lam[:, None], self.n_components, axis=1))
        return g / g.sum(axis=1, keepdims=True)

    def kernel_rows(self, y, exo=None):
        y = np.asarray(y, dtype=float).reshape(-1, self.obs_dim)
        s = self._logsum(y)
        return np.column_stack([s, np.zeros_like(s), np.zeros_like(s)])

    def kernel_params(self):
        return np.array([float(self.n_components), 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Regression and quantile families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianRegression(DensityModel):
    """Linear regression ``y = intercept + x'beta + e`` with time-varying ``beta``."""

    dim: int = 1
    sigma2: float = 1.0
    intercept: float = 0.0
    family: ClassVar[str] = "gaussian_regression"
    key: ClassVar[str] = "regression"
    shape_names: ClassVar[tuple] = ("sigma2", "intercept")

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError("regression dimension must be a positive integer")
        _positive("sigma2", self.sigma2)

    @property
    def kernel_code(self) -> int:  # type: ignore[override]
        return 12 if self.dim == 1 else -1

    @property
    def param_dim(self) -> int:
        return int(self.dim)

    @property
    def exo_dim(self) -> int:
        return int(self.dim)

    def _resid(self, y, theta, exo):
        if exo is None:
            raise ShapeError("regression requires exogenous regressors")
        return y[..., 0] - self.intercept - np.sum(exo * theta, axis=-1)

    def _logpdf(self, y, theta, exo):
        r = self._resid(y, theta, exo)
        return -0.5 * (LOG_2PI + math.log(self.sigma2)) - 0.5 * r * r / self.sigma2

    def _score(self, y, theta, exo):
        r = self._resid(y, theta, exo)
        return exo * (r / self.sigma2)[..., None]

    def _hess(self, y, theta, exo):
        if exo is None:
            raise ShapeError("regression requires exogenous regressors")
        outer = -exo[..., :, None] * exo[..., None, :] / self.sigma2
        shape = np.broadcast_shapes(y.shape[:-1], theta.shape[:-1], exo.shape[:-1])
        return np.broadcast_to(outer, shape + outer.shape[-2:]).copy()

    def sample(self, theta, rng, exo=None):
        if exo is None:
            raise ShapeError("regression requires exogenous regressors")
        theta = np.asarray(theta, dtype=float).reshape(-1, self.dim)
        exo = np.asarray(exo, dtype=float).reshape(-1, self.dim)
        mean = self.intercept + np.sum(exo * theta, axis=1)
        return (mean + math.sqrt(self.sigma2) * rng.standard_normal(mean.shape[0]))[:, None]

    def kernel_rows(self, y, exo=None):
        if self.dim != 1:
            raise NotImplementedError("compiled regression kernel is scalar only")
        y = np.asarray(y, dtype=float).reshape(-1)
        x = np.asarray(exo, dtype=float).reshape(-1)
        c = -0.5 * (LOG_2PI + math.log(self.sigma2))
        return np.column_stack([y - self.intercept, x, np.full_like(y, c)])

    def kernel_params(self):
        return np.array([self.sigma2, 0.0, 0.0, 0.0])


def check_loss(u, tau):
    """Quantile check function ``rho_tau(u) = u (tau - 1[u < 0])``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


@dataclass(frozen=True)
class AsymmetricLaplaceQuantile(DensityModel):
    """Composite asymmetric-Laplace likelihood for a vector of quantiles.

    ``theta[l]`` is the quantile at level ``taus[l]``; the log-density is the
    unweighted sum of the per-level asymmetric-Laplace log-densities.
    """

    taus: tuple = (0.5,)
    sigma: float = 1.0
    family: ClassVar[str] = "asymmetric_laplace_quantile"
    key: ClassVar[str] = "quantile"
    nonsmooth: ClassVar[bool] = True
    shape_names: ClassVar[tuple] = ("sigma",)

    def __post_init__(self):
        taus = tuple(float(t) for t in np.atleast_1d(self.taus))
        object.__setattr__(self, "taus", taus)
        if not all(0.0 < t < 1.0 for t in taus):
            raise ConfigError("quantile levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigError("quantile levels must be strictly increasing")
        _positive("sigma", self.sigma)

    @property
    def param_dim(self) -> int:
        return len(self.taus)

    def _logpdf(self, y, theta, exo):
        tau = np.asarray(self.taus)
        u = y[..., 0][..., None] - theta
        norm = np.log(tau * (1.0 - tau) / self.sigma)
        return np.sum(norm - check_loss(u, tau) / self.sigma, axis=-1)

    def _score(self, y, theta, exo):
        tau = np.asarray(self.taus)
        below = (y[..., 0][..., None] < theta).astype(float)
        return (tau - below) / self.sigma

    def _hess(self, y, theta, exo):
        k = self.param_dim
        shape = np.broadcast_shapes(y.shape[:-1], theta.shape[:-1])
        return np.zeros(shape + (k, k))

    def sample(self, theta, rng, exo=None):
        if self.param_dim != 1:
            raise NotImplementedError("sampling is defined for a single quantile level")
        tau = self.taus[0]
        theta = np.asarray(theta, dtype=float).reshape(-1)
        n = theta.shape[0]
        e1 = rng.standard_exponential(n)
        e2 = rng.standard_exponential(n)
        return (theta + self.sigma * (e1 / tau - e2 / (1.0 - tau)))[:, None]


# ---------------------------------------------------------------------------
# Registry and public functions
# ---------------------------------------------------------------------------

FAMILIES: dict = {
    cls.key: cls
    for cls in (
        PoissonLogIntensity,
        NegBinLogIntensity,
        ExponentialLogIntensity,
        GammaLogScale,
        WeibullLogScale,
        GaussianLogVariance,
        StudentTLogVariance,
        GaussianCorrelation,
        StudentTCorrelation,
        GEDLocation,
        GammaTwoParam,
        DirichletLogConcentration,
        GaussianRegression,
        AsymmetricLaplaceQuantile,
        StudentTLocation,
        GaussianLocation,
    )
}
_ALIASES = {cls.family: key for key, cls in FAMILIES.items()}


def make_model(name: str, **shape) -> DensityModel:
    """Build a density model from its identifier and shape parameters.

    Parameters
    ----------
    name : str
        Stable identifier such as ``"poisson"`` or ``"t-location"``; the long
        family names (``"poisson_log_intensity"``) are accepted too.
    **shape
        Family-specific shape parameters.
    """
    key = _ALIASES.get(name, name)
    if key not in FAMILIES:
        raise ConfigError(f"unknown family {name!r}; known: {sorted(FAMILIES)}")
    try:
        return FAMILIES[key](**shape)
    except TypeError as exc:
        raise ConfigError(f"bad shape parameters for {key}: {exc}") from None


def _prepare(model: DensityModel, y, theta, exo):
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    if yv.shape != (model.obs_dim,):
        raise ShapeError(f"expected observation of length {model.obs_dim}, got shape {yv.shape}")
    model.check_support(yv)
    t = model.domain.check(_as_theta(theta))
    ev = None
    if model.exo_dim:
        if exo is None:
            raise ShapeError(f"{model.key} requires exogenous inputs of length {model.exo_dim}")
        ev = np.atleast_1d(np.asarray(exo, dtype=float))
        if ev.shape != (model.exo_dim,):
            raise ShapeError(f"expected exogenous input of length {model.exo_dim}")
        if not np.all(np.isfinite(ev)):
            raise SupportError("exogenous inputs must be finite")
    return yv[None, :], t[None, :], None if ev is None else ev[None, :]


def log_density(model: DensityModel, y, theta, exo=None) -> float:
    """Log-density ``log p(y | theta)`` at a single point.

    Raises
    ------
    DomainError
        ``theta`` outside the parameter domain.
    SupportError
        ``y`` outside the support.
    ShapeError
        Dimension mismatch.
    """
    yv, t, ev = _prepare(model, y, theta, exo)
    return float(model._logpdf(yv, t, ev)[0])


def score(model: DensityModel, y, theta, exo=None, scaling: Optional[ScalingSpec] = None) -> np.ndarray:
    """Score of the log-density with respect to ``theta``.

    The raw score is returned unless ``scaling`` is given.
    """
    yv, t, ev = _prepare(model, y, theta, exo)
    if model.key == "quantile" and np.any(yv[0, 0] == t[0]):
        raise NonDifferentiableError("asymmetric Laplace score is undefined at y == theta")
    g = model._score(yv, t, ev)[0]
    if scaling is not None:
        g = scaling.factor * g
    return np.asarray(g, dtype=float)


def hessian(model: DensityModel, y, theta, exo=None, scaling: Optional[ScalingSpec] = None) -> np.ndarray:
    """Hessian of the log-density with respect to ``theta`` (K x K).

    For the asymmetric-Laplace family the Hessian is zero almost everywhere;
    a zero matrix is returned and ``model.nonsmooth`` flags the situation.
    """
    yv, t, ev = _prepare(model, y, theta, exo)
    h = np.asarray(model._hess(yv, t, ev)[0], dtype=float).reshape(model.param_dim, model.param_dim)
    if scaling is not None:
        h = scaling.factor * h
    return h


def concavity_info(model: DensityModel) -> ConcavityInfo:
    """Concavity certificate of ``model``."""
    return model.concavity()


def as_series(model: DensityModel, y: Sequence) -> np.ndarray:
    """Coerce an observation series to shape ``(T, obs_dim)``."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1 and model.obs_dim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != model.obs_dim:
        raise ShapeError(f"expected series of shape (T, {model.obs_dim}), got {arr.shape}")
    return arr

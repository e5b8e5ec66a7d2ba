"""Per-step implicit (proximal) and explicit score-driven updates.

The implicit update maximizes the regularized log-likelihood

    f(theta) = c * log p(y | theta) - 0.5 * (theta - theta_pred)' P (theta - theta_pred)

where ``P`` is the penalty matrix and ``c`` an optional constant scaling of
the log-density (``ScalingSpec``).  Scalar families go through the compiled
safeguarded Newton/bisection solver; multivariate families use a damped
Newton method with Armijo backtracking and step clipping to stay inside the
domain.  Closed forms are available for regression, quantile and Student-t
location models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import kernels
from ._linalg import check_spd, lyapunov_solve
from .densities import (
    AsymmetricLaplaceQuantile,
    DensityModel,
    ParamVector,
    ScalingSpec,
    _as_theta,
    _prepare,
)
from .errors import (
    ConfigError,
    CrossedPredictions,
    MaxIterations,
    NoInteriorSolution,
    NonConcaveUnresolved,
)

__all__ = [
    "PenaltySpec",
    "SolverOptions",
    "UpdateResult",
    "EsdResult",
    "isd_update",
    "isd_update_many",
    "esd_update",
    "isd_update_regression",
    "isd_update_quantile",
    "isd_update_t_location",
    "compute_average_hessian",
    "average_hessian_many",
]


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty matrix of the proximal objective.

    Use the constructors :meth:`static`, :meth:`from_learning_rate`,
    :meth:`lyapunov` and :meth:`info_scaled` rather than the raw fields.
    """

    kind: str
    matrix: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    h: Optional[float] = None
    rate: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "static_matrix":
            object.__setattr__(self, "matrix", check_spd(self.matrix, "penalty"))
            if self.rate is not None:
                object.__setattr__(self, "rate", check_spd(self.rate, "learning rate"))
        elif self.kind == "lyapunov":
            delta = check_spd(self.delta, "delta")
            phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
            object.__setattr__(self, "delta", delta)
            object.__setattr__(self, "phi", phi)
            object.__setattr__(self, "matrix", lyapunov_solve(phi, delta))
        elif self.kind == "info_scaled":
            if not (self.h is not None and self.h > 0 and math.isfinite(self.h)):
                raise ConfigError("info_scaled penalty needs h > 0")
        else:
            raise ConfigError(f"unknown penalty kind {self.kind!r}")

    @classmethod
    def static(cls, P) -> "PenaltySpec":
        return cls("static_matrix", matrix=np.atleast_2d(np.asarray(P, dtype=float)))

    @classmethod
    def from_learning_rate(cls, H) -> "PenaltySpec":
        """Static penalty ``P = inv(H)`` from a learning-rate matrix."""
        H = check_spd(H, "learning rate")
        # keep H so that round trips through the learning rate are exact
        return cls("static_matrix", matrix=np.linalg.inv(H), rate=H)

    @classmethod
    def lyapunov(cls, delta, phi) -> "PenaltySpec":
        return cls("lyapunov", delta=delta, phi=phi)

    @classmethod
    def info_scaled(cls, h: float) -> "PenaltySpec":
        """Scalar penalty ``exp(theta_pred / 2) / h`` (learning rate ``h exp(-theta_pred/2)``)."""
        return cls("info_scaled", h=float(h))

    @property
    def cached_P(self) -> Optional[np.ndarray]:
        return self.matrix

    @property
    def is_static(self) -> bool:
        return self.kind != "info_scaled"

    def at(self, theta_pred) -> np.ndarray:
        """Penalty matrix used at a given prediction."""
        if self.kind == "info_scaled":
            t = np.atleast_1d(np.asarray(theta_pred, dtype=float))
            return np.array([[math.exp(0.5 * float(t[0])) / self.h]])
        return self.matrix

    def learning_rate(self, theta_pred=None) -> np.ndarray:
        if self.rate is not None:
            return self.rate
        return np.linalg.inv(self.at(theta_pred))


@dataclass(frozen=True)
class SolverOptions:
    """Options of the implicit-update solver."""

    foc_tol: float = 1e-10
    max_newton_iters: int = 100
    max_bisect_iters: int = 200
    multistart: bool = False
    quadrature_nodes: int = 32
    raise_on_failure: bool = True

    def __post_init__(self):
        if not self.foc_tol > 0:
            raise ConfigError("foc_tol must be positive")
        if self.max_newton_iters < 1 or self.max_bisect_iters < 0:
            raise ConfigError("iteration caps must be positive")
        if self.quadrature_nodes < 1:
            raise ConfigError("quadrature_nodes must be positive")


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class UpdateResult:
    """Outcome of one implicit update."""

    theta_upd: np.ndarray
    objective_gain: float
    loglik_gain: float
    iterations: int
    solver: str
    stationary_points: list = field(default_factory=list)
    foc_residual: float = 0.0
    status: str = "ok"


@dataclass
class EsdResult:
    """Outcome of one explicit update; ``out_of_domain`` flags a domain violation."""

    theta_upd: np.ndarray
    out_of_domain: bool


def _scale(scaling: Optional[ScalingSpec]) -> float:
    return 1.0 if scaling is None else scaling.factor


def _objective(model, y, theta, theta_pred, P, exo, c) -> float:
    d = theta - theta_pred
    lp = model._logpdf(y, theta[None, :], exo)[0]
    return float(c * lp - 0.5 * d @ P @ d)


def _foc(model, y, theta, theta_pred, P, exo, c) -> np.ndarray:
    return c * model._score(y, theta[None, :], exo)[0] - P @ (theta - theta_pred)


def _quantile_candidates(model: AsymmetricLaplaceQuantile, y: float, tp: np.ndarray, P: np.ndarray, c: float):
    """Maximize the separable quantile objective by enumerating piece optima and kinks."""
    if not np.allclose(P, np.diag(np.diag(P))):
        raise ConfigError("the quantile update needs a diagonal penalty")
    out = np.empty_like(tp)
    for l, tau in enumerate(model.taus):
        p = P[l, l]
        cands = [y]
        up = tp[l] + c * tau / (model.sigma * p)
        if up < y:
            cands.append(up)
        down = tp[l] - c * (1.0 - tau) / (model.sigma * p)
        if down > y:
            cands.append(down)
        vals = [-c * float(np.sum((y - q) * (tau - (y < q)))) / model.sigma - 0.5 * p * (q - tp[l]) ** 2 for q in cands]
        out[l] = cands[int(np.argmax(vals))]
    return out


def _newton_multivariate(model, y, tp, P, exo, c, opts: SolverOptions):
    """Damped Newton with Armijo backtracking and interior step clipping."""
    dom = model.domain
    theta = tp.copy()
    f = _objective(model, y, theta, tp, P, exo, c)
    tol = opts.foc_tol * (1.0 + np.linalg.norm(P @ tp))
    for it in range(opts.max_newton_iters):
        g = _foc(model, y, theta, tp, P, exo, c)
        if np.linalg.norm(g) <= tol:
            return theta, it, "ok"
        Hf = c * model._hess(y, theta[None, :], exo)[0] - P
        try:
            step = -np.linalg.solve(Hf, g)
        except np.linalg.LinAlgError:
            step = g / np.max(np.diag(P))
        slope = float(g @ step)
        if slope <= 0:
            # not an ascent direction: fall back to the scaled gradient
            step = np.linalg.solve(P, g)
            slope = float(g @ step)
        s = min(1.0, 0.9 * dom.max_step(theta, step))
        tiny = s * slope <= 1e-12 * (1.0 + abs(f))
        for _ in range(60):
            cand = theta + s * step
            fc = _objective(model, y, cand, tp, P, exo, c) if dom.contains(cand) else -math.inf
            if tiny or fc >= f + 1e-4 * s * slope:
                break
            s *= 0.5
        else:
            return theta, it, "max_iterations"
        if np.array_equal(cand, theta):
            return theta, it, "ok"
        theta, f = cand, fc
    g = _foc(model, y, theta, tp, P, exo, c)
    if np.linalg.norm(g) <= tol:
        return theta, opts.max_newton_iters, "ok"
    return theta, opts.max_newton_iters, "max_iterations"


def isd_update(
    model: DensityModel,
    y,
    theta_pred,
    penalty: Union[PenaltySpec, np.ndarray, float],
    exo=None,
    opts: Optional[SolverOptions] = None,
    scaling: Optional[ScalingSpec] = None,
) -> UpdateResult:
    """Implicit score-driven update at a single time step.

    Parameters
    ----------
    model : DensityModel
        Observation density.
    y : array_like
        Observation.
    theta_pred : array_like or ParamVector
        Prediction, inside the model domain.
    penalty : PenaltySpec or array_like
        Penalty matrix, or a spec evaluated at ``theta_pred``.
    exo : array_like, optional
        Exogenous inputs required by regression models.
    opts : SolverOptions, optional
        Solver tolerances; ``multistart=True`` forces the global search.
    scaling : ScalingSpec, optional
        Constant factor on the log-density.

    Returns
    -------
    UpdateResult

    Raises
    ------
    NoInteriorSolution
        The iterates approached the boundary of the domain.
    MaxIterations
        The first-order condition was not met within the iteration caps.
    NonConcaveUnresolved
        The global search found no stationary point.
    """
    opts = opts or DEFAULT_OPTIONS
    yv, tp2, ev = _prepare(model, y, theta_pred, exo)
    tp = tp2[0]
    if isinstance(penalty, PenaltySpec):
        P = penalty.at(tp)
    else:
        P = check_spd(penalty, "penalty")
    if P.shape != (model.param_dim, model.param_dim):
        raise ConfigError("penalty dimension does not match the model")
    c = _scale(scaling)
    K = model.param_dim
    status = "ok"
    if isinstance(model, AsymmetricLaplaceQuantile):
        theta = _quantile_candidates(model, float(yv[0, 0]), tp, P, c)
        iters, solver = 0, "closed_form"
    elif K == 1 and model.kernel_code >= 0:
        row = model.kernel_rows(yv, ev)[0]
        x, iters, st = kernels.backend.isd_step(
            model.kernel_code, row[0], row[1], row[2], model.kernel_params(), float(tp[0]), float(P[0, 0]), c,
            opts.foc_tol, opts.max_newton_iters, opts.max_bisect_iters, opts.multistart, False,
        )
        theta = np.array([x])
        solver = "bisection"
        status = kernels.STATUS_NAMES[int(st)]
    else:
        theta, iters, status = _newton_multivariate(model, yv, tp, P, ev, c, opts)
        solver = "projected_newton" if model.domain.kind != "unconstrained" else "newton_linesearch"
    if status == "no_root":
        raise NonConcaveUnresolved("global search found no stationary point")
    if model.domain.kind != "unconstrained":
        if not model.domain.contains(theta) or np.min(np.abs(theta)) < 1e-12 * (1.0 + np.max(np.abs(tp))):
            raise NoInteriorSolution(f"update {theta} reached the boundary of the domain")
    resid = 0.0
    if not isinstance(model, AsymmetricLaplaceQuantile):
        resid = float(np.linalg.norm(_foc(model, yv, theta, tp, P, ev, c)))
    if status != "ok" and opts.raise_on_failure:
        raise MaxIterations(f"solver stopped with status {status}", best=theta, residual=resid)
    f1 = _objective(model, yv, theta, tp, P, ev, c)
    f0 = _objective(model, yv, tp, tp, P, ev, c)
    l1 = float(model._logpdf(yv, theta[None, :], ev)[0])
    l0 = float(model._logpdf(yv, tp[None, :], ev)[0])
    return UpdateResult(
        theta_upd=theta,
        objective_gain=f1 - f0,
        loglik_gain=l1 - l0,
        iterations=int(iters),
        solver=solver,
        stationary_points=[(theta.copy(), f1)],
        foc_residual=resid,
        status=status,
    )


def isd_update_many(
    model: DensityModel,
    y,
    theta_pred,
    P,
    opts: Optional[SolverOptions] = None,
    scaling: Optional[ScalingSpec] = None,
    exo=None,
    closed_form: bool = False,
):
    """Vectorized scalar update over aligned batches.

    ``y`` has shape ``(n, obs_dim)``; ``theta_pred`` and ``P`` broadcast to
    ``(n,)``.  Returns ``(theta_upd, iterations, status_codes)``; no exception
    is raised for individual failures.
    """
    if model.param_dim != 1 or model.kernel_code < 0:
        raise ConfigError(f"{model.key} has no scalar compiled kernel")
    opts = opts or DEFAULT_OPTIONS
    y = np.asarray(y, dtype=float).reshape(-1, model.obs_dim)
    rows = model.kernel_rows(y, exo)
    return kernels.backend.isd_batch(
        model.kernel_code, rows, model.kernel_params(), theta_pred, P, _scale(scaling), opts.foc_tol,
        opts.max_newton_iters, opts.max_bisect_iters, opts.multistart, closed_form,
    )


def esd_update(
    model: DensityModel,
    y,
    theta_pred,
    learning_rate,
    exo=None,
    scaling: Optional[ScalingSpec] = None,
) -> EsdResult:
    """Explicit score-driven update ``theta_pred + H * score``.

    ``learning_rate`` is a K x K matrix, a scalar, or a :class:`PenaltySpec`
    whose inverse penalty is used as the learning rate.  A result outside the
    domain is returned unchanged with ``out_of_domain=True``.
    """
    yv, tp2, ev = _prepare(model, y, theta_pred, exo)
    tp = tp2[0]
    if isinstance(learning_rate, PenaltySpec):
        H = learning_rate.learning_rate(tp)
    else:
        H = np.atleast_2d(np.asarray(learning_rate, dtype=float))
    g = _scale(scaling) * model._score(yv, tp2, ev)[0]
    if isinstance(model, AsymmetricLaplaceQuantile):
        # subgradient zero at a kink: no adjustment when y equals the quantile
        g = np.where(tp == yv[0, 0], 0.0, g)
    theta = tp + H @ g
    return EsdResult(theta_upd=theta, out_of_domain=not model.domain.contains(theta))


def isd_update_regression(y: float, x, beta_pred, H, sigma2: float) -> np.ndarray:
    """Closed-form implicit update of a Gaussian linear regression.

    ``beta_pred + s2/(s2 + x'Hx) * H x (y - x'beta_pred) / s2``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta = np.atleast_1d(np.asarray(beta_pred, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    xHx = float(x @ H @ x)
    resid = float(y) - float(x @ beta)
    return beta + (H @ x) * (resid / (sigma2 + xHx))


def isd_update_quantile(y: float, q_pred, taus, H: float, sigma: float) -> np.ndarray:
    """Closed-form implicit update of a vector of quantiles.

    Each level moves toward the observation by ``H tau / sigma`` (above) or
    ``H (1 - tau) / sigma`` (below) but never past it, so ordered inputs stay
    ordered.

    Raises
    ------
    CrossedPredictions
        If ``q_pred`` is not strictly increasing.
    """
    q = np.atleast_1d(np.asarray(q_pred, dtype=float))
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if q.shape != taus.shape:
        raise ConfigError("q_pred and taus must have equal length")
    if np.any(np.diff(q) <= 0):
        raise CrossedPredictions("quantile predictions must be strictly increasing")
    if not (H > 0 and sigma > 0):
        raise ConfigError("H and sigma must be positive")
    up = np.minimum(y, q + H * taus / sigma)
    down = np.maximum(y, q - H * (1.0 - taus) / sigma)
    return np.where(y > q, up, down)


def _tloc_stationary(k: float, H: float):
    roots = np.roots([k, -2.0 * k, k + 1.0 + H, -H])
    out = []
    for r in roots:
        if abs(r.imag) < 1e-9 and 0.0 < r.real < 1.0:
            w = r.real
            out.append((w, -math.log1p(k * (1.0 - w) ** 2) - k * w * w / H))
    return out


def isd_update_t_location(y: float, theta_pred: float, H: float, sigma: float, nu: float) -> UpdateResult:
    """Implicit update of a Student-t location with the scaled score convention.

    Solves ``k (1-w)^2 w + w - H (1-w) = 0`` with ``k = e^2/(nu sigma^2)`` and
    ``e = y - theta_pred``, keeps the root in ``(0, 1)`` with the largest
    objective, and returns ``theta_pred + w e``.
    """
    if not (H > 0 and sigma > 0 and nu > 0):
        raise ConfigError("H, sigma and nu must be positive")
    tp = float(theta_pred)
    e = float(y) - tp
    c = nu * sigma**2 / (nu + 1.0)

    def f(theta):
        return -0.5 * c * (nu + 1.0) * math.log1p((y - theta) ** 2 / (nu * sigma**2)) - 0.5 / H * (theta - tp) ** 2

    if e == 0.0:
        return UpdateResult(np.array([tp]), 0.0, 0.0, 0, "closed_form", [(np.array([tp]), f(tp))])
    x, w = kernels.backend.tloc_update(float(y), tp, float(H), float(sigma), float(nu))
    k = e * e / (nu * sigma**2)
    stationary = [(np.array([tp + wi * e]), f(tp + wi * e)) for wi, _ in _tloc_stationary(k, H)]
    base = -0.5 * (nu + 1.0) * math.log1p(e * e / (nu * sigma**2))
    gain = -0.5 * (nu + 1.0) * math.log1p((y - x) ** 2 / (nu * sigma**2)) - base
    return UpdateResult(
        theta_upd=np.array([x]),
        objective_gain=f(x) - f(tp),
        loglik_gain=gain,
        iterations=0,
        solver="closed_form",
        stationary_points=stationary,
    )


def _gauss_legendre01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def compute_average_hessian(model: DensityModel, y, theta_a, theta_b, n_nodes: int = 32, exo=None) -> np.ndarray:
    """Average of the negative Hessian along the segment ``[theta_a, theta_b]``.

    Gauss-Legendre quadrature with ``n_nodes`` nodes on the unit interval.
    """
    yv, ta, ev = _prepare(model, y, theta_a, exo)
    tb = model.domain.check(_as_theta(theta_b))[None, :]
    s, w = _gauss_legendre01(n_nodes)
    path = ta + s[:, None] * (tb - ta)
    H = model._hess(yv, path, ev)
    return -np.tensordot(w, H, axes=(0, 0))


def average_hessian_many(model: DensityModel, y, theta_a, theta_b, n_nodes: int = 32, exo=None) -> np.ndarray:
    """Batched :func:`compute_average_hessian` for scalar families.

    ``y`` has shape ``(n, obs_dim)``; ``theta_a`` and ``theta_b`` shape ``(n,)``.
    Returns an array of shape ``(n,)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1, model.obs_dim)
    ta = np.asarray(theta_a, dtype=float).reshape(-1)
    tb = np.asarray(theta_b, dtype=float).reshape(-1)
    s, w = _gauss_legendre01(n_nodes)
    total = np.zeros(np.broadcast_shapes(ta.shape, tb.shape, y.shape[:1]))
    for sj, wj in zip(s, w):
        t = ta + sj * (tb - ta)
        total += wj * model._hs(y, t)
    return -total

"""Maximum-likelihood estimation of the static parameters.

The objective is the negative average of the per-step log-densities at the
predictions.  All parameters are optimized in an unconstrained space; the
:class:`Transform` maps that space onto stable filters (``|Phi| < 1``,
positive learning rates and shapes), so every iterate is a valid filter.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from ._linalg import log_cholesky_forward, log_cholesky_inverse, lyapunov_solve, vech_size
from .densities import (
    DensityModel,
    GaussianCorrelation,
    StudentTCorrelation,
    StudentTLogVariance,
)
from .errors import AllStartsFailed, ConfigError
from .filter import FilterOptions, StaticParams, run_filter
from .update import PenaltySpec

__all__ = [
    "StaticParams",
    "Transform",
    "FitConfig",
    "FitReport",
    "StartResult",
    "default_transform",
    "neg_avg_loglik",
    "fit",
    "lyapunov_solve",
    "DIVERGENCE_PENALTY",
]

DIVERGENCE_PENALTY = 1e10
PHI_BOUND = 1.0 - 1e-9
CORR_H_CAP = 4.0

_PENALTY_KINDS = ("static", "lyapunov", "info_scaled")

# shapes estimated unless pinned; the rest stay at the model's values
DEFAULT_SHAPES = {
    "negbin": ("kappa",),
    "gamma": ("kappa",),
    "weibull": ("kappa",),
    "t-vol": ("nu",),
    "t-corr": ("nu",),
    "t-location": ("nu", "sigma"),
}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass
class _Block:
    name: str
    size: int
    forward: Callable
    inverse: Callable


def _shape_block(model: DensityModel, name: str) -> _Block:
    lower = 2.0 if name == "nu" and isinstance(model, (StudentTLogVariance, StudentTCorrelation)) else 0.0
    if name == "intercept":
        return _Block(name, 1, lambda z: float(z[0]), lambda v: np.array([float(v)]))
    if name == "n_components":
        raise ConfigError("the Dirichlet dimension is not estimable; pin it")
    return _Block(
        name, 1,
        lambda z, lo=lower: lo + math.exp(float(z[0])),
        lambda v, lo=lower: np.array([math.log(float(v) - lo)]),
    )


def _as_matrix(v, k: int) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(k)
    if a.ndim == 1:
        return np.diag(a)
    return a


@dataclass
class Transform:
    """Bijection between an unconstrained vector and :class:`StaticParams`.

    Attributes
    ----------
    names : list of str
        Coordinate labels of the unconstrained vector.
    """

    model: DensityModel
    penalty_kind: str
    blocks: list
    pins: dict
    target_levels: Optional[np.ndarray] = None
    scaling: str = "raw"
    init: Optional[np.ndarray] = None
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.names = []
        for b in self.blocks:
            self.names += [b.name] if b.size == 1 else [f"{b.name}[{i}]" for i in range(b.size)]

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    def _natural(self, z) -> dict:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ConfigError(f"expected {self.size} unconstrained values, got shape {z.shape}")
        out = dict(self.pins)
        i = 0
        for b in self.blocks:
            out[b.name] = b.forward(z[i:i + b.size])
            i += b.size
        return out

    def forward(self, z) -> StaticParams:
        """Unconstrained vector to static parameters."""
        v = self._natural(z)
        K = self.model.param_dim
        phi = _as_matrix(v["phi"], K)
        if self.target_levels is not None:
            omega = (np.eye(K) - phi) @ self.target_levels
        else:
            omega = np.broadcast_to(np.asarray(v["omega"], dtype=float), (K,)).copy()
        kind = self.penalty_kind
        if kind == "info_scaled":
            pen = PenaltySpec.info_scaled(float(np.asarray(v["penalty"]).reshape(-1)[0]))
        elif kind == "lyapunov":
            pen = PenaltySpec.lyapunov(_as_matrix(v["penalty"], K), phi)
        else:
            pen = PenaltySpec.from_learning_rate(_as_matrix(v["penalty"], K))
        psi = {n: float(v[n]) for n in self.model.shape_names if n in v}
        return StaticParams(pen, omega, phi, psi=psi, init=self.init, gamma=float(v.get("gamma", 0.0)),
                            scaling=self.scaling)

    def natural_values(self, statics: StaticParams) -> dict:
        """Named natural-space values of ``statics`` (learning rate ``H`` for static penalties)."""
        K = self.model.param_dim
        pen = statics.penalty
        if pen.kind == "info_scaled":
            p = pen.h
        elif pen.kind == "lyapunov":
            p = pen.delta
        else:
            p = pen.learning_rate()
        v = {"omega": statics.omega, "phi": np.diag(statics.phi) if K > 1 else statics.phi[0, 0],
             "penalty": p, "gamma": statics.gamma}
        v.update(statics.psi)
        return v

    def inverse(self, statics: StaticParams) -> np.ndarray:
        """Static parameters to the unconstrained vector."""
        v = self.natural_values(statics)
        return np.concatenate([np.atleast_1d(b.inverse(v[b.name])) for b in self.blocks]) if self.blocks \
            else np.zeros(0)


def default_transform(
    model: DensityModel,
    penalty_kind: str = "static",
    pins: Optional[dict] = None,
    estimate_shapes: Optional[tuple] = None,
    target_levels=None,
    estimate_gamma: bool = False,
    scaling: str = "raw",
    init=None,
) -> Transform:
    """Standard reparameterization of a filter's static parameters.

    Parameters
    ----------
    model : DensityModel
        Model whose current shape values serve as pins for shapes that are
        not estimated.
    penalty_kind : {"static", "lyapunov", "info_scaled"}
        Static learning rate (log, or log-Cholesky for K > 1; capped at 4 by
        a scaled logistic for correlation families), ``Delta`` of the
        Lyapunov form (log-Cholesky), or the coefficient ``h`` (log).
    pins : dict, optional
        Fixed natural values by block name: ``omega``, ``phi``,
        ``penalty``, ``gamma`` or a shape name.
    estimate_shapes : tuple of str, optional
        Shape names to estimate; default all estimable shapes of the family.
    target_levels : array_like, optional
        Long-run levels ``c``; then ``omega = (I - Phi) c`` is not estimated.
    estimate_gamma : bool
        Estimate the loading on the exogenous prediction regressor.
    scaling : {"raw", "literature"}
        Score convention stored in the produced parameters.
    init : array_like, optional
        Fixed ``theta_{0|0}``; default the unconditional level.
    """
    if penalty_kind not in _PENALTY_KINDS:
        raise ConfigError(f"penalty_kind must be one of {_PENALTY_KINDS}")
    K = model.param_dim
    pins = dict(pins or {})
    positive = model.domain.kind == "positive"
    blocks = []

    if target_levels is not None:
        target_levels = np.broadcast_to(np.asarray(target_levels, dtype=float), (K,)).copy()
        pins.setdefault("omega", 0.0)
    if "omega" not in pins:
        if positive:
            blocks.append(_Block("omega", K, lambda z: np.exp(z), lambda v: np.log(np.broadcast_to(v, (K,)))))
        else:
            blocks.append(_Block("omega", K, lambda z: np.array(z, dtype=float),
                                 lambda v: np.broadcast_to(np.asarray(v, dtype=float), (K,)).copy()))
    if "phi" not in pins:
        if positive:
            blocks.append(_Block("phi", K, lambda z: PHI_BOUND * 0.5 * (1.0 + np.tanh(z)),
                                 lambda v: np.arctanh(2.0 * np.broadcast_to(v, (K,)) / PHI_BOUND - 1.0)))
        else:
            blocks.append(_Block("phi", K, lambda z: PHI_BOUND * np.tanh(z),
                                 lambda v: np.arctanh(np.broadcast_to(v, (K,)) / PHI_BOUND)))
    if "penalty" not in pins:
        if penalty_kind == "info_scaled" or K == 1:
            if penalty_kind == "static" and isinstance(model, GaussianCorrelation):
                fwd = lambda z: CORR_H_CAP * float(_sigmoid(z[0]))  # noqa: E731
                inv = lambda v: np.array([_logit(float(np.asarray(v).reshape(-1)[0]) / CORR_H_CAP)])  # noqa: E731
            else:
                fwd = lambda z: math.exp(float(z[0]))  # noqa: E731
                inv = lambda v: np.array([math.log(float(np.asarray(v).reshape(-1)[0]))])  # noqa: E731
            blocks.append(_Block("penalty", 1, fwd, inv))
        else:
            blocks.append(_Block("penalty", vech_size(K), lambda z: log_cholesky_forward(z, K),
                                 lambda v: log_cholesky_inverse(_as_matrix(v, K))))
    if estimate_shapes is None:
        estimate_shapes = DEFAULT_SHAPES.get(model.key, ())
    for n in model.shape_names:
        if n in estimate_shapes and n not in pins:
            blocks.append(_shape_block(model, n))
        elif n not in pins:
            pins[n] = getattr(model, n)
    if estimate_gamma and "gamma" not in pins:
        blocks.append(_Block("gamma", 1, lambda z: float(z[0]), lambda v: np.array([float(v)])))
    pins.setdefault("gamma", 0.0)
    init_arr = None if init is None else np.atleast_1d(np.asarray(init, dtype=float))
    return Transform(model, penalty_kind, blocks, pins, target_levels, scaling, init_arr)


def neg_avg_loglik(
    xi_unconstrained,
    model: DensityModel,
    data,
    exo=None,
    mode: str = "isd",
    transform: Optional[Transform] = None,
    options: Optional[FilterOptions] = None,
) -> float:
    """Negative average log-likelihood of the prediction-error decomposition.

    Diverged or non-finite evaluations return ``DIVERGENCE_PENALTY``.
    """
    transform = transform or default_transform(model)
    try:
        statics = transform.forward(xi_unconstrained)
        path = run_filter(model, data, exo, statics, mode=mode, options=options)
    except (ConfigError, ValueError, ArithmeticError, np.linalg.LinAlgError):
        return DIVERGENCE_PENALTY
    if path.diverged or path.T == 0:
        return DIVERGENCE_PENALTY if path.diverged else 0.0
    v = -path.total_loglik / path.T
    return v if math.isfinite(v) and v < DIVERGENCE_PENALTY else DIVERGENCE_PENALTY


@dataclass(frozen=True)
class FitConfig:
    """Settings of :func:`fit`.

    ``start`` holds natural starting values by block name (``omega``,
    ``phi``, ``penalty``, shapes); missing entries use family defaults.
    """

    mode: str = "isd"
    penalty_kind: str = "static"
    starts: int = 5
    jitter: float = 0.5
    max_iters: int = 500
    grad_step: float = 1e-6
    tol: float = 1e-9
    seed: int = 0
    pins: dict = field(default_factory=dict)
    start: dict = field(default_factory=dict)
    estimate_shapes: Optional[tuple] = None
    target_levels: Optional[tuple] = None
    estimate_gamma: bool = False
    scaling: str = "raw"
    init: Optional[tuple] = None
    workers: int = 1
    min_obs: int = 50

    def __post_init__(self):
        if self.mode not in ("isd", "esd"):
            raise ConfigError("mode must be 'isd' or 'esd'")
        if self.starts < 1 or self.max_iters < 1 or self.workers < 1:
            raise ConfigError("starts, max_iters and workers must be positive")
        if not (self.grad_step > 0 and self.tol > 0 and self.jitter >= 0):
            raise ConfigError("grad_step and tol must be positive, jitter nonnegative")

    def transform(self, model: DensityModel) -> Transform:
        return default_transform(
            model, self.penalty_kind, self.pins, self.estimate_shapes,
            None if self.target_levels is None else np.asarray(self.target_levels, dtype=float),
            self.estimate_gamma, self.scaling, self.init,
        )


@dataclass
class StartResult:
    """Outcome of one optimizer start."""

    z0: np.ndarray
    z: np.ndarray
    start_objective: float
    objective: float
    iterations: int
    converged: bool
    message: str

    @property
    def failed(self) -> bool:
        return not (self.objective < DIVERGENCE_PENALTY) or "ITERATIONS" in self.message.upper()


@dataclass
class FitReport:
    """Summary of a fit: the best start plus every start's outcome."""

    statics: StaticParams
    objective: float
    loglik: float
    converged: bool
    best_start: int
    starts: list
    names: list
    z: np.ndarray

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "loglik": self.loglik,
            "converged": self.converged,
            "best_start": self.best_start,
            "names": self.names,
            "z": self.z.tolist(),
            "starts": [
                {"start_objective": s.start_objective, "objective": s.objective, "iterations": s.iterations,
                 "converged": s.converged, "message": s.message, "z0": s.z0.tolist(), "z": s.z.tolist()}
                for s in self.starts
            ],
        }


def _default_start(model: DensityModel, config: FitConfig, data) -> dict:
    K = model.param_dim
    positive = model.domain.kind == "positive"
    phi = 0.9
    if positive:
        # moment-matched Gamma shape and rate as the long-run level
        y = np.asarray(data, dtype=float).reshape(-1)
        m, v = float(np.mean(y)), float(np.var(y))
        omega = (1.0 - phi) * np.array([m * m / v, m / v])
    else:
        omega = np.zeros(K)
    if config.penalty_kind == "info_scaled":
        pen = 0.1
    elif config.penalty_kind == "lyapunov":
        pen = np.eye(K) if K > 1 else 1.0
    else:
        pen = 0.1 * np.eye(K) if K > 1 else 0.1
    start = {"omega": omega, "phi": phi * np.ones(K) if K > 1 else phi, "penalty": pen, "gamma": 0.0}
    for n in model.shape_names:
        start[n] = getattr(model, n)
    return start


def _start_statics(transform: Transform, start: dict) -> np.ndarray:
    v = {}
    for b in transform.blocks:
        v[b.name] = start[b.name]
    return np.concatenate([np.atleast_1d(b.inverse(v[b.name])) for b in transform.blocks])


def _central_gradient(f, z, f0, step):
    g = np.empty_like(z)
    for i in range(z.shape[0]):
        h = step * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        fp, fm = f(zp), f(zm)
        if fp >= DIVERGENCE_PENALTY or fm >= DIVERGENCE_PENALTY:
            # one-sided difference toward the finite side
            if fp < DIVERGENCE_PENALTY:
                g[i] = (fp - f0) / h
            elif fm < DIVERGENCE_PENALTY:
                g[i] = (f0 - fm) / h
            else:
                g[i] = 0.0
        else:
            g[i] = (fp - fm) / (2.0 * h)
    return g


def _run_start(args) -> StartResult:
    model, data, exo, config, transform, z0, options = args

    def f(z):
        return neg_avg_loglik(z, model, data, exo, config.mode, transform, options)

    cache = {}

    def fun(z):
        key = z.tobytes()
        if key not in cache:
            f0 = f(z)
            g = _central_gradient(f, z, f0, config.grad_step) if f0 < DIVERGENCE_PENALTY else np.zeros_like(z)
            cache.clear()
            cache[key] = (f0, g)
        return cache[key]

    f_start = f(z0)
    if not f_start < DIVERGENCE_PENALTY:
        return StartResult(z0, z0, f_start, f_start, 0, False, "start diverged")
    res = optimize.minimize(
        fun, z0, jac=True, method="L-BFGS-B",
        options={"maxiter": config.max_iters, "ftol": config.tol, "gtol": 1e-8, "maxls": 40},
    )
    z = np.asarray(res.x, dtype=float)
    obj = float(f(z))
    msg = str(res.message)
    return StartResult(z0, z, f_start, obj, int(res.nit), bool(res.success), msg)


def fit(
    model: DensityModel,
    data,
    exo=None,
    config: Optional[FitConfig] = None,
    options: Optional[FilterOptions] = None,
) -> tuple:
    """Maximum-likelihood fit of the static parameters.

    Parameters
    ----------
    model : DensityModel
        Postulated density; its shape values are starting values (or pins).
    data : array_like
        Observation series with at least ``config.min_obs`` rows.
    exo : array_like, optional
        Aligned exogenous series.
    config : FitConfig, optional
        Optimizer and parameterization settings.

    Returns
    -------
    (StaticParams, FitReport)

    Raises
    ------
    AllStartsFailed
        Every start diverged or stopped at the iteration cap.
    """
    config = config or FitConfig()
    n = len(data)
    if n < config.min_obs:
        raise ConfigError(f"need at least {config.min_obs} observations, got {n}")
    transform = config.transform(model)
    start = _default_start(model, config, data)
    start.update(config.start)
    z0 = _start_statics(transform, start) if transform.blocks else np.zeros(0)
    rng = np.random.default_rng(config.seed)
    inits = [z0] + [z0 + rng.uniform(-config.jitter, config.jitter, z0.shape) for _ in range(config.starts - 1)]
    args = [(model, data, exo, config, transform, zi, options) for zi in inits]
    if z0.size == 0:
        statics = transform.forward(z0)
        obj = neg_avg_loglik(z0, model, data, exo, config.mode, transform, options)
        res = [StartResult(z0, z0, obj, obj, 0, True, "nothing to estimate")]
    elif config.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(args))) as ex:
            res = list(ex.map(_run_start, args))
    else:
        res = [_run_start(a) for a in args]
    ok = [i for i, r in enumerate(res) if not r.failed]
    if not ok:
        raise AllStartsFailed(f"all {len(res)} starts diverged or hit the iteration cap")
    best = min(ok, key=lambda i: (res[i].objective, i))
    r = res[best]
    statics = transform.forward(r.z)
    report = FitReport(statics, r.objective, -r.objective * n, r.converged, best, res, transform.names, r.z)
    return statics, report

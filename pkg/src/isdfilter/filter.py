"""Prediction/update recursion over an observation series.

Each step evaluates the log-density at the prediction, updates with the
implicit (``"isd"``) or explicit (``"esd"``) rule, and predicts with the
linear map ``omega + Phi theta_upd (+ gamma x_t)``.  Scalar families and the
two-parameter Gamma run in the compiled kernels; everything else uses a
Python loop around :mod:`isdfilter.update`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from ._linalg import spectral_radius
from .densities import (
    AsymmetricLaplaceQuantile,
    DensityModel,
    GammaTwoParam,
    ParamVector,
    ScalingSpec,
    StudentTLocation,
    _as_theta,
    as_series,
)
from .errors import ConfigError, DomainEscape, ISDError, ShapeError
from .update import PenaltySpec, SolverOptions, esd_update, isd_update

__all__ = [
    "PredictionSpec",
    "StaticParams",
    "FilterOptions",
    "FilterPath",
    "predict",
    "run_filter",
    "two_init_probe",
    "STATUS_OUT_OF_DOMAIN",
    "STATUS_ERROR",
]

STATUS_OUT_OF_DOMAIN = 4
STATUS_ERROR = 5
_STATUS_CODES = {"ok": 0, "max_iterations": 1, "nonfinite": 2, "no_root": 3}
STATUS_LABELS = {0: "ok", 1: "max_iterations", 2: "nonfinite", 3: "no_root", 4: "out_of_domain", 5: "error"}

_MODES = ("unconstrained", "positive_diagonal", "convex_combination", "identity")


@dataclass(frozen=True)
class PredictionSpec:
    """Linear prediction map ``omega + Phi theta``.

    ``constraint_mode`` documents (and checks) how the map keeps the
    parameter domain invariant.
    """

    omega: np.ndarray
    phi: np.ndarray
    constraint_mode: str = "unconstrained"

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        phi = np.asarray(self.phi, dtype=float)
        k = omega.shape[0]
        if phi.ndim == 0:
            phi = phi * np.eye(k)
        elif phi.ndim == 1:
            phi = np.diag(phi)
        if phi.shape != (k, k):
            raise ConfigError(f"phi must be {k}x{k}, got {phi.shape}")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(phi))):
            raise ConfigError("omega and phi must be finite")
        mode = self.constraint_mode
        if mode not in _MODES:
            raise ConfigError(f"unknown constraint_mode {mode!r}")
        offdiag = phi - np.diag(np.diag(phi))
        if mode == "positive_diagonal":
            d = np.diag(phi)
            if np.any(offdiag != 0) or np.any(d <= 0) or np.any(d >= 1) or np.any(omega <= 0):
                raise ConfigError("positive_diagonal needs diagonal phi in (0,1) and omega > 0")
        elif mode == "convex_combination":
            d = np.diag(phi)
            if np.any(offdiag != 0) or np.any(d != d[0]) or not 0.0 <= d[0] < 1.0:
                raise ConfigError("convex_combination needs phi = c I with c in [0, 1)")
        elif mode == "identity":
            if np.any(omega != 0) or np.any(phi != np.eye(k)):
                raise ConfigError("identity mode needs omega = 0 and phi = I")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    def unconditional_level(self) -> Optional[np.ndarray]:
        """``(I - Phi)^{-1} omega`` when the spectral radius is below one."""
        if spectral_radius(self.phi) >= 1.0:
            return None
        return np.linalg.solve(np.eye(self.dim) - self.phi, self.omega)


def predict(theta_upd, spec: PredictionSpec, domain=None, shift=None) -> np.ndarray:
    """One-step prediction ``omega + Phi theta_upd (+ shift)``.

    Raises
    ------
    DomainEscape
        If ``domain`` is given and the prediction leaves it.
    """
    t = _as_theta(theta_upd)
    if isinstance(theta_upd, ParamVector) and domain is None:
        domain = theta_upd.domain
    out = spec.omega + spec.phi @ t
    if shift is not None:
        out = out + shift
    if domain is not None and not domain.contains(out):
        raise DomainEscape(f"prediction {out} left the {domain.kind} domain")
    return out


@dataclass(frozen=True)
class StaticParams:
    """Static parameters of a filter.

    Attributes
    ----------
    penalty : PenaltySpec
        Penalty of the implicit update (its inverse is the explicit learning rate).
    omega, phi : ndarray
        Prediction intercept and autoregressive matrix.
    psi : dict
        Shape parameters applied to the density model before filtering.
    init : ndarray or None
        Filtered value ``theta_{0|0}``; ``None`` uses the unconditional level.
    gamma : float
        Loading on the exogenous prediction regressor (quantile models).
    scaling : str
        ``"raw"`` or ``"literature"`` score convention.
    """

    penalty: PenaltySpec
    omega: np.ndarray
    phi: np.ndarray
    psi: dict = field(default_factory=dict)
    init: Optional[np.ndarray] = None
    gamma: float = 0.0
    scaling: str = "raw"

    def __post_init__(self):
        spec = PredictionSpec(self.omega, self.phi)
        object.__setattr__(self, "omega", spec.omega)
        object.__setattr__(self, "phi", spec.phi)
        object.__setattr__(self, "psi", dict(self.psi))
        if self.init is not None:
            object.__setattr__(self, "init", np.atleast_1d(np.asarray(self.init, dtype=float)))
        if self.scaling not in ("raw", "literature"):
            raise ConfigError("scaling must be 'raw' or 'literature'")

    @property
    def prediction(self) -> PredictionSpec:
        return PredictionSpec(self.omega, self.phi)

    def apply(self, model: DensityModel) -> DensityModel:
        """Model with the shape parameters of ``psi``."""
        return model.with_shape(**self.psi) if self.psi else model

    def initial_state(self) -> np.ndarray:
        if self.init is not None:
            return self.init
        level = self.prediction.unconditional_level()
        if level is None:
            raise ConfigError("an explicit init is required when the spectral radius of phi is >= 1")
        return level

    @classmethod
    def from_dict(cls, d: dict) -> "StaticParams":
        """Inverse of :meth:`to_dict`.

        The penalty entry may give ``P``, ``H`` (learning rate), ``delta``
        (Lyapunov form, solved with ``phi``) or ``h`` (info-scaled).
        """
        try:
            pen = d["penalty"]
            omega, phi = d["omega"], d["phi"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"static parameters need omega, phi and penalty: missing {exc}") from None
        pkind = pen.get("kind")
        if "h" in pen and pkind in (None, "info_scaled"):
            penalty = PenaltySpec.info_scaled(pen["h"])
        elif "delta" in pen and pkind in (None, "lyapunov"):
            delta = np.atleast_2d(np.asarray(pen["delta"], dtype=float))
            penalty = PenaltySpec.lyapunov(delta, PredictionSpec(omega, phi).phi)
        elif "P" in pen:
            penalty = PenaltySpec.static(pen["P"])
        elif "H" in pen:
            penalty = PenaltySpec.from_learning_rate(np.atleast_2d(np.asarray(pen["H"], dtype=float)))
        else:
            raise ConfigError("penalty needs one of P, H, delta or h")
        init = d.get("init")
        return cls(penalty, omega, phi, dict(d.get("psi") or {}), None if init is None else np.asarray(init, float),
                   float(d.get("gamma", 0.0)), d.get("scaling", "raw"))

    def to_dict(self) -> dict:
        pen = self.penalty
        d = {
            "omega": self.omega.tolist(),
            "phi": self.phi.tolist(),
            "psi": {k: float(v) for k, v in self.psi.items()},
            "gamma": float(self.gamma),
            "scaling": self.scaling,
            "init": None if self.init is None else self.init.tolist(),
            "penalty": {"kind": pen.kind},
        }
        if pen.kind == "info_scaled":
            d["penalty"]["h"] = pen.h
        else:
            d["penalty"]["P"] = pen.matrix.tolist()
            d["penalty"]["H"] = pen.learning_rate(self.omega).tolist()
            if pen.kind == "lyapunov":
                d["penalty"]["delta"] = pen.delta.tolist()
        return d


@dataclass(frozen=True)
class FilterOptions:
    """Run-time options of :func:`run_filter`."""

    solver: SolverOptions = field(default_factory=SolverOptions)
    overflow_guard: float = 1e12
    fail_fast: bool = False
    backend: Optional[str] = None

    def __post_init__(self):
        if not self.overflow_guard > 0:
            raise ConfigError("overflow_guard must be positive")


@dataclass
class FilterPath:
    """Per-step output of a filter run.

    ``predictions[t]`` is ``theta_{t|t-1}`` and ``updates[t]`` is
    ``theta_{t|t}``; ``loglik[t]`` is the log-density of ``y_t`` at the
    prediction.  After a divergence the remaining entries are NaN (states)
    and ``-inf`` (log-likelihood).
    """

    predictions: np.ndarray
    updates: np.ndarray
    loglik: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    diverged_at: Optional[int] = None
    mode: str = "isd"

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def T(self) -> int:
        return self.loglik.shape[0]

    @property
    def total_loglik(self) -> float:
        return float(np.sum(self.loglik)) if self.T else 0.0

    @property
    def flags(self) -> list:
        return [STATUS_LABELS[int(s)] for s in self.status]

    def columns(self) -> list:
        k = self.predictions.shape[1]
        return (["t"] + [f"theta_pred_{i}" for i in range(k)] + [f"theta_upd_{i}" for i in range(k)]
                + ["loglik", "status", "iterations", "diverged"])

    def rows(self):
        for t in range(self.T):
            yield ([t + 1] + [float(v) for v in self.predictions[t]] + [float(v) for v in self.updates[t]]
                   + [float(self.loglik[t]), STATUS_LABELS[int(self.status[t])], int(self.iterations[t]),
                      self.diverged and t >= self.diverged_at])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not math.isfinite(v) else v for v in row] for row in a.tolist()]

        return {
            "mode": self.mode,
            "T": self.T,
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
            "total_loglik": self.total_loglik if math.isfinite(self.total_loglik) else None,
            "predictions": clean(self.predictions),
            "updates": clean(self.updates),
            "loglik": [v if math.isfinite(v) else None for v in self.loglik.tolist()],
            "status": self.flags,
            "iterations": self.iterations.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _empty_path(k: int, mode: str) -> FilterPath:
    z = np.zeros((0, k))
    return FilterPath(z, z.copy(), np.zeros(0), np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.int32), None, mode)


def _scale_factor(model: DensityModel, statics: StaticParams) -> float:
    return model.literature_scale() if statics.scaling == "literature" else 1.0


def run_filter(
    model: DensityModel,
    data,
    exo=None,
    statics: Optional[StaticParams] = None,
    init=None,
    mode: str = "isd",
    options: Optional[FilterOptions] = None,
    perturbation=None,
) -> FilterPath:
    """Run the filter over a series.

    Parameters
    ----------
    model : DensityModel
        Postulated observation density.
    data : array_like, shape (T,) or (T, obs_dim)
        Observation series.
    exo : array_like, optional
        Aligned exogenous series: regressors for regression models, or the
        prediction regressor ``x_t`` when ``statics.gamma`` is non-zero.
    statics : StaticParams
        Static parameters.
    init : array_like, optional
        Overrides ``statics.init`` as ``theta_{0|0}``.
    mode : {"isd", "esd"}
        Implicit or explicit update.
    options : FilterOptions, optional
        Solver options, overflow guard, fail-fast switch, backend choice.
    perturbation : array_like, shape (T, K), optional
        Additive errors injected into every update (robustness studies).

    Returns
    -------
    FilterPath
    """
    if statics is None:
        raise ConfigError("statics are required")
    if mode not in ("isd", "esd"):
        raise ConfigError("mode must be 'isd' or 'esd'")
    options = options or FilterOptions()
    model = statics.apply(model)
    K = model.param_dim
    if statics.omega.shape[0] != K:
        raise ShapeError(f"omega has length {statics.omega.shape[0]}, model needs {K}")
    y = as_series(model, data)
    T = y.shape[0]
    x = None
    if exo is not None:
        x = np.asarray(exo, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != T:
            raise ShapeError("exogenous series must align with the observations")
        if not np.all(np.isfinite(x)):
            raise ConfigError("exogenous series contains missing or non-finite values")
    if model.exo_dim and x is None:
        raise ShapeError(f"{model.key} needs an exogenous series")
    theta0 = np.atleast_1d(np.asarray(init, dtype=float)) if init is not None else statics.initial_state()
    if theta0.shape != (K,):
        raise ShapeError(f"init must have length {K}")
    if not model.domain.contains(theta0):
        raise ConfigError(f"init {theta0} lies outside the parameter domain")
    if T == 0:
        return _empty_path(K, mode)
    noise = None
    if perturbation is not None:
        noise = np.asarray(perturbation, dtype=float).reshape(T, K)
    model.check_support(y)
    be = kernels.get_backend(options.backend)
    pen = statics.penalty
    scalar_ok = (K == 1 and model.kernel_code >= 0 and statics.gamma == 0.0)
    if scalar_ok:
        return _run_scalar(be, model, y, x, statics, theta0, mode, options, noise)
    if isinstance(model, GammaTwoParam) and pen.kind != "info_scaled" and statics.gamma == 0.0:
        if (mode == "isd" and model.link == "identity") or (mode == "esd" and model.link == "exp"):
            return _run_gamma2(be, model, y, statics, theta0, mode, options, noise)
    return _run_generic(model, y, x, statics, theta0, mode, options, noise)


def _run_scalar(be, model, y, x, statics, theta0, mode, options, noise) -> FilterPath:
    pen = statics.penalty
    rows = model.kernel_rows(y, None if x is None else x[:, 0])
    opts = options.solver
    if mode == "esd":
        kmode = kernels.MODE_ESD
    elif isinstance(model, StudentTLocation):
        kmode = kernels.MODE_ISD_CLOSED
    else:
        kmode = kernels.MODE_ISD
    info_h = pen.h if pen.kind == "info_scaled" else 0.0
    p_static = float(pen.matrix[0, 0]) if pen.kind != "info_scaled" else 1.0
    pred, upd, ll, status, iters, div = be.filter_scalar(
        model.kernel_code, rows, model.kernel_params(), float(statics.omega[0]), float(statics.phi[0, 0]),
        p_static, info_h, kmode, _scale_factor(model, statics), float(theta0[0]), opts.foc_tol,
        opts.max_newton_iters, opts.max_bisect_iters, opts.multistart, options.overflow_guard,
        None if noise is None else noise[:, 0],
    )
    pred = np.asarray(pred)[:, None]
    upd = np.asarray(upd)[:, None]
    status = np.asarray(status, dtype=np.int32)
    div = int(div)
    if options.fail_fast:
        bad = np.flatnonzero(status != kernels.OK)
        if bad.size:
            t = int(bad[0])
            raise ISDError(f"update failed at step {t + 1}: {STATUS_LABELS[int(status[t])]}")
    return FilterPath(pred, upd, np.asarray(ll), status, np.asarray(iters, dtype=np.int32),
                      None if div < 0 else div, mode)


def _run_gamma2(be, model, y, statics, theta0, mode, options, noise) -> FilterPath:
    kmode = kernels.MODE_ISD if mode == "isd" else kernels.MODE_ESD
    pred, upd, ll, status, iters, div = be.filter_gamma2(
        y[:, 0], statics.omega, statics.phi, statics.penalty.matrix, theta0, kmode, options.solver.foc_tol,
        options.solver.max_newton_iters, options.overflow_guard, noise,
    )
    status = np.asarray(status, dtype=np.int32)
    if options.fail_fast and np.any(status != kernels.OK):
        t = int(np.flatnonzero(status != kernels.OK)[0])
        raise ISDError(f"update failed at step {t + 1}: {STATUS_LABELS[int(status[t])]}")
    div = int(div)
    return FilterPath(np.asarray(pred), np.asarray(upd), np.asarray(ll), status,
                      np.asarray(iters, dtype=np.int32), None if div < 0 else div, mode)


def _run_generic(model, y, x, statics, theta0, mode, options, noise) -> FilterPath:
    T, K = y.shape[0], model.param_dim
    pred = np.full((T, K), np.nan)
    upd = np.full((T, K), np.nan)
    ll = np.full(T, -np.inf)
    status = np.zeros(T, dtype=np.int32)
    iters = np.zeros(T, dtype=np.int32)
    pen = statics.penalty
    scaling = ScalingSpec(_scale_factor(model, statics)) if statics.scaling == "literature" else None
    solver = SolverOptions(**{**options.solver.__dict__, "raise_on_failure": False})
    reg_exo = model.exo_dim > 0
    shift_x = statics.gamma != 0.0
    if shift_x and x is None:
        raise ShapeError("a non-zero gamma needs an exogenous prediction regressor")
    guard = options.overflow_guard
    omega, phi = statics.omega, statics.phi
    tp = omega + phi @ theta0
    div = None
    for t in range(T):
        if not np.all(np.isfinite(tp)) or np.max(np.abs(tp)) > guard or not model.domain.contains(tp):
            div = t
            break
        pred[t] = tp
        ex = x[t] if reg_exo else None
        ll[t] = float(model._logpdf(y[t][None, :], tp[None, :], None if ex is None else ex[None, :])[0])
        try:
            if mode == "esd":
                H = pen.learning_rate(tp)
                res = esd_update(model, y[t], tp, H, exo=ex, scaling=scaling)
                theta = res.theta_upd
                st = STATUS_OUT_OF_DOMAIN if res.out_of_domain else 0
                it = 0
            else:
                res = isd_update(model, y[t], tp, pen, exo=ex, opts=solver, scaling=scaling)
                theta = res.theta_upd
                st = _STATUS_CODES.get(res.status, STATUS_ERROR)
                it = res.iterations
        except ISDError:
            if options.fail_fast:
                raise
            status[t] = STATUS_ERROR
            div = t
            break
        if options.fail_fast and st != 0:
            raise ISDError(f"update failed at step {t + 1}: {STATUS_LABELS[st]}")
        if noise is not None:
            theta = theta + noise[t]
        status[t] = st
        iters[t] = it
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > guard:
            div = t
            break
        upd[t] = theta
        tp = omega + phi @ theta
        if shift_x:
            tp = tp + statics.gamma * x[t, 0]
        if mode == "isd" and isinstance(model, AsymmetricLaplaceQuantile) and np.any(np.diff(tp) <= 0):
            raise DomainEscape("prediction step produced crossed quantiles")
    return FilterPath(pred, upd, ll, status, iters, div, mode)


def two_init_probe(
    model: DensityModel,
    data,
    statics: StaticParams,
    init_a,
    init_b,
    mode: str = "isd",
    exo=None,
    options: Optional[FilterOptions] = None,
) -> np.ndarray:
    """Distance between predictions of two runs that differ only in ``theta_{0|0}``.

    Returns ``||theta_{t|t-1} - theta~_{t|t-1}||`` for ``t = 1..T`` (NaN after
    a divergence of either path).
    """
    pa = run_filter(model, data, exo, statics, init=init_a, mode=mode, options=options)
    pb = run_filter(model, data, exo, statics, init=init_b, mode=mode, options=options)
    return np.linalg.norm(pa.predictions - pb.predictions, axis=1)

"""Data-generating processes and Monte-Carlo replication studies.

Four designs are available: the filter itself as the DGP (``isd_dgp``), an
AR(1) state observed through a density (``ar1_state``), the two-parameter
Gamma with square-wave parameters (``square_wave_gamma``) and a Dirichlet
with an AR(1) log-concentration (``dirichlet_ar1``).  Every replication
draws from its own substream ``SeedSequence([seed, rep])``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .densities import DensityModel, GammaTwoParam, make_model
from .errors import ConfigError, ISDError, LengthMismatch
from .estimate import FitConfig, fit
from .filter import FilterOptions, StaticParams, _scale_factor, run_filter
from .update import esd_update, isd_update

__all__ = [
    "DgpSpec",
    "FitSpec",
    "ReplicationReport",
    "simulate",
    "mse",
    "run_replication_study",
    "statics_summary",
    "square_wave_states",
]

_KINDS = ("isd_dgp", "ar1_state", "square_wave_gamma", "dirichlet_ar1")


@dataclass(frozen=True)
class DgpSpec:
    """Description of a data-generating process.

    Use the constructors :meth:`isd`, :meth:`ar1`, :meth:`square_wave` and
    :meth:`dirichlet`.
    """

    kind: str
    T: int
    seed: int = 0
    model: Optional[DensityModel] = None
    statics: Optional[StaticParams] = None
    mode: str = "isd"
    omega0: float = 0.0
    phi0: float = 0.98
    sigma_eta: float = 0.1
    innovation: str = "gaussian"
    nu0: float = 5.0
    periods: tuple = (400, 1000)
    burn_in: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown DGP kind {self.kind!r}")
        if int(self.T) != self.T or self.T < 0:
            raise ConfigError("T must be a nonnegative integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit nonnegative integer")
        if self.kind == "isd_dgp":
            if self.model is None or self.statics is None:
                raise ConfigError("isd_dgp needs a model and static parameters")
            if self.mode not in ("isd", "esd"):
                raise ConfigError("mode must be 'isd' or 'esd'")
        if self.kind in ("ar1_state", "dirichlet_ar1"):
            if self.model is None:
                raise ConfigError(f"{self.kind} needs a model")
            if self.model.param_dim != 1:
                raise ConfigError("AR(1) designs need a scalar parameter")
            if not self.sigma_eta >= 0:
                raise ConfigError("sigma_eta must be nonnegative")
            if not abs(self.phi0) < 1:
                raise ConfigError("phi0 must lie in (-1, 1)")
            if self.innovation not in ("gaussian", "student_t"):
                raise ConfigError("innovation must be 'gaussian' or 'student_t'")
            if self.innovation == "student_t" and not self.nu0 > 2:
                raise ConfigError("student_t innovations need nu0 > 2 for unit variance")
        if self.kind == "dirichlet_ar1" and self.model.key != "dirichlet":
            raise ConfigError("dirichlet_ar1 needs a Dirichlet model")
        if self.kind == "square_wave_gamma":
            if len(self.periods) != 2 or min(self.periods) <= 0:
                raise ConfigError("periods must be two positive numbers")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be nonnegative")

    @classmethod
    def isd(cls, model: DensityModel, statics: StaticParams, T: int, seed: int = 0, mode: str = "isd") -> "DgpSpec":
        """The filter as DGP: ``y_t ~ p(. | theta_{t|t-1})`` with the filter's own recursion."""
        return cls("isd_dgp", T, seed, model=model, statics=statics, mode=mode)

    @classmethod
    def ar1(cls, model: DensityModel, omega0: float, phi0: float, sigma_eta: float, T: int, seed: int = 0,
            innovation: str = "gaussian", nu0: float = 5.0, burn_in: int = 0) -> "DgpSpec":
        """AR(1) state ``theta_t = omega0 + phi0 theta_{t-1} + sigma_eta eta_t``."""
        return cls("ar1_state", T, seed, model=model, omega0=omega0, phi0=phi0, sigma_eta=sigma_eta,
                   innovation=innovation, nu0=nu0, burn_in=burn_in)

    @classmethod
    def square_wave(cls, T: int, seed: int = 0, periods: tuple = (400, 1000)) -> "DgpSpec":
        """Gamma with ``a_t = 2 + sign sin(2 pi t/p1)`` and ``b_t = 8 + 3 sign cos(2 pi t/p2)``."""
        return cls("square_wave_gamma", T, seed, model=GammaTwoParam(), periods=tuple(periods))

    @classmethod
    def dirichlet(cls, n_components: int, omega0: float, phi0: float, sigma_eta2: float, T: int, seed: int = 0,
                  innovation: str = "gaussian", nu0: float = 5.0, burn_in: int = 100) -> "DgpSpec":
        """Dirichlet with AR(1) log-concentration and state variance ``sigma_eta2``."""
        if not sigma_eta2 >= 0:
            raise ConfigError("sigma_eta2 must be nonnegative")
        model = make_model("dirichlet", n_components=n_components)
        return cls("dirichlet_ar1", T, seed, model=model, omega0=omega0, phi0=phi0,
                   sigma_eta=math.sqrt(sigma_eta2), innovation=innovation, nu0=nu0, burn_in=burn_in)

    def with_seed(self, seed: int) -> "DgpSpec":
        return replace(self, seed=seed)


def _rng(seed: int, rep: Optional[int]) -> np.random.Generator:
    ss = np.random.SeedSequence(seed if rep is None else [seed, rep])
    return np.random.default_rng(ss)


def square_wave_states(T: int, periods: tuple = (400, 1000)) -> np.ndarray:
    """Square-wave Gamma parameters ``(a_t, b_t)`` for ``t = 1..T``; ``sign(0)`` is taken as +1."""
    t = np.arange(1, T + 1, dtype=float)
    # signs from the phase so that exact zeros of sin and cos map to +1
    fa = np.mod(t, periods[0]) / periods[0]
    fb = np.mod(t, periods[1]) / periods[1]
    a = 2.0 + np.where(fa <= 0.5, 1.0, -1.0)
    b = 8.0 + 3.0 * np.where((fb <= 0.25) | (fb >= 0.75), 1.0, -1.0)
    return np.column_stack([a, b])


def _innovations(spec: DgpSpec, rng, n: int) -> np.ndarray:
    if spec.innovation == "gaussian":
        return rng.standard_normal(n)
    nu = spec.nu0
    return rng.standard_t(nu, n) * math.sqrt((nu - 2.0) / nu)


def _simulate_ar1(spec: DgpSpec, rng) -> tuple:
    n = spec.T + spec.burn_in
    eta = _innovations(spec, rng, n)
    theta = np.empty(n)
    prev = spec.omega0 / (1.0 - spec.phi0)
    for t in range(n):
        prev = spec.omega0 + spec.phi0 * prev + spec.sigma_eta * eta[t]
        theta[t] = prev
    theta = theta[spec.burn_in:]
    y = spec.model.sample(theta, rng) if spec.T else np.zeros((0, spec.model.obs_dim))
    return y, theta[:, None]


def _simulate_isd(spec: DgpSpec, rng) -> tuple:
    model = spec.statics.apply(spec.model)
    st = spec.statics
    K = model.param_dim
    T = spec.T
    y = np.zeros((T, model.obs_dim))
    theta = np.zeros((T, K))
    pen = st.penalty
    x = st.initial_state()
    tp = st.omega + st.phi @ x
    scalar = K == 1 and model.kernel_code >= 0
    if scalar:
        be = kernels.backend
        prm = model.kernel_params()
        code = model.kernel_code
        scale = _scale_factor(model, st)
        closed = model.key == "t-location"
        w, ph = float(st.omega[0]), float(st.phi[0, 0])
        opts = FilterOptions().solver
        t0 = float(tp[0])
        for t in range(T):
            theta[t, 0] = t0
            yt = model.sample(np.array([t0]), rng)
            y[t] = yt[0]
            row = model.kernel_rows(yt)[0]
            P = math.exp(0.5 * t0) / pen.h if pen.kind == "info_scaled" else float(pen.matrix[0, 0])
            if spec.mode == "esd":
                upd = t0 + scale / P * be.score(code, row[0], row[1], prm, t0)
            else:
                upd, _, _ = be.isd_step(code, row[0], row[1], row[2], prm, t0, P, scale, opts.foc_tol,
                                        opts.max_newton_iters, opts.max_bisect_iters, opts.multistart, closed)
            t0 = w + ph * upd
            if not math.isfinite(t0):
                raise ISDError(f"DGP recursion diverged at step {t + 1}")
        return y, theta
    for t in range(T):
        theta[t] = tp
        y[t] = model.sample(tp[None, :], rng)[0]
        if spec.mode == "esd":
            upd = esd_update(model, y[t], tp, pen.learning_rate(tp)).theta_upd
        else:
            upd = isd_update(model, y[t], tp, pen).theta_upd
        tp = st.omega + st.phi @ upd
    return y, theta


def simulate(spec: DgpSpec, rep: Optional[int] = None) -> tuple:
    """Draw a series from ``spec``.

    Parameters
    ----------
    spec : DgpSpec
        Process description.
    rep : int, optional
        Replication index; selects the substream ``SeedSequence([seed, rep])``.

    Returns
    -------
    y : ndarray, shape (T, obs_dim)
    theta0 : ndarray, shape (T, K)
        True parameter path (the predictions of the DGP filter for ``isd_dgp``).
    """
    rng = _rng(spec.seed, rep)
    if spec.kind == "isd_dgp":
        return _simulate_isd(spec, rng)
    if spec.kind in ("ar1_state", "dirichlet_ar1"):
        return _simulate_ar1(spec, rng)
    states = square_wave_states(spec.T, spec.periods)
    y = rng.gamma(states[:, 0], 1.0 / states[:, 1])[:, None]
    return y, states


def mse(predictions, theta0, split_R: int) -> tuple:
    """In-sample (``t <= R``) and out-of-sample (``t > R``) mean squared errors.

    Non-finite predictions (a diverged path) give ``inf`` for the range that
    contains them.  Empty ranges give NaN.

    Raises
    ------
    LengthMismatch
        If the two series differ in shape.
    """
    p = np.asarray(predictions, dtype=float)
    s = np.asarray(theta0, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if s.ndim == 1:
        s = s[:, None]
    if p.shape != s.shape:
        raise LengthMismatch(f"predictions {p.shape} and states {s.shape} differ")
    if not 0 <= split_R <= p.shape[0]:
        raise ConfigError("split_R must lie in [0, T]")

    def part(a, b):
        if a.shape[0] == 0:
            return math.nan
        if not np.all(np.isfinite(a)):
            return math.inf
        return float(np.mean((a - b) ** 2))

    return part(p[:split_R], s[:split_R]), part(p[split_R:], s[split_R:])


def statics_summary(statics: StaticParams) -> dict:
    """Flat named view of static parameters (learning rate ``H`` = inverse penalty)."""
    K = statics.omega.shape[0]
    out = {}
    for i in range(K):
        out["omega" if K == 1 else f"omega[{i}]"] = float(statics.omega[i])
    for i in range(K):
        for j in range(K):
            if i == j or statics.phi[i, j] != 0:
                out["phi" if K == 1 else f"phi[{i},{j}]"] = float(statics.phi[i, j])
    pen = statics.penalty
    if pen.kind == "info_scaled":
        out["H"] = float(pen.h)
    else:
        H = pen.learning_rate(statics.omega)
        for i in range(K):
            for j in range(i, K):
                out["H" if K == 1 else f"H[{i},{j}]"] = float(H[i, j])
    for k, v in statics.psi.items():
        out[k] = float(v)
    if statics.gamma:
        out["gamma"] = float(statics.gamma)
    return out


@dataclass(frozen=True)
class FitSpec:
    """One filter fitted in every replication of a study."""

    label: str
    model: DensityModel
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def mode(self) -> str:
        return self.config.mode


def _state_view(model: DensityModel, theta0: np.ndarray) -> np.ndarray:
    # compare in the filter's own parameterization
    if isinstance(model, GammaTwoParam) and model.link == "exp":
        return np.log(theta0)
    return theta0


def _one_replication(args) -> list:
    dgp, fits, rep, split_R, options = args
    rows = []
    try:
        y, theta0 = simulate(dgp, rep)
    except ISDError as exc:
        return [{"rep": rep, "label": f.label, "error": f"simulation failed: {exc}"} for f in fits]
    for f in fits:
        row = {"rep": rep, "label": f.label, "error": ""}
        try:
            statics, report = fit(f.model, y[:split_R], None, f.config, options)
            path = run_filter(f.model, y, None, statics, mode=f.mode, options=options)
            in_mse, out_mse = mse(path.predictions, _state_view(f.model, theta0), split_R)
            row.update(in_mse=in_mse, out_mse=out_mse, diverged=path.diverged,
                       diverged_at=path.diverged_at, fit_objective=report.objective,
                       xi_hat=statics_summary(statics))
        except ISDError as exc:
            row.update(in_mse=math.nan, out_mse=math.nan, diverged=False, diverged_at=None,
                       fit_objective=math.nan, xi_hat={}, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


@dataclass
class ReplicationReport:
    """Per-replication rows and their aggregates.

    Each row has ``rep``, ``label``, ``in_mse``, ``out_mse``, ``diverged``,
    ``diverged_at``, ``fit_objective``, ``xi_hat`` and ``error``.
    """

    rows: list
    split_R: int
    seed: int
    truth: dict = field(default_factory=dict)

    @property
    def labels(self) -> list:
        out = []
        for r in self.rows:
            if r["label"] not in out:
                out.append(r["label"])
        return out

    def select(self, label: str) -> list:
        return [r for r in self.rows if r["label"] == label]

    def aggregate(self) -> dict:
        """Aggregates per label: MSE means and medians, divergence fraction, RMSEs."""
        out = {}
        for lab in self.labels:
            rows = [r for r in self.select(lab) if not r.get("error")]
            n = len(rows)
            ins = np.array([r["in_mse"] for r in rows], dtype=float)
            outs = np.array([r["out_mse"] for r in rows], dtype=float)
            div = np.array([bool(r["diverged"]) for r in rows])
            agg = {
                "n_reps": n,
                "n_failed": len(self.select(lab)) - n,
                "in_mse_mean": float(np.mean(ins)) if n else math.nan,
                "out_mse_mean": float(np.mean(outs)) if n else math.nan,
                "in_mse_median": float(np.median(ins)) if n else math.nan,
                "out_mse_median": float(np.median(outs)) if n else math.nan,
                "divergence_fraction": float(np.mean(div)) if n else math.nan,
            }
            if self.truth and n:
                rmse = {}
                for name, v0 in self.truth.items():
                    vals = np.array([r["xi_hat"].get(name, math.nan) for r in rows], dtype=float)
                    rmse[name] = float(np.sqrt(np.mean((vals - v0) ** 2)))
                agg["rmse"] = rmse
            out[lab] = agg
        return out

    def to_csv(self, path) -> None:
        names = sorted({k for r in self.rows for k in r.get("xi_hat", {})})
        cols = ["rep", "label", "in_mse", "out_mse", "diverged", "diverged_at", "fit_objective", "error"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols + [f"xi_{n}" for n in names])
            for r in self.rows:
                w.writerow([r.get(c, "") if r.get(c) is not None else "" for c in cols]
                           + [r.get("xi_hat", {}).get(n, "") for n in names])

    def to_json(self, path) -> None:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v == math.inf else None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v

        with open(path, "w", encoding="utf-8") as fh:
            json.dump(clean({"split_R": self.split_R, "seed": self.seed, "truth": self.truth,
                             "aggregate": self.aggregate()}), fh, indent=2, sort_keys=True)


def default_workers() -> int:
    """Worker count from ``ISDFILTER_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("ISDFILTER_WORKERS", "1")))
    except ValueError:
        return 1


def run_replication_study(
    dgp: DgpSpec,
    fit_families: list,
    n_reps: int,
    split_R: int,
    parallel: Optional[int] = None,
    truth: Optional[dict] = None,
    options: Optional[FilterOptions] = None,
) -> ReplicationReport:
    """Simulate, fit on the first ``split_R`` observations, filter, and score.

    Parameters
    ----------
    dgp : DgpSpec
        Process; replication ``r`` uses substream ``[dgp.seed, r]``.
    fit_families : list of FitSpec
        Filters fitted and evaluated in every replication.
    n_reps : int
        Number of replications.
    split_R : int
        Estimation window; MSEs are split at this index.
    parallel : int, optional
        Worker processes; default from ``ISDFILTER_WORKERS``.
    truth : dict, optional
        True static values by summary name for the RMSE aggregates.
    """
    if n_reps < 1:
        raise ConfigError("n_reps must be at least 1")
    if not 0 < split_R < dgp.T:
        raise ConfigError("split_R must lie strictly between 0 and T")
    if not fit_families:
        raise ConfigError("at least one fit family is required")
    workers = parallel if parallel is not None else default_workers()
    jobs = [(dgp, tuple(fit_families), r, split_R, options) for r in range(n_reps)]
    if workers > 1 and n_reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replication, jobs))
    else:
        results = [_one_replication(j) for j in jobs]
    rows = [row for rs in results for row in rs]
    return ReplicationReport(rows, split_R, dgp.seed, dict(truth or {}))

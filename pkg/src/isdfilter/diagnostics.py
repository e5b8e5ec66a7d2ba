"""Stability coefficients and Monte-Carlo checks of the filter's accuracy results.

The coefficient calculators take a penalty matrix ``P``, an autoregressive
matrix ``Phi`` and a strong-concavity constant ``alpha``.  The Monte-Carlo
check :func:`verify_mse_decomposition` evaluates both sides of the exact
post-update MSE identity for a correctly specified model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .densities import DensityModel
from .errors import ConfigError, NotNonExpansive
from .filter import StaticParams, two_init_probe
from .update import (
    PenaltySpec,
    average_hessian_many,
    compute_average_hessian,
    esd_update,
    isd_update,
    isd_update_many,
)
from ._linalg import check_spd

__all__ = [
    "ContractionReport",
    "MseDecomposition",
    "contraction_coefficient",
    "explicit_contraction_coefficient",
    "kappa",
    "ndr_radius_sq",
    "static_invertibility_check",
    "numerical_error_bound",
    "verify_mse_decomposition",
    "mse_bound_check",
    "t_location_stability_bound",
    "cauchy_t_score_moments",
    "cauchy_t_score_moments_quadrature",
    "mse_curve_nonconcave",
    "probe_decay_slope",
    "run_diagnostics",
]

_THEOREMS = ("prop2_shrinkage", "lemma1_isd", "lemma1_esd", "lemma2_kappa", "corollary1")


def _spd(P) -> np.ndarray:
    return check_spd(np.atleast_2d(np.asarray(P, dtype=float)), "P")


def _eig(P) -> tuple:
    ev = np.linalg.eigvalsh(P)
    return float(ev[0]), float(ev[-1])


def _alpha(alpha: float) -> float:
    if not alpha >= 0 or not math.isfinite(alpha):
        raise ConfigError("alpha must be a nonnegative finite number")
    return float(alpha)


@dataclass(frozen=True)
class ContractionReport:
    """A contraction coefficient together with the inputs that produced it."""

    coefficient: float
    theorem: str
    inputs: dict

    def __post_init__(self):
        if self.theorem not in _THEOREMS:
            raise ConfigError(f"unknown theorem tag {self.theorem!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def contraction_coefficient(P, alpha: float) -> float:
    """Update contraction coefficient ``(lmax / (lmax + alpha))**2`` with ``lmax = lambda_max(P)``."""
    P = _spd(P)
    alpha = _alpha(alpha)
    _, lmax = _eig(P)
    return (lmax / (lmax + alpha)) ** 2


def explicit_contraction_coefficient(P, alpha: float, lipschitz: float) -> float:
    """Explicit-update contraction coefficient ``(lmax - alpha (2 - L/lmin)) / lmax``.

    Raises
    ------
    ConfigError
        If ``alpha > L`` (curvature bounds out of order) or ``lambda_min(P) < L/2``,
        where the bound does not apply.
    """
    P = _spd(P)
    alpha = _alpha(alpha)
    if not lipschitz >= 0:
        raise ConfigError("the Lipschitz constant must be nonnegative")
    lmin, lmax = _eig(P)
    if alpha > lipschitz:
        raise ConfigError(f"alpha={alpha} exceeds the Lipschitz constant L={lipschitz}")
    if lmin < lipschitz / 2.0:
        raise ConfigError(f"lambda_min(P)={lmin} is below L/2={lipschitz / 2.0}")
    return (lmax - alpha * (2.0 - lipschitz / lmin)) / lmax


def kappa(P, phi, alpha: float) -> float:
    """Prediction-to-prediction coefficient.

    ``lmax (lmax - lambda_min(P - Phi' P Phi)) / (lmax + alpha)**2``.

    Raises
    ------
    NotNonExpansive
        If ``P - Phi' P Phi`` has a negative eigenvalue.
    """
    P = _spd(P)
    alpha = _alpha(alpha)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape != P.shape:
        raise ConfigError("phi and P must have the same shape")
    D = P - phi.T @ P @ phi
    dmin = float(np.linalg.eigvalsh(0.5 * (D + D.T))[0])
    _, lmax = _eig(P)
    if dmin < -1e-12 * lmax:
        raise NotNonExpansive(f"P - Phi'P Phi has eigenvalue {dmin} < 0")
    dmin = max(dmin, 0.0)
    return lmax * (lmax - dmin) / (lmax + alpha) ** 2


def contraction_reports(P, phi, alpha: float, lipschitz: Optional[float] = None) -> list:
    """All applicable coefficients as :class:`ContractionReport` records."""
    P = _spd(P)
    lmin, lmax = _eig(P)
    inputs = {"lambda_max": lmax, "lambda_min": lmin, "alpha": float(alpha),
              "phi": np.atleast_2d(np.asarray(phi, dtype=float)).tolist()}
    c = contraction_coefficient(P, alpha)
    out = [ContractionReport(c, "prop2_shrinkage", inputs), ContractionReport(c, "lemma1_isd", inputs)]
    if lipschitz is not None and lmin >= lipschitz / 2.0 and alpha <= lipschitz:
        out.append(ContractionReport(explicit_contraction_coefficient(P, alpha, lipschitz), "lemma1_esd",
                                     {**inputs, "lipschitz": float(lipschitz)}))
    out.append(ContractionReport(kappa(P, phi, alpha), "lemma2_kappa", inputs))
    if alpha > 0:
        out.append(ContractionReport(c, "corollary1", inputs))
    return out


def ndr_radius_sq(sigma2: float, P: float, alpha: float) -> float:
    """Squared radius ``sigma2 / (2 P alpha + alpha**2)`` of the noise-dominated region."""
    if not (sigma2 > 0 and P > 0 and alpha > 0):
        raise ConfigError("sigma2, P and alpha must be positive")
    return sigma2 / (2.0 * P * alpha + alpha * alpha)


def static_invertibility_check(P, phi, alpha: float) -> dict:
    """Check the invertibility condition for a static penalty.

    Uses ``Pbar = P``, ``rho = 1`` and ``Q = (1 - kappa) P / 2``.  Returns
    ``kappa``, the common-norm contraction ``delta`` and whether the
    condition holds (it does exactly when ``kappa < 1``).
    """
    P = _spd(P)
    k = kappa(P, phi, alpha)
    Q = 0.5 * (1.0 - k) * P
    lmin_q = float(np.linalg.eigvalsh(Q)[0])
    _, lmax = _eig(P)
    lhs_ok = bool(np.linalg.eigvalsh(P - (k * P + Q))[0] >= -1e-12 * lmax)
    holds = bool(k < 1.0 and lmin_q > 0 and lhs_ok)
    delta = (lmax - lmin_q) / lmax
    return {"kappa": k, "delta": delta, "holds": holds}


def numerical_error_bound(P, phi, alpha: float, eps: float) -> float:
    """Limit bound on the distance between an exact path and one with per-step errors ``<= eps``.

    ``sqrt(lambda_max(Phi' P Phi) / lambda_min(P)) * eps / (1 - sqrt(delta))``
    with ``delta`` from :func:`static_invertibility_check`.
    """
    P = _spd(P)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    chk = static_invertibility_check(P, phi, alpha)
    if not chk["holds"]:
        return math.inf
    lmin, _ = _eig(P)
    top = float(np.linalg.eigvalsh(phi.T @ P @ phi)[-1])
    return math.sqrt(top / lmin) * eps / (1.0 - math.sqrt(chk["delta"]))


@dataclass(frozen=True)
class MseDecomposition:
    """Both sides of the post-update MSE identity, in the ``P`` norm.

    ``residual = mse_after - (se_before - contractive + expansive)`` has
    zero expectation; ``mcse`` is its Monte-Carlo standard error.
    """

    mse_after: float
    se_before: float
    contractive: float
    expansive: float
    residual: float
    mcse: float
    n_draws: int
    mode: str

    @property
    def within(self) -> float:
        """``|residual|`` in units of ``mcse``."""
        return abs(self.residual) / self.mcse if self.mcse > 0 else (0.0 if self.residual == 0 else math.inf)

    def to_dict(self) -> dict:
        return {**asdict(self), "within_mcse": self.within}


def _quad_form(v, M):
    return np.einsum("ni,ij,nj->n", v, M, v)


def verify_mse_decomposition(
    model: DensityModel,
    theta_star,
    theta_pred,
    P,
    n_draws: int = 100_000,
    seed: int = 0,
    mode: str = "isd",
    n_nodes: int = 32,
) -> MseDecomposition:
    """Monte-Carlo evaluation of the post-update MSE identity.

    Draws ``y ~ p(. | theta_star)`` and compares ``||theta_upd - theta_star||_P^2``
    with ``SE - contractive + expansive`` draw by draw.  For the implicit update
    the contractive term is ``||e||^2_{2I + I P^-1 I}`` with ``e`` the update
    error and ``I`` the average information between ``theta_upd`` and
    ``theta_star``; the expansive term is ``||score(y|theta_star)||^2_{P^-1}``.
    For the explicit update the contractive term is ``e0' 2I e0`` with ``e0`` the
    prediction error and ``I`` averaged between ``theta_pred`` and
    ``theta_star``; the expansive term is ``||score(y|theta_pred)||^2_{P^-1}``.
    The per-draw difference is ``2 e0' score(y|theta_star)``, which has mean
    zero under correct specification.
    """
    if mode not in ("isd", "esd"):
        raise ConfigError("mode must be 'isd' or 'esd'")
    if n_draws < 2:
        raise ConfigError("n_draws must be at least 2")
    K = model.param_dim
    ts = np.atleast_1d(np.asarray(theta_star, dtype=float))
    tp = np.atleast_1d(np.asarray(theta_pred, dtype=float))
    P = _spd(P)
    if ts.shape != (K,) or tp.shape != (K,) or P.shape != (K, K):
        raise ConfigError("theta_star, theta_pred and P must match the parameter dimension")
    Pinv = np.linalg.inv(P)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    y = model.sample(np.broadcast_to(ts, (n_draws, K)), rng)
    e0 = tp - ts
    se = float(e0 @ P @ e0)
    scalar = K == 1 and model.kernel_code >= 0
    if mode == "isd":
        if scalar:
            upd, _, _ = isd_update_many(model, y, np.full(n_draws, tp[0]), np.full(n_draws, P[0, 0]))
            upd = np.asarray(upd)[:, None]
        else:
            upd = np.array([isd_update(model, y[i], tp, P).theta_upd for i in range(n_draws)])
        e = upd - ts
        if scalar:
            info = average_hessian_many(model, y, e[:, 0] + ts[0], np.full(n_draws, ts[0]), n_nodes)
            contr = (2.0 * info + info * info * Pinv[0, 0]) * e[:, 0] ** 2
        else:
            contr = np.empty(n_draws)
            for i in range(n_draws):
                I = compute_average_hessian(model, y[i], upd[i], ts, n_nodes)
                M = 2.0 * I + I @ Pinv @ I
                contr[i] = e[i] @ M @ e[i]
        g = model.score_many(y, np.broadcast_to(ts, (n_draws, K)))
    else:
        upd = np.array([esd_update(model, y[i], tp, Pinv).theta_upd for i in range(n_draws)]) if not scalar else (
            tp[0] + Pinv[0, 0] * model.score_many(y, np.full((n_draws, 1), tp[0]))[:, 0])[:, None]
        e = upd - ts
        if scalar:
            info = average_hessian_many(model, y, np.full(n_draws, tp[0]), np.full(n_draws, ts[0]), n_nodes)
            contr = 2.0 * info * e0[0] ** 2
        else:
            contr = np.array([e0 @ (2.0 * compute_average_hessian(model, y[i], tp, ts, n_nodes)) @ e0
                              for i in range(n_draws)])
        g = model.score_many(y, np.broadcast_to(tp, (n_draws, K)))
    g = np.asarray(g, dtype=float).reshape(n_draws, K)
    lhs = _quad_form(e, P)
    expn = _quad_form(g, Pinv)
    d = lhs - (se - contr + expn)
    return MseDecomposition(
        mse_after=float(np.mean(lhs)),
        se_before=se,
        contractive=float(np.mean(contr)),
        expansive=float(np.mean(expn)),
        residual=float(np.mean(d)),
        mcse=float(np.std(d, ddof=1) / math.sqrt(n_draws)),
        n_draws=int(n_draws),
        mode=mode,
    )


def mse_bound_check(
    model: DensityModel, theta_star, theta_pred, P, n_draws: int = 100_000, seed: int = 0
) -> dict:
    """Monte-Carlo check of ``MSE_after <= c (SE + E||score(theta_star)||^2_{P^-1})``.

    ``c`` is :func:`contraction_coefficient` at the family's ``alpha``, which
    must be positive.  Returns the two sides, the MCSE of the left side and
    whether the inequality holds within four MCSEs.
    """
    alpha = model.concavity().alpha
    if alpha is None or alpha <= 0:
        raise ConfigError(f"{model.key} is not strongly log-concave")
    dec = verify_mse_decomposition(model, theta_star, theta_pred, P, n_draws, seed, "isd")
    c = contraction_coefficient(P, alpha)
    K = model.param_dim
    ts = np.atleast_1d(np.asarray(theta_star, dtype=float))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    y = model.sample(np.broadcast_to(ts, (n_draws, K)), rng)
    tp = np.atleast_1d(np.asarray(theta_pred, dtype=float))
    P = _spd(P)
    if K == 1 and model.kernel_code >= 0:
        upd = np.asarray(isd_update_many(model, y, np.full(n_draws, tp[0]), np.full(n_draws, P[0, 0]))[0])[:, None]
    else:
        upd = np.array([isd_update(model, y[i], tp, P).theta_upd for i in range(n_draws)])
    lhs_draws = _quad_form(upd - ts, P)
    mcse = float(np.std(lhs_draws, ddof=1) / math.sqrt(n_draws))
    rhs = c * (dec.se_before + dec.expansive)
    return {"lhs": dec.mse_after, "rhs": rhs, "coefficient": c, "mcse": mcse,
            "holds": bool(dec.mse_after <= rhs + 4.0 * mcse)}


def t_location_stability_bound(H: float, sigma: float, nu: float) -> float:
    """Largest ``|Phi|`` certified stable for the Student-t location filter: ``1 - H (nu+1) / (8 nu sigma^2)``."""
    if not (H > 0 and sigma > 0 and nu > 0):
        raise ConfigError("H, sigma and nu must be positive")
    return 1.0 - H * (nu + 1.0) / (8.0 * nu * sigma * sigma)


def _check_tcauchy(sigma, nu, gamma):
    if not (sigma > 0 and nu > 0 and gamma > 0):
        raise ConfigError("sigma, nu and gamma must be positive")


def cauchy_t_score_moments(mu: float, sigma: float, nu: float, gamma: float) -> tuple:
    """First two moments of the scaled Student-t score under Cauchy data.

    The score is ``(y - mu) / (1 + (y - mu)^2 / (nu sigma^2))`` and
    ``y ~ Cauchy(0, gamma)``.  With ``xi = sqrt(nu) sigma + gamma``::

        m1 = -mu nu sigma^2 / (mu^2 + xi^2)
        m2 = nu^1.5 sigma^3 (sqrt(nu) sigma mu^2 + xi mu^2 + gamma xi^2) / (2 (mu^2 + xi^2)^2)
    """
    _check_tcauchy(sigma, nu, gamma)
    a = math.sqrt(nu) * sigma
    xi = a + gamma
    d = mu * mu + xi * xi
    m1 = -mu * nu * sigma * sigma / d
    m2 = nu**1.5 * sigma**3 * (a * mu * mu + xi * mu * mu + gamma * xi * xi) / (2.0 * d * d)
    return m1, m2


def cauchy_t_score_moments_quadrature(mu: float, sigma: float, nu: float, gamma: float) -> tuple:
    """Quadrature oracle for :func:`cauchy_t_score_moments`.

    Substitutes ``y = gamma tan(u)`` so the Cauchy measure becomes
    ``du / pi`` on ``(-pi/2, pi/2)``.
    """
    _check_tcauchy(sigma, nu, gamma)
    c = nu * sigma * sigma

    def s(u):
        e = gamma * math.tan(u) - mu
        return e / (1.0 + e * e / c)

    # the score peaks where y is near mu; split there
    u_mu = math.atan(mu / gamma)
    lo, hi = -0.5 * math.pi, 0.5 * math.pi
    pts = sorted({lo, u_mu, hi})
    m1 = m2 = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b - a <= 0:
            continue
        m1 += integrate.quad(s, a, b, epsabs=0.0, epsrel=1e-12, limit=400)[0]
        m2 += integrate.quad(lambda u: s(u) ** 2, a, b, epsabs=0.0, epsrel=1e-12, limit=400)[0]
    return m1 / math.pi, m2 / math.pi


def mse_curve_nonconcave(H: float, gamma: float, sigma: float, nu: float, se_grid) -> np.ndarray:
    """Post-update MSE ``SE + 2 H mu m1 + H^2 m2`` at ``mu = sqrt(SE)`` for each grid value."""
    if not H > 0:
        raise ConfigError("H must be positive")
    se = np.asarray(se_grid, dtype=float)
    if np.any(se < 0):
        raise ConfigError("squared errors must be nonnegative")
    out = np.empty_like(se)
    for i, v in np.ndenumerate(se):
        mu = math.sqrt(v)
        m1, m2 = cauchy_t_score_moments(mu, sigma, nu, gamma)
        out[i] = v + 2.0 * H * mu * m1 + H * H * m2
    return out


def probe_decay_slope(distances, floor: float = 1e-300) -> float:
    """Least-squares slope of ``log(distance)`` over the steps where the distance is positive."""
    d = np.asarray(distances, dtype=float)
    idx = np.flatnonzero(d > floor)
    if idx.size < 2:
        return -math.inf
    return float(np.polyfit(idx.astype(float), np.log(d[idx]), 1)[0])


def run_diagnostics(
    model: DensityModel,
    P,
    phi,
    alpha: Optional[float] = None,
    lipschitz: Optional[float] = None,
    test_points: Optional[list] = None,
    n_draws: int = 100_000,
    seed: int = 0,
    probe_T: int = 500,
) -> dict:
    """Coefficient values, MSE-identity residuals and an invertibility probe as a JSON-ready dict.

    Parameters
    ----------
    model : DensityModel
        Family under study.
    P, phi : array_like
        Static penalty and autoregressive matrix.
    alpha : float, optional
        Strong-concavity constant; defaults to the family's certificate (0 if none).
    lipschitz : float, optional
        Score Lipschitz constant for the explicit-update coefficient.
    test_points : list of (theta_star, theta_pred), optional
        Points for the MSE identity.
    """
    P = _spd(P)
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if alpha is None:
        a = model.concavity().alpha
        alpha = 0.0 if a is None else float(a)
    out = {"family": model.key, "P": P.tolist(), "phi": phi.tolist(), "alpha": alpha, "seed": seed}
    reports = []
    try:
        reports = [r.to_dict() for r in contraction_reports(P, phi, alpha, lipschitz)]
    except NotNonExpansive as exc:
        out["not_non_expansive"] = str(exc)
    out["coefficients"] = reports
    if "not_non_expansive" not in out:
        out["invertibility"] = static_invertibility_check(P, phi, alpha)
        out["numerical_error_bound_per_eps"] = numerical_error_bound(P, phi, alpha, 1.0)
    checks = []
    for j, (ts, tp) in enumerate(test_points or []):
        for mode in ("isd", "esd"):
            try:
                dec = verify_mse_decomposition(model, ts, tp, P, n_draws, seed + j, mode)
                checks.append({"theta_star": np.atleast_1d(ts).tolist(), "theta_pred": np.atleast_1d(tp).tolist(),
                               **dec.to_dict()})
            except Exception as exc:  # reported in-band
                checks.append({"theta_star": np.atleast_1d(ts).tolist(), "theta_pred": np.atleast_1d(tp).tolist(),
                               "mode": mode, "error": f"{type(exc).__name__}: {exc}"})
    out["mse_decomposition"] = checks
    if model.param_dim == 1 and model.kernel_code >= 0 and probe_T > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        center = float(np.asarray(test_points[0][0]).reshape(-1)[0]) if test_points else 0.0
        y = model.sample(np.full(probe_T, center), rng)
        statics = StaticParams(PenaltySpec.static(P), (1.0 - phi[0, 0]) * center, phi, init=np.array([center]))
        d = np.asarray(two_init_probe(model, y, statics, np.array([center - 1.0]), np.array([center + 1.0])))
        out["probe"] = {"T": probe_T, "initial": float(d[0]), "final": float(d[-1]),
                        "log_slope": probe_decay_slope(d)}
    return out


"""Small linear-algebra helpers shared by the update and estimation code."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import ConfigError, SpectralRadiusError


def spectral_radius(phi) -> float:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(phi))))


def lyapunov_solve(phi, delta) -> np.ndarray:
    """Solve ``P - Phi' P Phi = Delta`` for the stable matrix ``Phi``.

    Parameters
    ----------
    phi : array_like, shape (K, K)
        Autoregressive matrix with spectral radius below one.
    delta : array_like, shape (K, K)
        Symmetric positive definite right-hand side.

    Returns
    -------
    ndarray
        The unique symmetric positive definite solution.

    Raises
    ------
    SpectralRadiusError
        If the spectral radius of ``phi`` is at least ``1 - 1e-12``.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    if phi.shape != delta.shape or phi.shape[0] != phi.shape[1]:
        raise ConfigError("phi and delta must be square matrices of equal size")
    rho = spectral_radius(phi)
    if not rho < 1.0 - 1e-12:
        raise SpectralRadiusError(f"spectral radius {rho} is not below 1")
    k = phi.shape[0]
    if k == 1:
        return delta / (1.0 - phi * phi)
    # scipy solves X = A X A' + Q, so A = Phi'
    method = "direct" if k <= 8 else "bilinear"
    p = linalg.solve_discrete_lyapunov(phi.T, delta, method=method)
    return 0.5 * (p + p.T)


def vech_size(k: int) -> int:
    return k * (k + 1) // 2


def log_cholesky_forward(z, k: int) -> np.ndarray:
    """Map ``k(k+1)/2`` unconstrained values to an SPD matrix ``L L'``.

    The diagonal of ``L`` is exponentiated.
    """
    z = np.asarray(z, dtype=float)
    L = np.zeros((k, k))
    idx = np.tril_indices(k)
    L[idx] = z
    L[np.diag_indices(k)] = np.exp(np.diag(L))
    return L @ L.T


def log_cholesky_inverse(m) -> np.ndarray:
    """Inverse of :func:`log_cholesky_forward`."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    L = np.linalg.cholesky(m)
    L[np.diag_indices(m.shape[0])] = np.log(np.diag(L))
    return L[np.tril_indices(m.shape[0])]


def check_spd(m, name: str = "matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} must be a finite square matrix")
    if not np.allclose(m, m.T, rtol=1e-12, atol=1e-14):
        raise ConfigError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(m)) <= 0:
        raise ConfigError(f"{name} must be positive definite")
    return 0.5 * (m + m.T)

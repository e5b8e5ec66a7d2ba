from typing import Any

import numpy as np

def digamma(x: float) -> float: ...
def trigamma(x: float) -> float: ...
def logpdf(code: int, a: float, b: float, c: float, prm: Any, t: float) -> float: ...
def score(code: int, a: float, b: float, prm: Any, t: float) -> float: ...
def hess(code: int, a: float, b: float, prm: Any, t: float) -> float: ...
def solve_isd(
    code: int, a: float, b: float, c: float, prm: Any, tp: float, P: float, tol: float,
    max_newton: int, max_bisect: int, global_search: bool,
) -> tuple[float, int, int]: ...
def isd_step(
    code: int, a: float, b: float, c: float, prm: Any, tp: float, P: float, scale: float, tol: float,
    max_newton: int, max_bisect: int, global_search: bool, closed: bool,
) -> tuple[float, int, int]: ...
def isd_batch(
    code: int, rows: np.ndarray, prm: Any, tp: Any, P: Any, scale: float, tol: float,
    max_newton: int, max_bisect: int, global_search: bool, closed: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]: ...
def tloc_weight(k: float, H: float) -> float: ...
def tloc_update(y: float, tp: float, H: float, sigma: float, nu: float) -> tuple[float, float]: ...
def filter_scalar(
    code: int, rows: np.ndarray, prm: Any, omega: float, phi: float, p_static: float, info_h: float,
    mode: int, scale: float, theta_init: float, tol: float, max_newton: int, max_bisect: int,
    global_search: bool, guard: float, noise: np.ndarray | None = ...,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]: ...
def gamma2_isd_step(
    y: float, ly: float, ta: float, tb: float, P00: float, P01: float, P11: float, tol: float, max_newton: int,
) -> tuple[float, float, int, int]: ...
def filter_gamma2(
    y: np.ndarray, omega: Any, phi: Any, P: Any, theta_init: Any, mode: int, tol: float,
    max_newton: int, guard: float, noise: np.ndarray | None = ...,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]: ...

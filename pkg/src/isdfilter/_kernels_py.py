"""Pure-Python implementation of the filter kernels.

This module mirrors ``_kernels.pyx`` line by line and is used when the
compiled extension is unavailable.  Observations arrive pre-packed as rows
``(a, b, c)`` where ``c`` collects the parameter-free terms of the
log-density (see ``DensityModel.kernel_rows``).
"""

from __future__ import annotations

import math

import numpy as np

POISSON = 0
NEGBIN = 1
EXPONENTIAL = 2
GAMMA = 3
WEIBULL = 4
GAUSS_VOL = 5
T_VOL = 6
GAUSS_CORR = 7
T_CORR = 8
GED = 9
DIRICHLET = 10
T_LOC = 11
REGRESSION = 12
GAUSS_LOC = 13

MODE_ISD = 0
MODE_ESD = 1
MODE_ISD_CLOSED = 2

OK = 0
MAX_ITER = 1
NONFINITE = 2
NO_ROOT = 3

SCAN_POINTS = 256
EPS = 2.220446049250313e-16

_ARITH = (ArithmeticError, ValueError)


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def digamma(x):
    r = 0.0
    while x < 12.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (-1.0 / 132 + f * (691.0 / 32760))))))
    return r + math.log(x) - 0.5 / x + t


def trigamma(x):
    r = 0.0
    while x < 12.0:
        r += 1.0 / (x * x)
        x += 1.0
    f = 1.0 / (x * x)
    t = 1.0 / x + f / 2.0 + f / x * (1.0 / 6 + f * (-1.0 / 30 + f * (1.0 / 42 + f * (-1.0 / 30 + f * (5.0 / 66)))))
    return r + t


def _corr(a, b, t):
    rho = math.tanh(0.5 * t)
    e = _exp(-abs(t))
    d = 4.0 * e / ((1.0 + e) * (1.0 + e))
    q = a * a + b * b - 2.0 * rho * a * b
    n1 = a * b * d - rho * q
    u = q / d
    du = -2.0 * n1 / (d * d)
    d2u = (2.0 * q * d - 8.0 * rho * n1) / (d * d * d)
    return rho, d, u, du, d2u


def _log1mrho2(t):
    h = abs(0.5 * t)
    return -2.0 * (h + math.log1p(_exp(-2.0 * h)) - math.log(2.0))


def logpdf(code, a, b, c, prm, t):
    if code == POISSON:
        return a * t - _exp(t) + c
    if code == NEGBIN:
        k = prm[0]
        m = max(math.log(k), t)
        return a * t - (k + a) * (m + math.log(_exp(math.log(k) - m) + _exp(t - m))) + c
    if code == EXPONENTIAL:
        return t - _exp(t) * a
    if code == GAMMA:
        return -a * _exp(-t) - prm[0] * t + c
    if code == WEIBULL:
        k = prm[0]
        return -k * t - _exp(k * (b - t)) + c
    if code == GAUSS_VOL:
        return -0.5 * t - 0.5 * a * _exp(-t) + c
    if code == T_VOL:
        nu = prm[0]
        return -0.5 * t - 0.5 * (nu + 1.0) * math.log1p(a * _exp(-t) / (nu - 2.0)) + c
    if code == GAUSS_CORR:
        rho, d, u, du, d2u = _corr(a, b, t)
        return -0.5 * _log1mrho2(t) - 0.5 * u + c
    if code == T_CORR:
        nu = prm[0]
        rho, d, u, du, d2u = _corr(a, b, t)
        return -0.5 * _log1mrho2(t) - 0.5 * (nu + 2.0) * math.log1p(u / (nu - 2.0)) + c
    if code == GED:
        return -abs((a - t) / prm[1]) ** prm[0] + c
    if code == DIRICHLET:
        n = prm[0]
        lam = _exp(t)
        return math.lgamma(n * lam) - n * math.lgamma(lam) + (lam - 1.0) * a + c
    if code == T_LOC:
        nu = prm[0]
        s = prm[1]
        e = a - t
        return -0.5 * (nu + 1.0) * math.log1p(e * e / (nu * s * s)) + c
    if code == REGRESSION:
        r = a - b * t
        return -0.5 * r * r / prm[0] + c
    if code == GAUSS_LOC:
        e = a - t
        return -0.5 * e * e / prm[0] + c
    raise ValueError(f"unknown family code {code}")


def score(code, a, b, prm, t):
    if code == POISSON:
        return a - _exp(t)
    if code == NEGBIN:
        k = prm[0]
        lam = _exp(t)
        if lam > 1e300:
            return a - (k + a)
        return a - (k + a) * lam / (k + lam)
    if code == EXPONENTIAL:
        return 1.0 - _exp(t) * a
    if code == GAMMA:
        return a * _exp(-t) - prm[0]
    if code == WEIBULL:
        k = prm[0]
        return k * _exp(k * (b - t)) - k
    if code == GAUSS_VOL:
        return 0.5 * a * _exp(-t) - 0.5
    if code == T_VOL:
        nu = prm[0]
        u = a * _exp(-t)
        return 0.5 * (nu + 1.0) * u / (nu - 2.0 + u) - 0.5
    if code == GAUSS_CORR:
        rho, d, u, du, d2u = _corr(a, b, t)
        return 0.5 * (rho / d - 0.5 * du) * d
    if code == T_CORR:
        nu = prm[0]
        rho, d, u, du, d2u = _corr(a, b, t)
        return 0.5 * (rho / d - 0.5 * (nu + 2.0) * du / (nu - 2.0 + u)) * d
    if code == GED:
        e = a - t
        if e == 0.0:
            return 0.0
        ups = prm[0]
        s = prm[1]
        g = ups / s * abs(e / s) ** (ups - 1.0)
        return g if e > 0 else -g
    if code == DIRICHLET:
        n = prm[0]
        lam = _exp(t)
        return lam * (n * digamma(n * lam) - n * digamma(lam) + a)
    if code == T_LOC:
        nu = prm[0]
        s2n = nu * prm[1] * prm[1]
        e = a - t
        return (nu + 1.0) / s2n * e / (1.0 + e * e / s2n)
    if code == REGRESSION:
        return b * (a - b * t) / prm[0]
    if code == GAUSS_LOC:
        return (a - t) / prm[0]
    raise ValueError(f"unknown family code {code}")


def hess(code, a, b, prm, t):
    if code == POISSON:
        return -_exp(t)
    if code == NEGBIN:
        k = prm[0]
        lam = _exp(t)
        if lam > 1e300:
            return 0.0
        return -k * lam * (k + a) / ((k + lam) * (k + lam))
    if code == EXPONENTIAL:
        return -_exp(t) * a
    if code == GAMMA:
        return -a * _exp(-t)
    if code == WEIBULL:
        k = prm[0]
        return -k * k * _exp(k * (b - t))
    if code == GAUSS_VOL:
        return -0.5 * a * _exp(-t)
    if code == T_VOL:
        nu = prm[0]
        u = a * _exp(-t)
        return -0.5 * (nu + 1.0) * (nu - 2.0) * u / ((nu - 2.0 + u) * (nu - 2.0 + u))
    if code == GAUSS_CORR:
        rho, d, u, du, d2u = _corr(a, b, t)
        l1 = rho / d - 0.5 * du
        l2 = (1.0 + rho * rho) / (d * d) - 0.5 * d2u
        return 0.25 * l2 * d * d - 0.5 * l1 * rho * d
    if code == T_CORR:
        nu = prm[0]
        rho, d, u, du, d2u = _corr(a, b, t)
        m = nu - 2.0 + u
        cc = 0.5 * (nu + 2.0)
        l1 = rho / d - cc * du / m
        l2 = (1.0 + rho * rho) / (d * d) - cc * (d2u / m - du * du / (m * m))
        return 0.25 * l2 * d * d - 0.5 * l1 * rho * d
    if code == GED:
        ups = prm[0]
        s = prm[1]
        e = a - t
        if ups == 2.0:
            return -2.0 / (s * s)
        if e == 0.0:
            return 0.0 if ups > 2.0 else -math.inf
        return -ups * (ups - 1.0) / (s * s) * abs(e / s) ** (ups - 2.0)
    if code == DIRICHLET:
        n = prm[0]
        lam = _exp(t)
        first = lam * (n * digamma(n * lam) - n * digamma(lam) + a)
        return first + lam * lam * (n * n * trigamma(n * lam) - n * trigamma(lam))
    if code == T_LOC:
        nu = prm[0]
        s2n = nu * prm[1] * prm[1]
        e = a - t
        k = e * e / s2n
        return (nu + 1.0) / s2n * (k - 1.0) / ((1.0 + k) * (1.0 + k))
    if code == REGRESSION:
        return -b * b / prm[0]
    if code == GAUSS_LOC:
        return -1.0 / prm[0]
    raise ValueError(f"unknown family code {code}")


def _needs_global(code, prm, P):
    if code == T_LOC:
        return True
    if code == GED and prm[0] < 1.0:
        return True
    if (code == GAUSS_CORR or code == T_CORR) and P < 0.25:
        return True
    return False


def _refine(code, a, b, prm, tp, P, xp, xn, d, tol, max_newton, max_bisect):
    """Safeguarded Newton on h(x) = score(x) - P (x - tp) inside [xp, xn].

    ``d * h(xp) > 0`` and ``d * h(xn) <= 0``.  Returns ``(x, iters, status)``.
    """
    x = 0.5 * (xp + xn)
    it_n = 0
    it_b = 0
    dx_old = abs(xn - xp)
    best_x = x
    best_h = math.inf
    while True:
        hx = score(code, a, b, prm, x) - P * (x - tp)
        if not math.isfinite(hx):
            hx = -d * math.inf
        if abs(hx) < best_h:
            best_h = abs(hx)
            best_x = x
        if abs(hx) <= tol:
            return x, it_n + it_b, OK
        if d * hx > 0:
            xp = x
        else:
            xn = x
        if abs(xn - xp) <= 4.0 * EPS * max(abs(xp), abs(xn), 1e-300):
            return best_x, it_n + it_b, OK
        dh = hess(code, a, b, prm, x) - P
        use_newton = False
        if it_n < max_newton and math.isfinite(dh) and dh < 0.0 and math.isfinite(hx):
            step = hx / dh
            xnew = x - step
            lo = min(xp, xn)
            hi = max(xp, xn)
            if lo < xnew < hi and abs(2.0 * step) <= dx_old:
                use_newton = True
                dx_old = abs(step)
                it_n += 1
                x = xnew
        if not use_newton:
            if it_b >= max_bisect:
                return best_x, it_n + it_b, MAX_ITER
            dx_old = abs(xn - xp)
            x = 0.5 * (xp + xn)
            it_b += 1


def _objective(code, a, b, c, prm, tp, P, x):
    return logpdf(code, a, b, c, prm, x) - 0.5 * P * (x - tp) * (x - tp)


def _scan(code, a, b, c, prm, tp, P, g0, end, tol, max_newton, max_bisect, best):
    """Refine every local maximum on the segment from ``tp`` to ``end``.

    ``best`` is ``[x, f, found, iters]`` and is updated in place.
    """
    d = 1.0 if end > tp else -1.0
    x_prev = tp
    h_prev = g0
    for i in range(1, SCAN_POINTS + 1):
        x = tp + (end - tp) * i / SCAN_POINTS
        hx = score(code, a, b, prm, x) - P * (x - tp)
        if d * h_prev > 0 and d * hx <= 0:
            if hx == 0.0:
                r = x
                st = OK
            else:
                r, it, st = _refine(code, a, b, prm, tp, P, x_prev, x, d, tol, max_newton, max_bisect)
                best[3] += it
            f = _objective(code, a, b, c, prm, tp, P, r)
            if st == OK and (f > best[1] + 1e-12 or (abs(f - best[1]) <= 1e-12 and abs(r - tp) < abs(best[0] - tp))):
                best[0] = r
                best[1] = f
                best[2] = True
        x_prev = x
        h_prev = hx


def _global(code, a, b, c, prm, tp, P, g0, tol, max_newton, max_bisect):
    d = 1.0 if g0 > 0 else -1.0
    kink = code == GED and prm[0] <= 1.0
    best = [tp, -math.inf, False, 0]
    if code == GED or code == T_LOC:
        # the log-density falls away from the observation, so the maximizer lies between tp and y
        _scan(code, a, b, c, prm, tp, P, g0, a, tol, max_newton, max_bisect, best)
    else:
        step = abs(g0) / P
        end = tp + d * step
        k = 0
        while d * (score(code, a, b, prm, end) - P * (end - tp)) > 0 and k < 200:
            step *= 2.0
            end = tp + d * step
            k += 1
        _scan(code, a, b, c, prm, tp, P, g0, tp + 2.0 * d * step, tol, max_newton, max_bisect, best)
        # a non-concave objective can peak against the score: search the other side out to
        # where the score points back towards tp
        step = max(abs(g0) / P, 1.0)
        end = tp - d * step
        k = 0
        while d * score(code, a, b, prm, end) <= 0 and k < 200:
            step *= 2.0
            end = tp - d * step
            k += 1
        _scan(code, a, b, c, prm, tp, P, g0, tp - 2.0 * d * step, tol, max_newton, max_bisect, best)
    if kink:
        f = _objective(code, a, b, c, prm, tp, P, a)
        if f > best[1] + 1e-12:
            best[0] = a
            best[1] = f
            best[2] = True
    if not best[2]:
        return tp, best[3], NO_ROOT
    return best[0], best[3], OK


def solve_isd(code, a, b, c, prm, tp, P, tol, max_newton, max_bisect, global_search):
    """Maximize ``log p(y|x) - P/2 (x - tp)^2`` over scalar ``x``.

    Returns ``(x, iterations, status)``.
    """
    g0 = score(code, a, b, prm, tp)
    if not math.isfinite(g0) or not math.isfinite(P) or P <= 0.0:
        return tp, 0, NONFINITE
    ftol = tol * (1.0 + abs(P * tp))
    if abs(g0) <= ftol:
        return tp, 0, OK
    d = 1.0 if g0 > 0 else -1.0
    if code == GED and prm[0] == 1.0:
        step = 1.0 / (prm[1] * P)
        gap = abs(a - tp)
        return (tp + d * step if step < gap else a), 0, OK
    if global_search or _needs_global(code, prm, P):
        return _global(code, a, b, c, prm, tp, P, g0, ftol, max_newton, max_bisect)
    step = abs(g0) / P
    if code == GED and abs(a - tp) < step:
        step = abs(a - tp)
    hi = tp + d * step
    hh = score(code, a, b, prm, hi) - P * (hi - tp)
    k = 0
    while math.isfinite(hh) and d * hh > 0 and k < 200:
        step *= 2.0
        hi = tp + d * step
        hh = score(code, a, b, prm, hi) - P * (hi - tp)
        k += 1
    if hh == 0.0:
        return hi, 0, OK
    if math.isfinite(hh) and d * hh > 0:
        return tp, 0, MAX_ITER
    # a Newton step from the prediction usually lands inside the bracket
    dh = hess(code, a, b, prm, tp) - P
    x0 = tp - g0 / dh if (math.isfinite(dh) and dh < 0.0) else 0.5 * (tp + hi)
    lo = min(tp, hi)
    up = max(tp, hi)
    if not (lo < x0 < up):
        x0 = 0.5 * (tp + hi)
    hx = score(code, a, b, prm, x0) - P * (x0 - tp)
    if abs(hx) <= ftol:
        return x0, 1, OK
    if d * hx > 0:
        x, it, st = _refine(code, a, b, prm, tp, P, x0, hi, d, ftol, max_newton - 1, max_bisect)
    else:
        x, it, st = _refine(code, a, b, prm, tp, P, tp, x0, d, ftol, max_newton - 1, max_bisect)
    return x, it + 1, st


def tloc_weight(k, H):
    """Root ``w`` of ``k w (1-w)^2 + (1+H) w - H = 0`` maximizing the objective.

    The objective (up to a positive factor) is ``-log(1 + k (1-w)^2) - k w^2 / H``.
    """
    if k <= 3.0 * (1.0 + H):
        lo = 0.0
        hi = H / (1.0 + H)
        w = hi
        for _ in range(200):
            cw = k * w * (1.0 - w) * (1.0 - w) + (1.0 + H) * w - H
            if cw > 0:
                hi = w
            else:
                lo = w
            dc = k * (1.0 - w) * (1.0 - 3.0 * w) + 1.0 + H
            wn = w - cw / dc
            if not (lo < wn < hi):
                wn = 0.5 * (lo + hi)
            if abs(wn - w) <= 4.0 * EPS * max(w, 1e-300) or hi - lo <= 4.0 * EPS * hi:
                w = wn
                break
            w = wn
        return w
    # three-root regime: depressed cubic t^3 + p t + q with w = t + 2/3
    bb = (k + 1.0 + H) / k
    cc = -H / k
    p = bb - 4.0 / 3.0
    q = -16.0 / 27.0 + 2.0 * bb / 3.0 + cc
    roots = []
    disc = -(4.0 * p * p * p + 27.0 * q * q)
    if p < 0 and disc > 0:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        arg = min(1.0, max(-1.0, arg))
        phi = math.acos(arg) / 3.0
        for j in range(3):
            roots.append(m * math.cos(phi - 2.0 * math.pi * j / 3.0) + 2.0 / 3.0)
    else:
        s = math.sqrt(max(q * q / 4.0 + p * p * p / 27.0, 0.0))
        roots.append(math.copysign(abs(-q / 2.0 + s) ** (1.0 / 3.0), -q / 2.0 + s)
                     + math.copysign(abs(-q / 2.0 - s) ** (1.0 / 3.0), -q / 2.0 - s) + 2.0 / 3.0)
    best_w = math.nan
    best_f = -math.inf
    for w in roots:
        for _ in range(3):
            cw = k * w * (1.0 - w) * (1.0 - w) + (1.0 + H) * w - H
            dc = k * (1.0 - w) * (1.0 - 3.0 * w) + 1.0 + H
            if dc == 0.0:
                break
            w = w - cw / dc
        if not (0.0 < w < 1.0):
            continue
        f = -math.log1p(k * (1.0 - w) * (1.0 - w)) - k * w * w / H
        if f > best_f + 1e-12 or (abs(f - best_f) <= 1e-12 and w < best_w):
            best_f = f
            best_w = w
    return best_w


def tloc_update(y, tp, H, sigma, nu):
    e = y - tp
    if e == 0.0:
        return tp, 0.0
    k = e * e / (nu * sigma * sigma)
    w = tloc_weight(k, H)
    return tp + w * e, w


def isd_step(code, a, b, c, prm, tp, P, scale, tol, max_newton, max_bisect, global_search, closed):
    """One scalar ISD update with score scaling ``scale``; returns ``(x, iters, status)``."""
    Peff = P / scale
    if closed and code == T_LOC:
        nu = prm[0]
        s = prm[1]
        H = 1.0 / (Peff * nu * s * s / (nu + 1.0))
        x, w = tloc_update(a, tp, H, s, nu)
        return x, 0, OK
    return solve_isd(code, a, b, c, prm, tp, Peff, tol, max_newton, max_bisect, global_search)


def filter_scalar(code, rows, prm, omega, phi, p_static, info_h, mode, scale, theta_init,
                  tol, max_newton, max_bisect, global_search, guard, noise=None):
    """Run the scalar prediction/update recursion.

    Returns ``(pred, upd, loglik, status, iters, diverged_at)`` where
    ``diverged_at`` is -1 when the path stayed finite and below ``guard``.
    """
    rows = np.asarray(rows, dtype=float)
    T = rows.shape[0]
    pred = np.full(T, np.nan)
    upd = np.full(T, np.nan)
    ll = np.full(T, -np.inf)
    status = np.zeros(T, dtype=np.int32)
    iters = np.zeros(T, dtype=np.int32)
    prm = [float(v) for v in prm]
    A = rows[:, 0].tolist()
    B = rows[:, 1].tolist()
    C = rows[:, 2].tolist()
    nz = None if noise is None else np.asarray(noise, dtype=float).tolist()
    closed = mode == MODE_ISD_CLOSED
    tp = omega + phi * theta_init
    div = -1
    for t in range(T):
        if not math.isfinite(tp) or abs(tp) > guard:
            div = t
            break
        pred[t] = tp
        a = A[t]
        b = B[t]
        try:
            ll[t] = logpdf(code, a, b, C[t], prm, tp)
        except _ARITH:
            ll[t] = math.nan
        if info_h > 0.0:
            P = _exp(0.5 * tp) / info_h
        else:
            P = p_static
        try:
            if mode == MODE_ESD:
                x = tp + scale / P * score(code, a, b, prm, tp)
                st = OK
                it = 0
            else:
                x, it, st = isd_step(code, a, b, C[t], prm, tp, P, scale, tol, max_newton, max_bisect,
                                     global_search, closed)
        except _ARITH:
            x, it, st = math.nan, 0, NONFINITE
        if nz is not None:
            x += nz[t]
        status[t] = st
        iters[t] = it
        if not math.isfinite(x) or abs(x) > guard:
            div = t
            break
        upd[t] = x
        tp = omega + phi * x
    return pred, upd, ll, status, iters, div


# ---------------------------------------------------------------------------
# Two-parameter Gamma
# ---------------------------------------------------------------------------


def _g2_logpdf(ly, y, a, b):
    return a * math.log(b) + (a - 1.0) * ly - b * y - math.lgamma(a)


def gamma2_isd_step(y, ly, ta, tb, P00, P01, P11, tol, max_newton):
    """ISD update for the two-parameter Gamma on the positive quadrant.

    Damped Newton with Armijo backtracking and step clipping.  Returns
    ``(a, b, iters, status)``.
    """
    a = ta
    b = tb
    scale = tol * (1.0 + math.hypot(P00 * ta + P01 * tb, P01 * ta + P11 * tb))
    f = _g2_logpdf(ly, y, a, b)
    for it in range(max_newton):
        da = a - ta
        db = b - tb
        ga = math.log(b) + ly - digamma(a) - (P00 * da + P01 * db)
        gb = a / b - y - (P01 * da + P11 * db)
        if math.hypot(ga, gb) <= scale:
            return a, b, it, OK
        haa = -trigamma(a) - P00
        hab = 1.0 / b - P01
        hbb = -a / (b * b) - P11
        det = haa * hbb - hab * hab
        if not (haa < 0 and det > 0):
            return a, b, it, NONFINITE
        sa = -(hbb * ga - hab * gb) / det
        sb = -(-hab * ga + haa * gb) / det
        smax = 1.0
        if sa < 0:
            smax = min(smax, 0.9 * (-a / sa))
        if sb < 0:
            smax = min(smax, 0.9 * (-b / sb))
        s = smax
        fcur = f - 0.5 * (P00 * da * da + 2.0 * P01 * da * db + P11 * db * db)
        slope = ga * sa + gb * sb
        # below roundoff the sufficient-increase test is meaningless; take the Newton step
        tiny = s * slope <= 1e-12 * (1.0 + abs(fcur))
        for _ in range(60):
            na = a + s * sa
            nb = b + s * sb
            nda = na - ta
            ndb = nb - tb
            fn = _g2_logpdf(ly, y, na, nb)
            fnew = fn - 0.5 * (P00 * nda * nda + 2.0 * P01 * nda * ndb + P11 * ndb * ndb)
            if tiny or fnew >= fcur + 1e-4 * s * slope:
                break
            s *= 0.5
        else:
            return a, b, it, MAX_ITER
        if na == a and nb == b:
            return a, b, it, OK
        a = na
        b = nb
        f = fn
    return a, b, max_newton, MAX_ITER


def filter_gamma2(y, omega, phi, P, theta_init, mode, tol, max_newton, guard, noise=None):
    """Two-parameter Gamma recursion.

    ``mode`` 0 is ISD on ``(a, b)``; mode 1 is ESD on ``(log a, log b)`` with
    learning rate ``inv(P)``.  Arrays ``omega (2,)``, ``phi (2, 2)``, ``P (2, 2)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    T = y.shape[0]
    pred = np.full((T, 2), np.nan)
    upd = np.full((T, 2), np.nan)
    ll = np.full(T, -np.inf)
    status = np.zeros(T, dtype=np.int32)
    iters = np.zeros(T, dtype=np.int32)
    w0, w1 = float(omega[0]), float(omega[1])
    f00, f01, f10, f11 = float(phi[0][0]), float(phi[0][1]), float(phi[1][0]), float(phi[1][1])
    P00, P01, P11 = float(P[0][0]), float(P[0][1]), float(P[1][1])
    det = P00 * P11 - P01 * P01
    H00, H01, H11 = P11 / det, -P01 / det, P00 / det
    x0, x1 = float(theta_init[0]), float(theta_init[1])
    p0 = w0 + f00 * x0 + f01 * x1
    p1 = w1 + f10 * x0 + f11 * x1
    nz = None if noise is None else np.asarray(noise, dtype=float)
    div = -1
    for t in range(T):
        if not (math.isfinite(p0) and math.isfinite(p1)) or max(abs(p0), abs(p1)) > guard:
            div = t
            break
        pred[t, 0] = p0
        pred[t, 1] = p1
        yt = y[t]
        ly = math.log(yt)
        if mode == MODE_ESD:
            try:
                a = _exp(p0)
                b = _exp(p1)
                ll[t] = _g2_logpdf(ly, yt, a, b)
                sa = a * (math.log(b) + ly - digamma(a))
                sb = a - b * yt
                x0 = p0 + H00 * sa + H01 * sb
                x1 = p1 + H01 * sa + H11 * sb
            except (OverflowError, ValueError):
                x0 = math.nan
                x1 = math.nan
            st = OK
            it = 0
        else:
            if p0 <= 0.0 or p1 <= 0.0:
                div = t
                break
            ll[t] = _g2_logpdf(ly, yt, p0, p1)
            x0, x1, it, st = gamma2_isd_step(yt, ly, p0, p1, P00, P01, P11, tol, max_newton)
        if nz is not None:
            x0 += nz[t, 0]
            x1 += nz[t, 1]
        status[t] = st
        iters[t] = it
        if not (math.isfinite(x0) and math.isfinite(x1)) or max(abs(x0), abs(x1)) > guard:
            div = t
            break
        upd[t, 0] = x0
        upd[t, 1] = x1
        p0 = w0 + f00 * x0 + f01 * x1
        p1 = w1 + f10 * x0 + f11 * x1
    return pred, upd, ll, status, iters, div


def isd_batch(code, rows, prm, tp, P, scale, tol, max_newton, max_bisect, global_search, closed):
    """Vectorized wrapper of :func:`isd_step` over aligned arrays."""
    rows = np.asarray(rows, dtype=float)
    tp = np.broadcast_to(np.asarray(tp, dtype=float), (rows.shape[0],))
    P = np.broadcast_to(np.asarray(P, dtype=float), (rows.shape[0],))
    n = rows.shape[0]
    out = np.empty(n)
    iters = np.zeros(n, dtype=np.int32)
    status = np.zeros(n, dtype=np.int32)
    prm = [float(v) for v in prm]
    for i in range(n):
        try:
            out[i], iters[i], status[i] = isd_step(code, rows[i, 0], rows[i, 1], rows[i, 2], prm, tp[i], P[i],
                                                   scale, tol, max_newton, max_bisect, global_search, closed)
        except _ARITH:
            out[i], iters[i], status[i] = math.nan, 0, NONFINITE
    return out, iters, status

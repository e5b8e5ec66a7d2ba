# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled filter kernels.

Mirrors ``_kernels_py.py``; see that module for the row layout and the
meaning of the family codes and status values.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport (exp, log, log1p, fabs, tanh, pow, sqrt, lgamma, cos, acos,
                        cbrt, isfinite, INFINITY, NAN, M_PI, hypot, fmax)

cnp.import_array()

cdef enum:
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

cdef double EPS = 2.220446049250313e-16


cdef inline double _digamma(double x) noexcept nogil:
    cdef double r = 0.0, f, t
    while x < 12.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12 + f * (1.0 / 120 + f * (-1.0 / 252 + f * (1.0 / 240 + f * (-1.0 / 132 + f * (691.0 / 32760))))))
    return r + log(x) - 0.5 / x + t


cdef inline double _trigamma(double x) noexcept nogil:
    cdef double r = 0.0, f, t
    while x < 12.0:
        r += 1.0 / (x * x)
        x += 1.0
    f = 1.0 / (x * x)
    t = 1.0 / x + f / 2.0 + f / x * (1.0 / 6 + f * (-1.0 / 30 + f * (1.0 / 42 + f * (-1.0 / 30 + f * (5.0 / 66)))))
    return r + t


def digamma(double x):
    return _digamma(x)


def trigamma(double x):
    return _trigamma(x)


cdef inline void _corr(double a, double b, double t, double* rho, double* d, double* u,
                       double* du, double* d2u) noexcept nogil:
    cdef double e, q, n1
    rho[0] = tanh(0.5 * t)
    e = exp(-fabs(t))
    d[0] = 4.0 * e / ((1.0 + e) * (1.0 + e))
    q = a * a + b * b - 2.0 * rho[0] * a * b
    n1 = a * b * d[0] - rho[0] * q
    u[0] = q / d[0]
    du[0] = -2.0 * n1 / (d[0] * d[0])
    d2u[0] = (2.0 * q * d[0] - 8.0 * rho[0] * n1) / (d[0] * d[0] * d[0])


cdef inline double _log1mrho2(double t) noexcept nogil:
    cdef double h = fabs(0.5 * t)
    return -2.0 * (h + log1p(exp(-2.0 * h)) - log(2.0))


cdef double _logpdf(int code, double a, double b, double c, const double* prm, double t) noexcept nogil:
    cdef double k, m, nu, rho, d, u, du, d2u, n, lam, s, e, r
    if code == POISSON:
        return a * t - exp(t) + c
    elif code == NEGBIN:
        k = prm[0]
        m = log(k) if log(k) > t else t
        return a * t - (k + a) * (m + log(exp(log(k) - m) + exp(t - m))) + c
    elif code == EXPONENTIAL:
        return t - exp(t) * a
    elif code == GAMMA:
        return -a * exp(-t) - prm[0] * t + c
    elif code == WEIBULL:
        k = prm[0]
        return -k * t - exp(k * (b - t)) + c
    elif code == GAUSS_VOL:
        return -0.5 * t - 0.5 * a * exp(-t) + c
    elif code == T_VOL:
        nu = prm[0]
        return -0.5 * t - 0.5 * (nu + 1.0) * log1p(a * exp(-t) / (nu - 2.0)) + c
    elif code == GAUSS_CORR:
        _corr(a, b, t, &rho, &d, &u, &du, &d2u)
        return -0.5 * _log1mrho2(t) - 0.5 * u + c
    elif code == T_CORR:
        nu = prm[0]
        _corr(a, b, t, &rho, &d, &u, &du, &d2u)
        return -0.5 * _log1mrho2(t) - 0.5 * (nu + 2.0) * log1p(u / (nu - 2.0)) + c
    elif code == GED:
        return -pow(fabs((a - t) / prm[1]), prm[0]) + c
    elif code == DIRICHLET:
        n = prm[0]
        lam = exp(t)
        return lgamma(n * lam) - n * lgamma(lam) + (lam - 1.0) * a + c
    elif code == T_LOC:
        nu = prm[0]
        s = prm[1]
        e = a - t
        return -0.5 * (nu + 1.0) * log1p(e * e / (nu * s * s)) + c
    elif code == REGRESSION:
        r = a - b * t
        return -0.5 * r * r / prm[0] + c
    elif code == GAUSS_LOC:
        e = a - t
        return -0.5 * e * e / prm[0] + c
    return NAN


cdef double _score(int code, double a, double b, const double* prm, double t) noexcept nogil:
    cdef double k, lam, nu, u, rho, d, du, d2u, e, ups, s, g, n, s2n
    if code == POISSON:
        return a - exp(t)
    elif code == NEGBIN:
        k = prm[0]
        lam = exp(t)
        if lam > 1e300:
            return a - (k + a)
        return a - (k + a) * lam / (k + lam)
    elif code == EXPONENTIAL:
        return 1.0 - exp(t) * a
    elif code == GAMMA:
        return a * exp(-t) - prm[0]
    elif code == WEIBULL:
        k = prm[0]
        return k * exp(k * (b - t)) - k
    elif code == GAUSS_VOL:
        return 0.5 * a * exp(-t) - 0.5
    elif code == T_VOL:
        nu = prm[0]
        u = a * exp(-t)
        return 0.5 * (nu + 1.0) * u / (nu - 2.0 + u) - 0.5
    elif code == GAUSS_CORR:
        _corr(a, b, t, &rho, &d, &u, &du, &d2u)
        return 0.5 * (rho / d - 0.5 * du) * d
    elif code == T_CORR:
        nu = prm[0]
        _corr(a, b, t, &rho, &d, &u, &du, &d2u)
        return 0.5 * (rho / d - 0.5 * (nu + 2.0) * du / (nu - 2.0 + u)) * d
    elif code == GED:
        e = a - t
        if e == 0.0:
            return 0.0
        ups = prm[0]
        s = prm[1]
        g = ups / s * pow(fabs(e / s), ups - 1.0)
        return g if e > 0 else -g
    elif code == DIRICHLET:
        n = prm[0]
        lam = exp(t)
        return lam * (n * _digamma(n * lam) - n * _digamma(lam) + a)
    elif code == T_LOC:
        nu = prm[0]
        s2n = nu * prm[1] * prm[1]
        e = a - t
        return (nu + 1.0) / s2n * e / (1.0 + e * e / s2n)
    elif code == REGRESSION:
        return b * (a - b * t) / prm[0]
    elif code == GAUSS_LOC:
        return (a - t) / prm[0]
    return NAN


cdef double _hess(int code, double a, double b, const double* prm, double t) noexcept nogil:
    cdef double k, lam, nu, u, rho, d, du, d2u, l1, l2, m, cc, ups, s, e, n, first, s2n
    if code == POISSON:
        return -exp(t)
    elif code == NEGBIN:
        k = prm[0]
        lam = exp(t)
        if lam > 1e300:
            return 0.0
        return -k * lam * (k + a) / ((k + lam) * (k + lam))
    elif code == EXPONENTIAL:
        return -exp(t) * a
    elif code == GAMMA:
        return -a * exp(-t)
    elif code == WEIBULL:
        k = prm[0]
        return -k * k * exp(k * (b - t))
    elif code == GAUSS_VOL:
        return -0.5 * a * exp(-t)
    elif code == T_VOL:
        nu = prm[0]
        u = a * exp(-t)
        return -0.5 * (nu + 1.0) * (nu - 2.0) * u / ((nu - 2.0 + u) * (nu - 2.0 + u))
    elif code == GAUSS_CORR:
        _corr(a, b, t, &rho, &d, &u, &du, &d2u)
        l1 = rho / d - 0.5 * du
        l2 = (1.0 + rho * rho) / (d * d) - 0.5 * d2u
        return 0.25 * l2 * d * d - 0.5 * l1 * rho * d
    elif code == T_CORR:
        nu = prm[0]
        _corr(a, b, t, &rho, &d, &u, &du, &d2u)
        m = nu - 2.0 + u
        cc = 0.5 * (nu + 2.0)
        l1 = rho / d - cc * du / m
        l2 = (1.0 + rho * rho) / (d * d) - cc * (d2u / m - du * du / (m * m))
        return 0.25 * l2 * d * d - 0.5 * l1 * rho * d
    elif code == GED:
        ups = prm[0]
        s = prm[1]
        e = a - t
        if ups == 2.0:
            return -2.0 / (s * s)
        if e == 0.0:
            return 0.0 if ups > 2.0 else -INFINITY
        return -ups * (ups - 1.0) / (s * s) * pow(fabs(e / s), ups - 2.0)
    elif code == DIRICHLET:
        n = prm[0]
        lam = exp(t)
        first = lam * (n * _digamma(n * lam) - n * _digamma(lam) + a)
        return first + lam * lam * (n * n * _trigamma(n * lam) - n * _trigamma(lam))
    elif code == T_LOC:
        nu = prm[0]
        s2n = nu * prm[1] * prm[1]
        e = a - t
        k = e * e / s2n
        return (nu + 1.0) / s2n * (k - 1.0) / ((1.0 + k) * (1.0 + k))
    elif code == REGRESSION:
        return -b * b / prm[0]
    elif code == GAUSS_LOC:
        return -1.0 / prm[0]
    return NAN


cdef inline double _h(int code, double a, double b, const double* prm, double tp, double P, double x) noexcept nogil:
    return _score(code, a, b, prm, x) - P * (x - tp)


cdef inline double _dmax3(double a, double b, double c) noexcept nogil:
    cdef double m = a if a > b else b
    return m if m > c else c


cdef double _refine(int code, double a, double b, const double* prm, double tp, double P,
                    double xp, double xn, double d, double tol, int max_newton, int max_bisect,
                    int* iters, int* status) noexcept nogil:
    cdef double x = 0.5 * (xp + xn)
    cdef int it_n = 0, it_b = 0
    cdef double dx_old = fabs(xn - xp)
    cdef double best_x = x, best_h = INFINITY
    cdef double hx, dh, step, xnew, lo, hi
    cdef bint use_newton
    while True:
        hx = _h(code, a, b, prm, tp, P, x)
        if not isfinite(hx):
            hx = -d * INFINITY
        if fabs(hx) < best_h:
            best_h = fabs(hx)
            best_x = x
        if fabs(hx) <= tol:
            iters[0] = it_n + it_b
            status[0] = OK
            return x
        if d * hx > 0:
            xp = x
        else:
            xn = x
        if fabs(xn - xp) <= 4.0 * EPS * _dmax3(fabs(xp), fabs(xn), 1e-300):
            iters[0] = it_n + it_b
            status[0] = OK
            return best_x
        dh = _hess(code, a, b, prm, x) - P
        use_newton = False
        if it_n < max_newton and isfinite(dh) and dh < 0.0 and isfinite(hx):
            step = hx / dh
            xnew = x - step
            lo = xp if xp < xn else xn
            hi = xn if xp < xn else xp
            if lo < xnew and xnew < hi and fabs(2.0 * step) <= dx_old:
                use_newton = True
                dx_old = fabs(step)
                it_n += 1
                x = xnew
        if not use_newton:
            if it_b >= max_bisect:
                iters[0] = it_n + it_b
                status[0] = MAX_ITER
                return best_x
            dx_old = fabs(xn - xp)
            x = 0.5 * (xp + xn)
            it_b += 1


cdef inline double _objective(int code, double a, double b, double c, const double* prm,
                              double tp, double P, double x) noexcept nogil:
    return _logpdf(code, a, b, c, prm, x) - 0.5 * P * (x - tp) * (x - tp)


cdef inline bint _needs_global(int code, const double* prm, double P) noexcept nogil:
    if code == T_LOC:
        return True
    if code == GED and prm[0] < 1.0:
        return True
    if (code == GAUSS_CORR or code == T_CORR) and P < 0.25:
        return True
    return False


cdef void _scan(int code, double a, double b, double c, const double* prm, double tp, double P, double g0,
                double end, double tol, int max_newton, int max_bisect, double* best_x, double* best_f,
                bint* found, int* total) noexcept nogil:
    # refine every local maximum on the segment from tp to end
    cdef double d = 1.0 if end > tp else -1.0
    cdef double x_prev = tp, h_prev = g0, x, hx, r, f
    cdef int i, it = 0, st = OK
    for i in range(1, SCAN_POINTS + 1):
        x = tp + (end - tp) * i / SCAN_POINTS
        hx = _h(code, a, b, prm, tp, P, x)
        if d * h_prev > 0 and d * hx <= 0:
            if hx == 0.0:
                r = x
                st = OK
            else:
                r = _refine(code, a, b, prm, tp, P, x_prev, x, d, tol, max_newton, max_bisect, &it, &st)
                total[0] += it
            f = _objective(code, a, b, c, prm, tp, P, r)
            if st == OK and (f > best_f[0] + 1e-12
                             or (fabs(f - best_f[0]) <= 1e-12 and fabs(r - tp) < fabs(best_x[0] - tp))):
                best_f[0] = f
                best_x[0] = r
                found[0] = True
        x_prev = x
        h_prev = hx


cdef double _global(int code, double a, double b, double c, const double* prm, double tp, double P,
                    double g0, double tol, int max_newton, int max_bisect, int* iters, int* status) noexcept nogil:
    cdef double d = 1.0 if g0 > 0 else -1.0
    cdef bint kink = code == GED and prm[0] <= 1.0
    cdef double end, step, best_x = tp, best_f = -INFINITY, f
    cdef int k, total = 0
    cdef bint found = False
    if code == GED or code == T_LOC:
        # the log-density falls away from the observation, so the maximizer lies between tp and y
        _scan(code, a, b, c, prm, tp, P, g0, a, tol, max_newton, max_bisect, &best_x, &best_f, &found, &total)
    else:
        step = fabs(g0) / P
        end = tp + d * step
        k = 0
        while d * _h(code, a, b, prm, tp, P, end) > 0 and k < 200:
            step *= 2.0
            end = tp + d * step
            k += 1
        _scan(code, a, b, c, prm, tp, P, g0, tp + 2.0 * d * step, tol, max_newton, max_bisect,
              &best_x, &best_f, &found, &total)
        # a non-concave objective can peak against the score: search the other side out to
        # where the score points back towards tp
        step = fmax(fabs(g0) / P, 1.0)
        end = tp - d * step
        k = 0
        while d * _score(code, a, b, prm, end) <= 0 and k < 200:
            step *= 2.0
            end = tp - d * step
            k += 1
        _scan(code, a, b, c, prm, tp, P, g0, tp - 2.0 * d * step, tol, max_newton, max_bisect,
              &best_x, &best_f, &found, &total)
    if kink:
        f = _objective(code, a, b, c, prm, tp, P, a)
        if f > best_f + 1e-12:
            best_f = f
            best_x = a
            found = True
    iters[0] = total
    if not found:
        status[0] = NO_ROOT
        return tp
    status[0] = OK
    return best_x


cdef double _solve(int code, double a, double b, double c, const double* prm, double tp, double P,
                   double tol, int max_newton, int max_bisect, bint global_search,
                   int* iters, int* status) noexcept nogil:
    cdef double g0 = _score(code, a, b, prm, tp)
    cdef double ftol, d, step, gap, hi, hh, dh, x0, lo, up, hx, x
    cdef int k, it = 0
    iters[0] = 0
    status[0] = OK
    if not isfinite(g0) or not isfinite(P) or P <= 0.0:
        status[0] = NONFINITE
        return tp
    ftol = tol * (1.0 + fabs(P * tp))
    if fabs(g0) <= ftol:
        return tp
    d = 1.0 if g0 > 0 else -1.0
    if code == GED and prm[0] == 1.0:
        step = 1.0 / (prm[1] * P)
        gap = fabs(a - tp)
        return tp + d * step if step < gap else a
    if global_search or _needs_global(code, prm, P):
        return _global(code, a, b, c, prm, tp, P, g0, ftol, max_newton, max_bisect, iters, status)
    step = fabs(g0) / P
    if code == GED and fabs(a - tp) < step:
        step = fabs(a - tp)
    hi = tp + d * step
    hh = _h(code, a, b, prm, tp, P, hi)
    k = 0
    while isfinite(hh) and d * hh > 0 and k < 200:
        step *= 2.0
        hi = tp + d * step
        hh = _h(code, a, b, prm, tp, P, hi)
        k += 1
    if hh == 0.0:
        return hi
    if isfinite(hh) and d * hh > 0:
        status[0] = MAX_ITER
        return tp
    dh = _hess(code, a, b, prm, tp) - P
    if isfinite(dh) and dh < 0.0:
        x0 = tp - g0 / dh
    else:
        x0 = 0.5 * (tp + hi)
    lo = tp if tp < hi else hi
    up = hi if tp < hi else tp
    if not (lo < x0 and x0 < up):
        x0 = 0.5 * (tp + hi)
    hx = _h(code, a, b, prm, tp, P, x0)
    if fabs(hx) <= ftol:
        iters[0] = 1
        return x0
    if d * hx > 0:
        x = _refine(code, a, b, prm, tp, P, x0, hi, d, ftol, max_newton - 1, max_bisect, &it, status)
    else:
        x = _refine(code, a, b, prm, tp, P, tp, x0, d, ftol, max_newton - 1, max_bisect, &it, status)
    iters[0] = it + 1
    return x


cdef double _tloc_weight(double k, double H) noexcept nogil:
    cdef double lo, hi, w, cw, dc, wn, bb, cc, p, q, disc, m, arg, phi, s, f, best_w, best_f
    cdef double roots[3]
    cdef int nroots = 0, j, it
    if k <= 3.0 * (1.0 + H):
        lo = 0.0
        hi = H / (1.0 + H)
        w = hi
        for it in range(200):
            cw = k * w * (1.0 - w) * (1.0 - w) + (1.0 + H) * w - H
            if cw > 0:
                hi = w
            else:
                lo = w
            dc = k * (1.0 - w) * (1.0 - 3.0 * w) + 1.0 + H
            wn = w - cw / dc
            if not (lo < wn and wn < hi):
                wn = 0.5 * (lo + hi)
            if fabs(wn - w) <= 4.0 * EPS * (w if w > 1e-300 else 1e-300) or hi - lo <= 4.0 * EPS * hi:
                w = wn
                break
            w = wn
        return w
    bb = (k + 1.0 + H) / k
    cc = -H / k
    p = bb - 4.0 / 3.0
    q = -16.0 / 27.0 + 2.0 * bb / 3.0 + cc
    disc = -(4.0 * p * p * p + 27.0 * q * q)
    if p < 0 and disc > 0:
        m = 2.0 * sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        if arg > 1.0:
            arg = 1.0
        if arg < -1.0:
            arg = -1.0
        phi = acos(arg) / 3.0
        for j in range(3):
            roots[j] = m * cos(phi - 2.0 * M_PI * j / 3.0) + 2.0 / 3.0
        nroots = 3
    else:
        s = q * q / 4.0 + p * p * p / 27.0
        s = sqrt(s if s > 0.0 else 0.0)
        roots[0] = cbrt(-q / 2.0 + s) + cbrt(-q / 2.0 - s) + 2.0 / 3.0
        nroots = 1
    best_w = NAN
    best_f = -INFINITY
    for j in range(nroots):
        w = roots[j]
        for it in range(3):
            cw = k * w * (1.0 - w) * (1.0 - w) + (1.0 + H) * w - H
            dc = k * (1.0 - w) * (1.0 - 3.0 * w) + 1.0 + H
            if dc == 0.0:
                break
            w = w - cw / dc
        if not (0.0 < w and w < 1.0):
            continue
        f = -log1p(k * (1.0 - w) * (1.0 - w)) - k * w * w / H
        if f > best_f + 1e-12 or (fabs(f - best_f) <= 1e-12 and w < best_w):
            best_f = f
            best_w = w
    return best_w


def tloc_weight(double k, double H):
    return _tloc_weight(k, H)


def tloc_update(double y, double tp, double H, double sigma, double nu):
    cdef double e = y - tp, k, w
    if e == 0.0:
        return tp, 0.0
    k = e * e / (nu * sigma * sigma)
    w = _tloc_weight(k, H)
    return tp + w * e, w


cdef double _isd_step(int code, double a, double b, double c, const double* prm, double tp, double P,
                      double scale, double tol, int max_newton, int max_bisect, bint global_search,
                      bint closed, int* iters, int* status) noexcept nogil:
    cdef double Peff = P / scale, nu, s, H, e, k
    if closed and code == T_LOC:
        nu = prm[0]
        s = prm[1]
        H = 1.0 / (Peff * nu * s * s / (nu + 1.0))
        iters[0] = 0
        status[0] = OK
        e = a - tp
        if e == 0.0:
            return tp
        k = e * e / (nu * s * s)
        return tp + _tloc_weight(k, H) * e
    return _solve(code, a, b, c, prm, tp, Peff, tol, max_newton, max_bisect, global_search, iters, status)


cdef void _load_prm(object prm, double* out):
    cdef int i
    cdef const double[::1] v = np.ascontiguousarray(prm, dtype=np.float64)
    for i in range(4):
        out[i] = v[i] if i < v.shape[0] else 0.0


def logpdf(int code, double a, double b, double c, prm, double t):
    cdef double p[4]
    _load_prm(prm, p)
    return _logpdf(code, a, b, c, p, t)


def score(int code, double a, double b, prm, double t):
    cdef double p[4]
    _load_prm(prm, p)
    return _score(code, a, b, p, t)


def hess(int code, double a, double b, prm, double t):
    cdef double p[4]
    _load_prm(prm, p)
    return _hess(code, a, b, p, t)


def solve_isd(int code, double a, double b, double c, prm, double tp, double P, double tol,
              int max_newton, int max_bisect, bint global_search):
    cdef double p[4]
    cdef int it = 0, st = 0
    cdef double x
    _load_prm(prm, p)
    x = _solve(code, a, b, c, p, tp, P, tol, max_newton, max_bisect, global_search, &it, &st)
    return x, it, st


def isd_step(int code, double a, double b, double c, prm, double tp, double P, double scale, double tol,
             int max_newton, int max_bisect, bint global_search, bint closed):
    cdef double p[4]
    cdef int it = 0, st = 0
    cdef double x
    _load_prm(prm, p)
    x = _isd_step(code, a, b, c, p, tp, P, scale, tol, max_newton, max_bisect, global_search, closed, &it, &st)
    return x, it, st


def isd_batch(int code, rows, prm, tp, P, double scale, double tol, int max_newton, int max_bisect,
              bint global_search, bint closed):
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0], i
    cdef const double[::1] tpv = np.ascontiguousarray(np.broadcast_to(np.asarray(tp, dtype=np.float64), (n,)))
    cdef const double[::1] Pv = np.ascontiguousarray(np.broadcast_to(np.asarray(P, dtype=np.float64), (n,)))
    out_a = np.empty(n)
    it_a = np.zeros(n, dtype=np.int32)
    st_a = np.zeros(n, dtype=np.int32)
    cdef double[::1] out = out_a
    cdef int[::1] its = it_a
    cdef int[::1] sts = st_a
    cdef double p[4]
    cdef int it = 0, st = 0
    _load_prm(prm, p)
    with nogil:
        for i in range(n):
            out[i] = _isd_step(code, r[i, 0], r[i, 1], r[i, 2], p, tpv[i], Pv[i], scale, tol, max_newton,
                               max_bisect, global_search, closed, &it, &st)
            its[i] = it
            sts[i] = st
    return out_a, it_a, st_a


def filter_scalar(int code, rows, prm, double omega, double phi, double p_static, double info_h, int mode,
                  double scale, double theta_init, double tol, int max_newton, int max_bisect,
                  bint global_search, double guard, noise=None):
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t T = r.shape[0], t
    pred_a = np.full(T, np.nan)
    upd_a = np.full(T, np.nan)
    ll_a = np.full(T, -np.inf)
    st_a = np.zeros(T, dtype=np.int32)
    it_a = np.zeros(T, dtype=np.int32)
    cdef double[::1] pred = pred_a
    cdef double[::1] upd = upd_a
    cdef double[::1] ll = ll_a
    cdef int[::1] sts = st_a
    cdef int[::1] its = it_a
    cdef const double[::1] nz
    cdef bint has_noise = noise is not None
    if has_noise:
        nz = np.ascontiguousarray(noise, dtype=np.float64)
    else:
        nz = np.zeros(1)
    cdef double p[4]
    _load_prm(prm, p)
    cdef bint closed = mode == MODE_ISD_CLOSED
    cdef double tp = omega + phi * theta_init, a, b, P, x
    cdef int it = 0, st = 0
    cdef Py_ssize_t div = -1
    with nogil:
        for t in range(T):
            if not isfinite(tp) or fabs(tp) > guard:
                div = t
                break
            pred[t] = tp
            a = r[t, 0]
            b = r[t, 1]
            ll[t] = _logpdf(code, a, b, r[t, 2], p, tp)
            if info_h > 0.0:
                P = exp(0.5 * tp) / info_h
            else:
                P = p_static
            if mode == MODE_ESD:
                x = tp + scale / P * _score(code, a, b, p, tp)
                st = OK
                it = 0
            else:
                x = _isd_step(code, a, b, r[t, 2], p, tp, P, scale, tol, max_newton, max_bisect,
                              global_search, closed, &it, &st)
            if has_noise:
                x = x + nz[t]
            sts[t] = st
            its[t] = it
            if not isfinite(x) or fabs(x) > guard:
                div = t
                break
            upd[t] = x
            tp = omega + phi * x
    return pred_a, upd_a, ll_a, st_a, it_a, div


# ---------------------------------------------------------------------------
# Two-parameter Gamma
# ---------------------------------------------------------------------------


cdef inline double _g2_logpdf(double ly, double y, double a, double b) noexcept nogil:
    return a * log(b) + (a - 1.0) * ly - b * y - lgamma(a)


cdef void _gamma2_isd(double y, double ly, double ta, double tb, double P00, double P01, double P11,
                      double tol, int max_newton, double* oa, double* ob, int* iters, int* status) noexcept nogil:
    cdef double a = ta, b = tb, f, da, db, ga, gb, haa, hab, hbb, det, sa, sb, smax, s, fcur, slope
    cdef double na = ta, nb = tb, nda, ndb, fn = 0.0, fnew, scale
    cdef int it, ls
    cdef bint accepted, tiny
    scale = tol * (1.0 + hypot(P00 * ta + P01 * tb, P01 * ta + P11 * tb))
    f = _g2_logpdf(ly, y, a, b)
    for it in range(max_newton):
        da = a - ta
        db = b - tb
        ga = log(b) + ly - _digamma(a) - (P00 * da + P01 * db)
        gb = a / b - y - (P01 * da + P11 * db)
        if hypot(ga, gb) <= scale:
            oa[0] = a
            ob[0] = b
            iters[0] = it
            status[0] = OK
            return
        haa = -_trigamma(a) - P00
        hab = 1.0 / b - P01
        hbb = -a / (b * b) - P11
        det = haa * hbb - hab * hab
        if not (haa < 0 and det > 0):
            oa[0] = a
            ob[0] = b
            iters[0] = it
            status[0] = NONFINITE
            return
        sa = -(hbb * ga - hab * gb) / det
        sb = -(-hab * ga + haa * gb) / det
        smax = 1.0
        if sa < 0 and 0.9 * (-a / sa) < smax:
            smax = 0.9 * (-a / sa)
        if sb < 0 and 0.9 * (-b / sb) < smax:
            smax = 0.9 * (-b / sb)
        s = smax
        fcur = f - 0.5 * (P00 * da * da + 2.0 * P01 * da * db + P11 * db * db)
        slope = ga * sa + gb * sb
        accepted = False
        # below roundoff the sufficient-increase test is meaningless; take the Newton step
        tiny = s * slope <= 1e-12 * (1.0 + fabs(fcur))
        for ls in range(60):
            na = a + s * sa
            nb = b + s * sb
            nda = na - ta
            ndb = nb - tb
            fn = _g2_logpdf(ly, y, na, nb)
            fnew = fn - 0.5 * (P00 * nda * nda + 2.0 * P01 * nda * ndb + P11 * ndb * ndb)
            if tiny or fnew >= fcur + 1e-4 * s * slope:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            oa[0] = a
            ob[0] = b
            iters[0] = it
            status[0] = MAX_ITER
            return
        if na == a and nb == b:
            oa[0] = a
            ob[0] = b
            iters[0] = it
            status[0] = OK
            return
        a = na
        b = nb
        f = fn
    oa[0] = a
    ob[0] = b
    iters[0] = max_newton
    status[0] = MAX_ITER


def gamma2_isd_step(double y, double ly, double ta, double tb, double P00, double P01, double P11,
                    double tol, int max_newton):
    cdef double a = 0.0, b = 0.0
    cdef int it = 0, st = 0
    _gamma2_isd(y, ly, ta, tb, P00, P01, P11, tol, max_newton, &a, &b, &it, &st)
    return a, b, it, st


def filter_gamma2(y, omega, phi, P, theta_init, int mode, double tol, int max_newton, double guard, noise=None):
    cdef const double[::1] yv = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(-1))
    cdef Py_ssize_t T = yv.shape[0], t
    pred_a = np.full((T, 2), np.nan)
    upd_a = np.full((T, 2), np.nan)
    ll_a = np.full(T, -np.inf)
    st_a = np.zeros(T, dtype=np.int32)
    it_a = np.zeros(T, dtype=np.int32)
    cdef double[:, ::1] pred = pred_a
    cdef double[:, ::1] upd = upd_a
    cdef double[::1] ll = ll_a
    cdef int[::1] sts = st_a
    cdef int[::1] its = it_a
    cdef const double[:, ::1] nz
    cdef bint has_noise = noise is not None
    if has_noise:
        nz = np.ascontiguousarray(noise, dtype=np.float64).reshape(T, 2)
    else:
        nz = np.zeros((1, 2))
    om = np.asarray(omega, dtype=np.float64)
    ph = np.asarray(phi, dtype=np.float64)
    Pm = np.asarray(P, dtype=np.float64)
    th = np.asarray(theta_init, dtype=np.float64)
    cdef double w0 = om[0], w1 = om[1]
    cdef double f00 = ph[0, 0], f01 = ph[0, 1], f10 = ph[1, 0], f11 = ph[1, 1]
    cdef double P00 = Pm[0, 0], P01 = Pm[0, 1], P11 = Pm[1, 1]
    cdef double det = P00 * P11 - P01 * P01
    cdef double H00 = P11 / det, H01 = -P01 / det, H11 = P00 / det
    cdef double x0 = th[0], x1 = th[1]
    cdef double p0 = w0 + f00 * x0 + f01 * x1
    cdef double p1 = w1 + f10 * x0 + f11 * x1
    cdef double yt, ly, a, b, sa, sb
    cdef int it = 0, st = 0
    cdef Py_ssize_t div = -1
    with nogil:
        for t in range(T):
            if not (isfinite(p0) and isfinite(p1)) or fabs(p0) > guard or fabs(p1) > guard:
                div = t
                break
            pred[t, 0] = p0
            pred[t, 1] = p1
            yt = yv[t]
            ly = log(yt)
            if mode == MODE_ESD:
                a = exp(p0)
                b = exp(p1)
                ll[t] = _g2_logpdf(ly, yt, a, b)
                sa = a * (log(b) + ly - _digamma(a))
                sb = a - b * yt
                x0 = p0 + H00 * sa + H01 * sb
                x1 = p1 + H01 * sa + H11 * sb
                st = OK
                it = 0
            else:
                if p0 <= 0.0 or p1 <= 0.0:
                    div = t
                    break
                ll[t] = _g2_logpdf(ly, yt, p0, p1)
                _gamma2_isd(yt, ly, p0, p1, P00, P01, P11, tol, max_newton, &x0, &x1, &it, &st)
            if has_noise:
                x0 = x0 + nz[t, 0]
                x1 = x1 + nz[t, 1]
            sts[t] = st
            its[t] = it
            if not (isfinite(x0) and isfinite(x1)) or fabs(x0) > guard or fabs(x1) > guard:
                div = t
                break
            upd[t, 0] = x0
            upd[t, 1] = x1
            p0 = w0 + f00 * x0 + f01 * x1
            p1 = w1 + f10 * x0 + f11 * x1
    return pred_a, upd_a, ll_a, st_a, it_a, div

"""Compiled inner loops for the stiff integrators.

Rates reach the kernels as (code, coeffs) pairs produced by
ConversionRate.kernel_encoding(): affine [slope, intercept], step
[low, high, threshold] (value at the threshold is ``low``), table
[x0..x_{n-1}, y0..y_{n-1}] with linear interpolation and held ends.
Everything here is optional: callers fall back to the pure-python paths
when numba is missing or a rate has no encoding.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

# step-loop exit codes shared by the resumable kernels
STATUS_DONE = 0
STATUS_FULL = 1
STATUS_DT_UNDERFLOW = 2
STATUS_NEGATIVE = 3
STATUS_NEWTON_FAIL = 4
STATUS_MAX_STEPS = 5

# keep the implicit-midpoint half-step inside its strongly damped zone:
# |z| = (h/2) * q' / eps <= Z_CAP
Z_CAP = 6.0

_NEG_TOL = -1e-12


@njit(cache=True)
def _rate_value(kind, c, x):
    if kind == 0:
        return c[0] * x + c[1]
    if kind == 1:
        return c[0] if x <= c[2] else c[1]
    n = c.shape[0] // 2
    if x <= c[0]:
        return c[n]
    if x >= c[n - 1]:
        return c[2 * n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if c[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - c[lo]) / (c[hi] - c[lo])
    return c[n + lo] * (1.0 - w) + c[n + hi] * w


@njit(cache=True)
def _rate_deriv(kind, c, x):
    if kind == 0:
        return c[0]
    if kind == 1:
        return 0.0
    n = c.shape[0] // 2
    if x <= c[0] or x >= c[n - 1]:
        return 0.0
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if c[mid] <= x:
            lo = mid
        else:
            hi = mid
    return (c[n + hi] - c[n + lo]) / (c[hi] - c[lo])


@njit(cache=True)
def _q_eval(x, m, v, a, b, phik, phic, psik, psic):
    # conversion imbalance with u_a = m - x, u_b = x
    return (_rate_value(phik, phic, (x + v) / b) * x
            - _rate_value(psik, psic, (m - x) / a) * (m - x))


@njit(cache=True)
def _qprime_eval(x, m, v, a, b, phik, phic, psik, psic):
    s = (x + v) / b
    lam = (m - x) / a
    return (_rate_value(phik, phic, s) + (x / b) * _rate_deriv(phik, phic, s)
            + _rate_value(psik, psic, lam) + lam * _rate_deriv(psik, psic, lam))


@njit(cache=True)
def _midpoint_solve(u_b, m, v, hh, eps, a, b, phik, phic, psik, psic):
    """Implicit midpoint for u_b' = -q/eps: find x with 2(x-u_b)+(hh/eps)q(x)=0.

    q is strictly increasing in x, so g is too; for affine rates g is a
    quadratic in x with a single root in [0, m], taken in closed form.
    Otherwise safeguarded Newton on [0, m].  Returns (x, iters, fail).
    """
    if phik == 0 and psik == 0:
        he = hh / eps
        pk, pc = phic[0], phic[1]
        sk, sc = psic[0], psic[1]
        # g(x) = A x^2 + B x + C; B >= 2, g(0) <= 0 <= g(m), so the
        # bracketed root is C/qf with the stable quadratic formula
        A = he * (pk / b - sk / a)
        B = 2.0 + he * (pk * v / b + pc + 2.0 * sk * m / a + sc)
        C = -2.0 * u_b - he * (sk * m / a + sc) * m
        disc = B * B - 4.0 * A * C
        if disc < 0.0:
            disc = 0.0
        x = C / (-0.5 * (B + np.sqrt(disc)))
        if x < 0.0:
            x = 0.0
        elif x > m:
            x = m
        return x, 1, 0
    lo = 0.0
    hi = m
    x = u_b
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    iters = 0
    for _ in range(100):
        iters += 1
        g = 2.0 * (x - u_b) + (hh / eps) * _q_eval(x, m, v, a, b,
                                                   phik, phic, psik, psic)
        if g > 0.0:
            hi = x
        elif g < 0.0:
            lo = x
        else:
            return x, iters, 0
        if hi - lo <= 4e-16 * max(1.0, hi):
            return 0.5 * (lo + hi), iters, 0
        gp = 2.0 + (hh / eps) * _qprime_eval(x, m, v, a, b,
                                             phik, phic, psik, psic)
        x_new = x - g / gp
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-12 * max(1.0, abs(x)):
            return x_new, iters, 0
        x = x_new
    return x, iters, 1


@njit(cache=True)
def _fast_half(u_b, m, v, hh, eps, a, b, phik, phic, psik, psic):
    """Half-step of the fast conversion with a step-doubling error estimate.

    Propagates the fine (two quarter-step) result; est = |fine - coarse|/3.
    Returns (u_b_new, est, iters, fail).
    """
    xc, i1, f1 = _midpoint_solve(u_b, m, v, hh, eps, a, b,
                                 phik, phic, psik, psic)
    ub_c = 2.0 * xc - u_b
    x1, i2, f2 = _midpoint_solve(u_b, m, v, 0.5 * hh, eps, a, b,
                                 phik, phic, psik, psic)
    ub_1 = 2.0 * x1 - u_b
    x2, i3, f3 = _midpoint_solve(ub_1, m, v, 0.5 * hh, eps, a, b,
                                 phik, phic, psik, psic)
    ub_f = 2.0 * x2 - ub_1
    return ub_f, abs(ub_f - ub_c) / 3.0, i1 + i2 + i3, f1 + f2 + f3


@njit(cache=True)
def _slow_rhs(ua, ub, v, a, b, ea, eb, ev):
    s = (ub + v) / b
    return (ea * ua * (1.0 - ua / a),
            eb * ub * (1.0 - s),
            ev * v * (1.0 - s))


@njit(cache=True)
def _slow_rkf45(ua, ub, v, h, a, b, ea, eb, ev):
    """Fehlberg 4(5) step of the reaction part; returns 5th-order state + error."""
    k1a, k1b, k1v = _slow_rhs(ua, ub, v, a, b, ea, eb, ev)
    k2a, k2b, k2v = _slow_rhs(ua + h * 0.25 * k1a, ub + h * 0.25 * k1b,
                              v + h * 0.25 * k1v, a, b, ea, eb, ev)
    c31, c32 = 3.0 / 32.0, 9.0 / 32.0
    k3a, k3b, k3v = _slow_rhs(ua + h * (c31 * k1a + c32 * k2a),
                              ub + h * (c31 * k1b + c32 * k2b),
                              v + h * (c31 * k1v + c32 * k2v), a, b, ea, eb, ev)
    c41, c42, c43 = 1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0
    k4a, k4b, k4v = _slow_rhs(ua + h * (c41 * k1a + c42 * k2a + c43 * k3a),
                              ub + h * (c41 * k1b + c42 * k2b + c43 * k3b),
                              v + h * (c41 * k1v + c42 * k2v + c43 * k3v),
                              a, b, ea, eb, ev)
    c51, c52, c53, c54 = 439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0
    k5a, k5b, k5v = _slow_rhs(
        ua + h * (c51 * k1a + c52 * k2a + c53 * k3a + c54 * k4a),
        ub + h * (c51 * k1b + c52 * k2b + c53 * k3b + c54 * k4b),
        v + h * (c51 * k1v + c52 * k2v + c53 * k3v + c54 * k4v),
        a, b, ea, eb, ev)
    c61, c62, c63 = -8.0 / 27.0, 2.0, -3544.0 / 2565.0
    c64, c65 = 1859.0 / 4104.0, -11.0 / 40.0
    k6a, k6b, k6v = _slow_rhs(
        ua + h * (c61 * k1a + c62 * k2a + c63 * k3a + c64 * k4a + c65 * k5a),
        ub + h * (c61 * k1b + c62 * k2b + c63 * k3b + c64 * k4b + c65 * k5b),
        v + h * (c61 * k1v + c62 * k2v + c63 * k3v + c64 * k4v + c65 * k5v),
        a, b, ea, eb, ev)
    b1, b3, b4, b5, b6 = (16.0 / 135.0, 6656.0 / 12825.0, 28561.0 / 56430.0,
                          -9.0 / 50.0, 2.0 / 55.0)
    d1, d3, d4, d5 = 25.0 / 216.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2
    ya5 = ua + h * (b1 * k1a + b3 * k3a + b4 * k4a + b5 * k5a + b6 * k6a)
    yb5 = ub + h * (b1 * k1b + b3 * k3b + b4 * k4b + b5 * k5b + b6 * k6b)
    yv5 = v + h * (b1 * k1v + b3 * k3v + b4 * k4v + b5 * k5v + b6 * k6v)
    ya4 = ua + h * (d1 * k1a + d3 * k3a + d4 * k4a + d5 * k5a)
    yb4 = ub + h * (d1 * k1b + d3 * k3b + d4 * k4b + d5 * k5b)
    yv4 = v + h * (d1 * k1v + d3 * k3v + d4 * k4v + d5 * k5v)
    return ya5, yb5, yv5, abs(ya5 - ya4), abs(yb5 - yb4), abs(yv5 - yv4)


@njit(cache=True)
def meso_ode_kernel(t, ua, ub, v, t_end, a, b, ea, eb, ev, eps,
                    phik, phic, psik, psic,
                    rtol, atol, h, dt_min, dt_max,
                    err_prev, mass0, clipped, max_steps,
                    out_t, out_y, stats):
    """Resumable adaptive Strang loop: fast half / RKF45 reactions / fast half.

    Stores every accepted step into out_t/out_y until the buffer is full,
    then returns STATUS_FULL so the caller can grow the buffer and resume.
    stats (int64[4]): accepted, rejected, newton iters, clip events.
    Returns (status, n_stored, t, ua, ub, v, h, err_prev, clipped).
    """
    cap = out_t.shape[0]
    n = 0
    be1 = 0.7 / 3.0
    be2 = 0.4 / 3.0
    while t < t_end:
        if stats[0] + stats[1] >= max_steps:
            return STATUS_MAX_STEPS, n, t, ua, ub, v, h, err_prev, clipped
        if n >= cap:
            return STATUS_FULL, n, t, ua, ub, v, h, err_prev, clipped
        qp = _qprime_eval(ub, ua + ub, v, a, b, phik, phic, psik, psic)
        h_cap = 2.0 * Z_CAP * eps / max(qp, 1e-300)
        h_try = min(h, dt_max, h_cap)
        clamped = h_try >= t_end - t
        if clamped:
            h_try = t_end - t
        m = ua + ub

        # defaults keep every local defined on the reject paths
        m2 = m
        v2 = v
        ub2 = ub
        est_f2 = 0.0
        ea_s = 0.0
        eb_s = 0.0
        ev_s = 0.0
        ub1, est_f1, it1, fail = _fast_half(ub, m, v, 0.5 * h_try, eps,
                                            a, b, phik, phic, psik, psic)
        stats[2] += it1
        ok = fail == 0 and ub1 > _NEG_TOL and ub1 < m - _NEG_TOL
        if ok:
            ua1 = m - ub1
            ya, yb, yv, ea_s, eb_s, ev_s = _slow_rkf45(
                ua1, ub1, v, h_try, a, b, ea, eb, ev)
            m2 = ya + yb
            v2 = yv
            ok = yb > _NEG_TOL and yv > _NEG_TOL and ya > _NEG_TOL
            if ok:
                ub2, est_f2, it2, fail2 = _fast_half(
                    yb, m2, yv, 0.5 * h_try, eps, a, b,
                    phik, phic, psik, psic)
                stats[2] += it2
                ok = fail2 == 0 and ub2 > _NEG_TOL and ub2 < m2 - _NEG_TOL
        if not ok:
            stats[1] += 1
            h = 0.5 * h_try
            if h < dt_min:
                return STATUS_NEGATIVE, n, t, ua, ub, v, h, err_prev, clipped
            continue
        ua2 = m2 - ub2
        err_f = est_f1 + est_f2
        err_norm = 0.0
        e0 = (ea_s + err_f) / (atol + rtol * max(abs(ua), abs(ua2)))
        e1 = (eb_s + err_f) / (atol + rtol * max(abs(ub), abs(ub2)))
        e2 = ev_s / (atol + rtol * max(abs(v), abs(v2)))
        err_norm = max(e0, max(e1, e2))
        if err_norm > 1.0:
            stats[1] += 1
            fac = 0.9 * err_norm ** (-1.0 / 3.0)
            if fac < 0.2:
                fac = 0.2
            h = h_try * fac
            if h < dt_min:
                return STATUS_DT_UNDERFLOW, n, t, ua, ub, v, h, err_prev, clipped
            continue
        # accept; clip tiny undershoot inside tolerance
        if ua2 < 0.0:
            clipped += -ua2
            ua2 = 0.0
            stats[3] += 1
        if ub2 < 0.0:
            clipped += -ub2
            ub2 = 0.0
            stats[3] += 1
        if v2 < 0.0:
            clipped += -v2
            v2 = 0.0
            stats[3] += 1
        if clipped > 1e-8 * mass0:
            return STATUS_NEGATIVE, n, t, ua, ub, v, h, err_prev, clipped
        t = t_end if clamped else t + h_try
        ua, ub, v = ua2, ub2, v2
        out_t[n] = t
        out_y[n, 0] = ua
        out_y[n, 1] = ub
        out_y[n, 2] = v
        n += 1
        stats[0] += 1
        if err_norm == 0.0:
            fac = 5.0
        else:
            fac = 0.9 * err_norm ** (-be1) * err_prev ** be2
            if fac > 5.0:
                fac = 5.0
            elif fac < 0.2:
                fac = 0.2
        h = h_try * fac
        err_prev = max(err_norm, 1e-10)
    return STATUS_DONE, n, t, ua, ub, v, h, err_prev, clipped


@njit(cache=True)
def _lap_i(f, i, n):
    # second difference with mirror ghosts (zero normal derivative);
    # caller divides by dx^2
    if i == 0:
        return f[1] - f[0]
    if i == n - 1:
        return f[n - 2] - f[n - 1]
    return f[i - 1] - 2.0 * f[i] + f[i + 1]


@njit(cache=True)
def _meso_stage(ua, ub, v, ka, kb, kv, n, inv_dx2,
                a, b, ea, eb, ev, da, db, dvv):
    for i in range(n):
        s = 1.0 - (ub[i] + v[i]) / b
        ka[i] = da * _lap_i(ua, i, n) * inv_dx2 + ea * ua[i] * (1.0 - ua[i] / a)
        kb[i] = db * _lap_i(ub, i, n) * inv_dx2 + eb * ub[i] * s
        kv[i] = dvv * _lap_i(v, i, n) * inv_dx2 + ev * v[i] * s


@njit(cache=True)
def meso_pde_segment(ua, ub, v, dx, dt, nsteps,
                     a, b, ea, eb, ev, da, db, dvv, eps,
                     phik, phic, psik, psic, mass0, clipped0, stats):
    """Advance nsteps fixed-dt Strang steps in place: per-cell implicit
    midpoint conversion half-step, classical RK4 on diffusion+reactions,
    conversion half-step.

    stats (int64[2]): newton iters, clip events.
    Returns (status, qsq_add, clipped, vmin, vmax); qsq_add accumulates
    dt*dx*sum(Q^2) at step ends (rectangle rule).
    """
    n = ua.shape[0]
    inv_dx2 = 1.0 / (dx * dx)
    half = 0.5 * dt
    k1a = np.empty(n); k1b = np.empty(n); k1v = np.empty(n)
    k2a = np.empty(n); k2b = np.empty(n); k2v = np.empty(n)
    k3a = np.empty(n); k3b = np.empty(n); k3v = np.empty(n)
    k4a = np.empty(n); k4b = np.empty(n); k4v = np.empty(n)
    ya = np.empty(n); yb = np.empty(n); yv = np.empty(n)
    qsq = 0.0
    clipped = clipped0
    vmin = 1e300
    vmax = -1e300
    for _ in range(nsteps):
        for i in range(n):
            m = ua[i] + ub[i]
            x, it, fail = _midpoint_solve(ub[i], m, v[i], half, eps,
                                          a, b, phik, phic, psik, psic)
            stats[0] += it
            if fail != 0:
                return STATUS_NEWTON_FAIL, qsq, clipped, vmin, vmax
            ubn = 2.0 * x - ub[i]
            if ubn < _NEG_TOL or ubn > m - _NEG_TOL:
                return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
            if ubn < 0.0:
                clipped += -ubn
                ubn = 0.0
                stats[1] += 1
            ub[i] = ubn
            ua[i] = m - ubn
        _meso_stage(ua, ub, v, k1a, k1b, k1v, n, inv_dx2,
                    a, b, ea, eb, ev, da, db, dvv)
        for i in range(n):
            ya[i] = ua[i] + half * k1a[i]
            yb[i] = ub[i] + half * k1b[i]
            yv[i] = v[i] + half * k1v[i]
        _meso_stage(ya, yb, yv, k2a, k2b, k2v, n, inv_dx2,
                    a, b, ea, eb, ev, da, db, dvv)
        for i in range(n):
            ya[i] = ua[i] + half * k2a[i]
            yb[i] = ub[i] + half * k2b[i]
            yv[i] = v[i] + half * k2v[i]
        _meso_stage(ya, yb, yv, k3a, k3b, k3v, n, inv_dx2,
                    a, b, ea, eb, ev, da, db, dvv)
        for i in range(n):
            ya[i] = ua[i] + dt * k3a[i]
            yb[i] = ub[i] + dt * k3b[i]
            yv[i] = v[i] + dt * k3v[i]
        _meso_stage(ya, yb, yv, k4a, k4b, k4v, n, inv_dx2,
                    a, b, ea, eb, ev, da, db, dvv)
        sixth = dt / 6.0
        for i in range(n):
            ua[i] += sixth * (k1a[i] + 2.0 * (k2a[i] + k3a[i]) + k4a[i])
            ub[i] += sixth * (k1b[i] + 2.0 * (k2b[i] + k3b[i]) + k4b[i])
            v[i] += sixth * (k1v[i] + 2.0 * (k2v[i] + k3v[i]) + k4v[i])
            # the conversion half-step needs ub in [0, m]; clip RK4
            # undershoot within tolerance before re-entering it
            if ua[i] < 0.0:
                if ua[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
                clipped += -ua[i]
                ua[i] = 0.0
                stats[1] += 1
            if ub[i] < 0.0:
                if ub[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
                clipped += -ub[i]
                ub[i] = 0.0
                stats[1] += 1
            if v[i] < 0.0:
                if v[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
                clipped += -v[i]
                v[i] = 0.0
                stats[1] += 1
        for i in range(n):
            m = ua[i] + ub[i]
            x, it, fail = _midpoint_solve(ub[i], m, v[i], half, eps,
                                          a, b, phik, phic, psik, psic)
            stats[0] += it
            if fail != 0:
                return STATUS_NEWTON_FAIL, qsq, clipped, vmin, vmax
            ubn = 2.0 * x - ub[i]
            if ubn < _NEG_TOL or ubn > m - _NEG_TOL:
                return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
            if ubn < 0.0:
                clipped += -ubn
                ubn = 0.0
                stats[1] += 1
            ub[i] = ubn
            ua[i] = m - ubn
        for i in range(n):
            if v[i] < vmin:
                vmin = v[i]
            if v[i] > vmax:
                vmax = v[i]
            if ua[i] < 0.0:
                if ua[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
                clipped += -ua[i]
                ua[i] = 0.0
                stats[1] += 1
            if v[i] < 0.0:
                if v[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
                clipped += -v[i]
                v[i] = 0.0
                stats[1] += 1
            q = _q_eval(ub[i], ua[i] + ub[i], v[i], a, b,
                        phik, phic, psik, psic)
            qsq += dt * dx * q * q
        if clipped > 1e-8 * mass0:
            return STATUS_NEGATIVE, qsq, clipped, vmin, vmax
    return STATUS_DONE, qsq, clipped, vmin, vmax


@njit(cache=True)
def _closure_cell(m, v, x0, a, b, phik, phic, psik, psic, tol):
    """Solve the conversion balance q(x) = 0 for x in [0, m], warm start x0.

    q is strictly increasing; a quadratic in x for affine rates (closed
    form), safeguarded Newton otherwise.  Returns (x, iters, fail).
    """
    if m <= 0.0:
        return 0.0, 0, 0
    if phik == 0 and psik == 0:
        pk, pc = phic[0], phic[1]
        sk, sc = psic[0], psic[1]
        # q(x) = A x^2 + B x + C with B > 0, q(0) <= 0 <= q(m)
        A = pk / b - sk / a
        B = pk * v / b + pc + 2.0 * sk * m / a + sc
        C = -(sk * m / a + sc) * m
        disc = B * B - 4.0 * A * C
        if disc < 0.0:
            disc = 0.0
        x = C / (-0.5 * (B + np.sqrt(disc)))
        if x < 0.0:
            x = 0.0
        elif x > m:
            x = m
        return x, 1, 0
    s1 = _rate_value(phik, phic, (m + v) / b) * m
    s2 = _rate_value(psik, psic, m / a) * m
    scale = max(1.0, max(s1, s2))
    lo = 0.0
    hi = m
    x = x0
    if not (lo < x < hi):
        x = 0.5 * m
    iters = 0
    for _ in range(100):
        iters += 1
        q = _q_eval(x, m, v, a, b, phik, phic, psik, psic)
        if abs(q) <= tol * scale:
            return x, iters, 0
        if q < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4e-16 * max(1.0, hi):
            return 0.5 * (lo + hi), iters, 0
        qp = _qprime_eval(x, m, v, a, b, phik, phic, psik, psic)
        x_new = x - q / qp
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x = x_new
    return x, iters, 1


@njit(cache=True)
def _macro_stage(u, v, ubw, w, ku, kv, n, inv_dx2,
                 a, b, ea, eb, ev, da, db, dvv, tol,
                 phik, phic, psik, psic, mirror_u, stats):
    """One macro stage derivative: per-cell closure, composite flux w,
    mirrored laplacians.  Returns 0 on success, 1 on closure failure."""
    for i in range(n):
        uu = u[i] if u[i] > 0.0 else 0.0
        vv = v[i] if v[i] > 0.0 else 0.0
        x, it, fail = _closure_cell(uu, vv, ubw[i], a, b,
                                    phik, phic, psik, psic, tol)
        stats[0] += it
        if fail != 0:
            return 1
        ubw[i] = x
        w[i] = da * (uu - x) + db * x
        uaa = uu - x
        s = 1.0 - (x + vv) / b
        ku[i] = ea * uaa * (1.0 - uaa / a) + eb * x * s
        kv[i] = ev * vv * s
    for i in range(n):
        ku[i] += _lap_i(w, i, n) * inv_dx2
        kv[i] += dvv * _lap_i(v, i, n) * inv_dx2
    if mirror_u != 0:
        # alternative boundary closure: ghost cells mirror the primitive
        # fields (u, v) and w is evaluated at the ghost state, instead of
        # mirroring the composite flux w itself
        u0 = u[0] if u[0] > 0.0 else 0.0
        v0 = v[0] if v[0] > 0.0 else 0.0
        xg, it, fail = _closure_cell(u0, v0, ubw[0], a, b,
                                     phik, phic, psik, psic, tol)
        stats[0] += it
        if fail != 0:
            return 1
        wg = da * (u0 - xg) + db * xg
        ku[0] += (wg - w[0]) * inv_dx2
        un = u[n - 1] if u[n - 1] > 0.0 else 0.0
        vn = v[n - 1] if v[n - 1] > 0.0 else 0.0
        xg, it, fail = _closure_cell(un, vn, ubw[n - 1], a, b,
                                     phik, phic, psik, psic, tol)
        stats[0] += it
        if fail != 0:
            return 1
        wg = da * (un - xg) + db * xg
        ku[n - 1] += (wg - w[n - 1]) * inv_dx2
    return 0


@njit(cache=True)
def macro_pde_segment(u, v, ubw, dx, dt, nsteps,
                      a, b, ea, eb, ev, da, db, dvv, tol,
                      phik, phic, psik, psic, mirror_u,
                      mass0, clipped0, stats):
    """Advance nsteps fixed-dt RK4 steps of the cross-diffusion limit
    system in place.  ubw carries warm starts for the per-cell closure.

    Returns (status, clipped, vmin, vmax).
    """
    n = u.shape[0]
    inv_dx2 = 1.0 / (dx * dx)
    half = 0.5 * dt
    k1u = np.empty(n); k1v = np.empty(n)
    k2u = np.empty(n); k2v = np.empty(n)
    k3u = np.empty(n); k3v = np.empty(n)
    k4u = np.empty(n); k4v = np.empty(n)
    yu = np.empty(n); yv = np.empty(n)
    w = np.empty(n)
    clipped = clipped0
    vmin = 1e300
    vmax = -1e300
    for _ in range(nsteps):
        if _macro_stage(u, v, ubw, w, k1u, k1v, n, inv_dx2, a, b, ea, eb, ev,
                        da, db, dvv, tol, phik, phic, psik, psic,
                        mirror_u, stats) != 0:
            return STATUS_NEWTON_FAIL, clipped, vmin, vmax
        for i in range(n):
            yu[i] = u[i] + half * k1u[i]
            yv[i] = v[i] + half * k1v[i]
        if _macro_stage(yu, yv, ubw, w, k2u, k2v, n, inv_dx2, a, b, ea, eb,
                        ev, da, db, dvv, tol, phik, phic, psik, psic,
                        mirror_u, stats) != 0:
            return STATUS_NEWTON_FAIL, clipped, vmin, vmax
        for i in range(n):
            yu[i] = u[i] + half * k2u[i]
            yv[i] = v[i] + half * k2v[i]
        if _macro_stage(yu, yv, ubw, w, k3u, k3v, n, inv_dx2, a, b, ea, eb,
                        ev, da, db, dvv, tol, phik, phic, psik, psic,
                        mirror_u, stats) != 0:
            return STATUS_NEWTON_FAIL, clipped, vmin, vmax
        for i in range(n):
            yu[i] = u[i] + dt * k3u[i]
            yv[i] = v[i] + dt * k3v[i]
        if _macro_stage(yu, yv, ubw, w, k4u, k4v, n, inv_dx2, a, b, ea, eb,
                        ev, da, db, dvv, tol, phik, phic, psik, psic,
                        mirror_u, stats) != 0:
            return STATUS_NEWTON_FAIL, clipped, vmin, vmax
        sixth = dt / 6.0
        for i in range(n):
            u[i] += sixth * (k1u[i] + 2.0 * (k2u[i] + k3u[i]) + k4u[i])
            v[i] += sixth * (k1v[i] + 2.0 * (k2v[i] + k3v[i]) + k4v[i])
        for i in range(n):
            if v[i] < vmin:
                vmin = v[i]
            if v[i] > vmax:
                vmax = v[i]
            if u[i] < 0.0:
                if u[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, clipped, vmin, vmax
                clipped += -u[i]
                u[i] = 0.0
                stats[1] += 1
            if v[i] < 0.0:
                if v[i] < _NEG_TOL:
                    return STATUS_NEGATIVE, clipped, vmin, vmax
                clipped += -v[i]
                v[i] = 0.0
                stats[1] += 1
        if clipped > 1e-8 * mass0:
            return STATUS_NEGATIVE, clipped, vmin, vmax
    return STATUS_DONE, clipped, vmin, vmax

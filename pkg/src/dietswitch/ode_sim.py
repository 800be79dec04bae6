"""Adaptive time integration of the spatially homogeneous systems.

Three integrators share one error-control discipline (componentwise local
error <= atol + rtol*scale, PI step controller):

* meso: Strang splitting around the 1/eps conversion term.  The fast
  sub-flow conserves u_a+u_b and v, so it reduces to a scalar monotone ODE
  in u_b solved by implicit midpoint (Newton, bracketed), with a
  step-doubling error estimate; the reaction part runs through an embedded
  Fehlberg 4(5) pair.  A step cap keeps the midpoint inside its strongly
  damped region, so the stiff term never rings.
* macro: plain embedded RKF45; every right-hand side evaluates the closure
  root u_b*(u, v) and splits u accordingly.
* micro: nested splitting with backward-Euler resource and conversion
  blocks (closed-form quadratic resp. scalar Newton) around the exactly
  integrated frozen-resource growth flow; whole-step doubling drives the
  controller.  Backward Euler lands on the quasi-steady manifold for large
  steps, matching the continuous slow-manifold behavior.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels, model_core
from .errors import (
    DomainError,
    NegativeStateBeyondTolerance,
    NoConvergence,
    StepSizeUnderflow,
    ValidationError,
)

_NEG_TOL = -1e-12
_CLIP_BUDGET = 1e-8  # times initial mass


@dataclass(frozen=True)
class Controls:
    """Integrator knobs; defaults match the documented error contract."""

    rtol: float = 1e-8
    atol: float = 1e-12
    dt_init: float = None
    dt_min: float = None
    dt_max: float = math.inf
    max_steps: int = 50_000_000
    cfl: float = 0.8            # PDE modes only
    tol_closure: float = 1e-12  # macro closure root tolerance

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol >= 0):
            raise ValidationError("rtol must be > 0 and atol >= 0")
        if not (0 < self.cfl <= 1):
            raise ValidationError(f"cfl must be in (0, 1], got {self.cfl}")


@dataclass(frozen=True)
class OdeTrajectory:
    times: np.ndarray
    states: np.ndarray  # shape (n_times, n_components)
    scheme: str
    columns: tuple
    stats: dict

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("times must be strictly increasing")

    @property
    def final(self):
        return self.states[-1]

    def sample(self, ts):
        """Piecewise-linear readout at the given times."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty((ts.size, self.states.shape[1]))
        for j in range(self.states.shape[1]):
            out[:, j] = np.interp(ts, self.times, self.states[:, j])
        return out

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(("t",) + tuple(self.columns)) + "\n")
            for i in range(self.times.size):
                row = [format(self.times[i], ".17g")]
                row.extend(format(x, ".17g") for x in self.states[i])
                fh.write(",".join(row) + "\n")


def _default_controls(controls):
    return controls if controls is not None else Controls()


def _dt_min(controls, t_end):
    if controls.dt_min is not None:
        return controls.dt_min
    return 1e-13 * max(1.0, t_end)


def _scalar_state(init, cls, names):
    if cls is not None and isinstance(init, cls):
        vals = [getattr(init, n) for n in names]
    else:
        vals = list(init)
        if len(vals) != len(names):
            raise ValidationError(
                f"expected {len(names)} components {names}, got {len(vals)}")
    out = []
    for n, x in zip(names, vals):
        if np.size(x) != 1:
            raise ValidationError(f"{n} must be scalar for ODE integration")
        x = float(x)
        if x < _NEG_TOL:
            raise ValidationError(f"{n} must be nonnegative, got {x}")
        out.append(max(x, 0.0))
    return out


def _pi_factor(err_norm, err_prev, p_loc):
    if err_norm == 0.0:
        return 5.0
    fac = 0.9 * err_norm ** (-0.7 / p_loc) * err_prev ** (0.4 / p_loc)
    return min(5.0, max(0.2, fac))


def _reject_factor(err_norm, p_loc):
    return max(0.2, 0.9 * err_norm ** (-1.0 / p_loc))


# ---------------------------------------------------------------------------
# mesoscopic system
# ---------------------------------------------------------------------------

def _py_midpoint_solve(params, phi, psi, u_b, m, v, hh, eps):
    """Scalar implicit midpoint for the conversion flow (python fallback)."""
    lo, hi = 0.0, m
    # Warped microscopic rates have a bounded domain; trial brackets must
    # not probe beyond it, so restrict to the admissible crowding slice.
    cap_phi = getattr(phi, "x_cap", None)
    cap_psi = getattr(psi, "x_cap", None)
    if cap_phi is not None:
        hi = min(hi, params.b * cap_phi * (1.0 - 1e-9) - v)
    if cap_psi is not None:
        lo = max(lo, m - params.a * cap_psi * (1.0 - 1e-9))
    if not lo < hi:
        raise DomainError(
            "conversion solve: no admissible crowding slice within the "
            "rate domains at this state")
    if lo > 0.0 or hi < m:
        # shrunk bracket: confirm the root is interior before iterating
        def _g(x):
            return 2.0 * (x - u_b) + (hh / eps) * model_core.eval_Q(
                params, phi, psi, m - x, x, v)
        if _g(lo) > 0.0 or _g(hi) < 0.0:
            raise DomainError(
                "conversion solve: root pinned at the warped-rate domain "
                "boundary")
    x = u_b if lo < u_b < hi else 0.5 * (lo + hi)
    iters = 0
    for _ in range(100):
        iters += 1
        g = 2.0 * (x - u_b) + (hh / eps) * model_core.eval_Q(
            params, phi, psi, m - x, x, v)
        if g > 0.0:
            hi = x
        elif g < 0.0:
            lo = x
        else:
            return x, iters
        if hi - lo <= 4e-16 * max(1.0, hi):
            return 0.5 * (lo + hi), iters
        beta, gamma, _ = model_core.closure_partials(
            params, phi, psi, m - x, x, v)
        x_new = x - g / (2.0 + (hh / eps) * (beta + gamma))
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-12 * max(1.0, abs(x)):
            return x_new, iters
        x = x_new
    raise NoConvergence("conversion midpoint solve did not converge")


def _py_fast_half(params, phi, psi, u_b, m, v, hh, eps):
    xc, i1 = _py_midpoint_solve(params, phi, psi, u_b, m, v, hh, eps)
    ub_c = 2.0 * xc - u_b
    x1, i2 = _py_midpoint_solve(params, phi, psi, u_b, m, v, 0.5 * hh, eps)
    ub_1 = 2.0 * x1 - u_b
    x2, i3 = _py_midpoint_solve(params, phi, psi, ub_1, m, v, 0.5 * hh, eps)
    ub_f = 2.0 * x2 - ub_1
    return ub_f, abs(ub_f - ub_c) / 3.0, i1 + i2 + i3


_RKF_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_RKF_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)


def _rkf45_step(rhs, y, h):
    """One embedded Fehlberg 4(5) step; returns (y5, componentwise |y5-y4|)."""
    k = [rhs(y)]
    for row in _RKF_A[1:]:
        yi = y + h * sum(c * ki for c, ki in zip(row, k))
        k.append(rhs(yi))
    incr5 = sum(b * ki for b, ki in zip(_RKF_B5, k))
    incr4 = sum(b * ki for b, ki in zip(_RKF_B4, k))
    return y + h * incr5, h * np.abs(incr5 - incr4)


def _meso_python_loop(params, phi, psi, y0, t_end, controls, h0, dtmin):
    eps = params.epsilon
    t = 0.0
    ua, ub, v = y0
    mass0 = ua + ub + v
    h = h0
    err_prev = 1e-4
    clipped = 0.0
    acc = rej = newton = clips = 0
    ts, ys = [0.0], [(ua, ub, v)]

    def slow_rhs(y):
        fa, fb, fv = model_core.eval_reactions(params, y[0], y[1], y[2])
        return np.array([fa, fb, fv])

    while t < t_end:
        if acc + rej >= controls.max_steps:
            raise NoConvergence("max_steps exceeded")
        beta, gamma, _ = model_core.closure_partials(params, phi, psi, ua, ub, v)
        h_cap = 2.0 * _kernels.Z_CAP * eps / max(beta + gamma, 1e-300)
        h_try = min(h, controls.dt_max, h_cap)
        clamped = h_try >= t_end - t
        if clamped:
            h_try = t_end - t
        m = ua + ub
        try:
            ub1, ef1, it = _py_fast_half(params, phi, psi, ub, m, v,
                                         0.5 * h_try, eps)
        except NoConvergence:
            rej += 1
            h = 0.5 * h_try
            if h < dtmin:
                raise
            continue
        newton += it
        bad = not (_NEG_TOL < ub1 < m - _NEG_TOL)
        if not bad:
            y_s, err_s = _rkf45_step(slow_rhs, np.array([m - ub1, ub1, v]),
                                     h_try)
            bad = bool(np.any(y_s < _NEG_TOL))
        if not bad:
            m2 = y_s[0] + y_s[1]
            ub2, ef2, it2 = _py_fast_half(params, phi, psi, y_s[1], m2,
                                          y_s[2], 0.5 * h_try, eps)
            newton += it2
            bad = not (_NEG_TOL < ub2 < m2 - _NEG_TOL)
        if bad:
            rej += 1
            h = 0.5 * h_try
            if h < dtmin:
                raise NegativeStateBeyondTolerance(
                    f"state left [0, inf) beyond tolerance near t={t}")
            continue
        ua2, v2 = m2 - ub2, y_s[2]
        ef = ef1 + ef2
        err = np.array([err_s[0] + ef, err_s[1] + ef, err_s[2]])
        new = np.array([ua2, ub2, v2])
        old = np.array([ua, ub, v])
        sc = controls.atol + controls.rtol * np.maximum(np.abs(old),
                                                        np.abs(new))
        err_norm = float(np.max(err / sc))
        if err_norm > 1.0:
            rej += 1
            h = h_try * _reject_factor(err_norm, 3)
            if h < dtmin:
                raise StepSizeUnderflow(
                    f"step size {h} below {dtmin} at t={t}")
            continue
        for i in range(3):
            if new[i] < 0.0:
                clipped += -new[i]
                new[i] = 0.0
                clips += 1
        if clipped > _CLIP_BUDGET * mass0:
            raise NegativeStateBeyondTolerance(
                f"cumulative clipped mass {clipped} exceeds budget")
        t = t_end if clamped else t + h_try
        ua, ub, v = new
        ts.append(t)
        ys.append((ua, ub, v))
        acc += 1
        h = h_try * _pi_factor(err_norm, err_prev, 3)
        err_prev = max(err_norm, 1e-10)
    stats = {"steps_accepted": acc, "steps_rejected": rej,
             "newton_iters": newton, "clip_events": clips,
             "clipped_mass": clipped}
    return np.array(ts), np.array(ys), stats


def _meso_kernel_loop(params, phi, psi, y0, t_end, controls, h0, dtmin,
                      phi_enc, psi_enc):
    phik, phic = int(phi_enc[0]), np.ascontiguousarray(phi_enc[1], dtype=float)
    psik, psic = int(psi_enc[0]), np.ascontiguousarray(psi_enc[1], dtype=float)
    t, (ua, ub, v) = 0.0, y0
    mass0 = ua + ub + v
    h, err_prev, clipped = h0, 1e-4, 0.0
    stats = np.zeros(4, dtype=np.int64)
    chunks_t, chunks_y = [np.array([0.0])], [np.array([[ua, ub, v]])]
    cap = 65536
    while True:
        out_t = np.empty(cap)
        out_y = np.empty((cap, 3))
        status, n, t, ua, ub, v, h, err_prev, clipped = _kernels.meso_ode_kernel(
            t, ua, ub, v, t_end,
            params.a, params.b, params.eta_a, params.eta_b, params.eta_v,
            params.epsilon, phik, phic, psik, psic,
            controls.rtol, controls.atol, h, dtmin,
            controls.dt_max, err_prev, mass0, clipped,
            controls.max_steps, out_t, out_y, stats)
        if n:
            chunks_t.append(out_t[:n].copy())
            chunks_y.append(out_y[:n].copy())
        if status == _kernels.STATUS_FULL:
            cap = min(cap * 4, 4_000_000)
            continue
        if status == _kernels.STATUS_DONE:
            break
        if status == _kernels.STATUS_DT_UNDERFLOW:
            raise StepSizeUnderflow(f"step size {h} below {dtmin} at t={t}")
        if status == _kernels.STATUS_NEGATIVE:
            raise NegativeStateBeyondTolerance(
                f"negativity beyond tolerance near t={t}")
        if status == _kernels.STATUS_NEWTON_FAIL:
            raise NoConvergence("conversion midpoint solve did not converge")
        raise NoConvergence("max_steps exceeded")
    sdict = {"steps_accepted": int(stats[0]), "steps_rejected": int(stats[1]),
             "newton_iters": int(stats[2]), "clip_events": int(stats[3]),
             "clipped_mass": float(clipped)}
    return np.concatenate(chunks_t), np.concatenate(chunks_y), sdict


def integrate_meso_ode(params, phi, psi, init, t_end, controls=None):
    """Integrate du_a/dt = f_a + Q/eps, du_b/dt = f_b - Q/eps, dv/dt = f_v."""
    controls = _default_controls(controls)
    if params.epsilon is None or not params.epsilon > 0:
        raise ValidationError("params.epsilon must be a positive number")
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end}")
    y0 = _scalar_state(init, model_core.MesoState, ("u_a", "u_b", "v"))
    dtmin = _dt_min(controls, t_end)
    h0 = controls.dt_init if controls.dt_init is not None else min(
        1e-2, params.epsilon)
    h0 = min(h0, controls.dt_max, t_end)

    phi_enc = phi.kernel_encoding()
    psi_enc = psi.kernel_encoding()
    if _kernels.HAVE_NUMBA and phi_enc is not None and psi_enc is not None:
        ts, ys, stats = _meso_kernel_loop(params, phi, psi, y0, t_end,
                                          controls, h0, dtmin,
                                          phi_enc, psi_enc)
    else:
        ts, ys, stats = _meso_python_loop(params, phi, psi, y0, t_end,
                                          controls, h0, dtmin)
    return OdeTrajectory(times=ts, states=ys, scheme="meso_strang_rkf45",
                         columns=("u_a", "u_b", "v"), stats=stats)


# ---------------------------------------------------------------------------
# macroscopic system
# ---------------------------------------------------------------------------

def integrate_macro_ode(params, phi, psi, init, t_end, controls=None):
    """Integrate the closed (u, v) system; u_b* is resolved at every stage."""
    controls = _default_controls(controls)
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end}")
    u0, v0 = _scalar_state(init, model_core.MacroState, ("u", "v"))
    dtmin = _dt_min(controls, t_end)
    h = controls.dt_init if controls.dt_init is not None else min(
        1e-2, t_end / 10.0)
    h = min(h, controls.dt_max, t_end)

    def rhs(y):
        u, v = max(y[0], 0.0), max(y[1], 0.0)
        ub = model_core.solve_ub_star(params, phi, psi, u, v,
                                      tol=controls.tol_closure)
        fa, fb, fv = model_core.eval_reactions(params, u - ub, ub, v)
        return np.array([fa + fb, fv])

    t, y = 0.0, np.array([u0, v0])
    mass0 = u0 + v0
    err_prev, clipped = 1e-4, 0.0
    acc = rej = clips = 0
    ts, ys = [0.0], [y.copy()]
    while t < t_end:
        if acc + rej >= controls.max_steps:
            raise NoConvergence("max_steps exceeded")
        h_try = min(h, controls.dt_max)
        clamped = h_try >= t_end - t
        if clamped:
            h_try = t_end - t
        y_new, err = _rkf45_step(rhs, y, h_try)
        if np.any(y_new < _NEG_TOL):
            rej += 1
            h = 0.5 * h_try
            if h < dtmin:
                raise NegativeStateBeyondTolerance(
                    f"state went negative beyond tolerance near t={t}")
            continue
        sc = controls.atol + controls.rtol * np.maximum(np.abs(y),
                                                        np.abs(y_new))
        err_norm = float(np.max(err / sc))
        if err_norm > 1.0:
            rej += 1
            h = h_try * _reject_factor(err_norm, 5)
            if h < dtmin:
                raise StepSizeUnderflow(f"step size {h} below {dtmin} at t={t}")
            continue
        for i in range(2):
            if y_new[i] < 0.0:
                clipped += -y_new[i]
                y_new[i] = 0.0
                clips += 1
        if clipped > _CLIP_BUDGET * max(mass0, controls.atol):
            raise NegativeStateBeyondTolerance(
                f"cumulative clipped mass {clipped} exceeds budget")
        t = t_end if clamped else t + h_try
        y = y_new
        ts.append(t)
        ys.append(y.copy())
        acc += 1
        h = h_try * _pi_factor(err_norm, err_prev, 5)
        err_prev = max(err_norm, 1e-10)
    stats = {"steps_accepted": acc, "steps_rejected": rej, "newton_iters": 0,
             "clip_events": clips, "clipped_mass": clipped}
    return OdeTrajectory(times=np.array(ts), states=np.array(ys),
                         scheme="macro_rkf45", columns=("u", "v"), stats=stats)


# ---------------------------------------------------------------------------
# microscopic system
# ---------------------------------------------------------------------------

def _be_resource(s, consumption, r, A, delta, h):
    """Backward Euler for s' = (s/delta)*((r - consumption) - (r/A)*s).

    Closed form: positive root of (h*r/A)*x^2 + (delta - h*c)*x - delta*s.
    """
    c = r - consumption
    aq = h * r / A
    bq = delta - h * c
    gq = -delta * s
    disc = bq * bq - 4.0 * aq * gq
    root = math.sqrt(disc)
    if bq > 0.0:
        return -2.0 * gq / (bq + root)
    return (-bq + root) / (2.0 * aq)


def _be_conversion(micro, U2, MU, V, s1, s2, h):
    """Backward Euler for the conversion exchange; scalar Newton on U2."""
    eps = micro.epsilon

    def conv(x):
        arg2 = (micro.p2 * x + micro.pV * V) / s2
        arg1 = micro.p1 * (MU - x) / s1
        return (micro.Phi.value(arg2) * x - micro.Psi.value(arg1) * (MU - x))

    def conv_prime(x):
        arg2 = (micro.p2 * x + micro.pV * V) / s2
        arg1 = micro.p1 * (MU - x) / s1
        return (micro.Phi.value(arg2) + x * micro.Phi.derivative(arg2)
                * micro.p2 / s2
                + micro.Psi.value(arg1)
                + (MU - x) * micro.Psi.derivative(arg1) * micro.p1 / s1)

    lo, hi = 0.0, MU
    x = U2 if 0.0 < U2 < MU else 0.5 * MU
    iters = 0
    for _ in range(100):
        iters += 1
        g = (x - U2) + (h / eps) * conv(x)
        if g > 0.0:
            hi = x
        elif g < 0.0:
            lo = x
        else:
            return x, iters
        if hi - lo <= 4e-16 * max(1.0, hi):
            return 0.5 * (lo + hi), iters
        x_new = x - g / (1.0 + (h / eps) * conv_prime(x))
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-12 * max(1.0, abs(x)):
            return x_new, iters
        x = x_new
    raise NoConvergence("micro conversion solve did not converge")


def _micro_strang_step(micro, y, h):
    """One composite step: stiff half, exact frozen-resource growth, stiff half."""
    s1, s2, U1, U2, V = y
    iters = 0
    for half in (0.5 * h, None, 0.5 * h):
        if half is None:
            # growth is linear in (U1, U2, V) once resources are frozen
            U1 *= math.exp(micro.k1 * micro.p1 * s1 * h)
            U2 *= math.exp(micro.k2 * micro.p2 * s2 * h)
            V *= math.exp(micro.kV * micro.pV * s2 * h)
            continue
        s1 = _be_resource(s1, micro.p1 * U1, micro.r1, micro.A1,
                          micro.delta, half)
        s2 = _be_resource(s2, micro.p2 * U2 + micro.pV * V, micro.r2,
                          micro.A2, micro.delta, half)
        MU = U1 + U2
        U2, it = _be_conversion(micro, U2, MU, V, s1, s2, half)
        U1 = MU - U2
        iters += it
    return np.array([s1, s2, U1, U2, V]), iters


def integrate_micro_ode(micro, init, t_end, controls=None):
    """Integrate the five-species system with 1/delta and 1/eps stiffness.

    Resource blocks and the conversion exchange are advanced by backward
    Euler (L-stable, and its large-step fixed point reproduces the true
    O(delta) slow-manifold deviation to first order); consumer growth is
    integrated exactly on frozen resources.  Step-size control acts on the
    conversion invariants (U1+U2 and V) only, so the step count is
    independent of delta and eps; the split between U1 and U2 and the
    resource accuracy ride on the stiff solves' manifold tracking.
    """
    controls = _default_controls(controls)
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end}")
    vals = _scalar_state(init, None, ("s1", "s2", "U1", "U2", "V"))
    if not (vals[0] > 0 and vals[1] > 0):
        raise ValidationError("s1 and s2 must start positive")
    y = np.array(vals)
    dtmin = _dt_min(controls, t_end)
    h = controls.dt_init if controls.dt_init is not None else min(
        1e-2, micro.delta)
    h = min(h, controls.dt_max, t_end)

    t = 0.0
    mass0 = float(np.sum(y))
    err_prev, clipped = 1e-4, 0.0
    acc = rej = newton = clips = 0
    ts, ys = [0.0], [y.copy()]
    while t < t_end:
        if acc + rej >= controls.max_steps:
            raise NoConvergence("max_steps exceeded")
        h_try = min(h, controls.dt_max)
        clamped = h_try >= t_end - t
        if clamped:
            h_try = t_end - t
        try:
            y_c, it_c = _micro_strang_step(micro, y, h_try)
            y_m, it_1 = _micro_strang_step(micro, y, 0.5 * h_try)
            y_f, it_2 = _micro_strang_step(micro, y_m, 0.5 * h_try)
        except NoConvergence:
            rej += 1
            h = 0.5 * h_try
            if h < dtmin:
                raise
            continue
        newton += it_c + it_1 + it_2
        if np.any(y_f < _NEG_TOL):
            rej += 1
            h = 0.5 * h_try
            if h < dtmin:
                raise NegativeStateBeyondTolerance(
                    f"state went negative beyond tolerance near t={t}")
            continue
        # Step control watches the conversion invariants U1+U2 and V only.
        # The resources are slaved at rate 1/delta and the U1/U2 split at
        # rate ~1/eps; both implicit sub-solvers track those
        # quasi-equilibria at any h, and a doubling estimate on a slaved
        # component would pin h near sqrt(tau*tol) for no accuracy gain.
        # Pass dt_max well below delta (or eps) to resolve a layer
        # pointwise instead.
        m_c, m_f, m_o = y_c[2] + y_c[3], y_f[2] + y_f[3], y[2] + y[3]
        err = np.array([abs(m_f - m_c), abs(y_f[4] - y_c[4])])
        sc = controls.atol + controls.rtol * np.array(
            [max(m_o, m_f), max(abs(y[4]), abs(y_f[4]))])
        err_norm = float(np.max(err / sc))
        if err_norm > 1.0:
            rej += 1
            h = h_try * _reject_factor(err_norm, 2)
            if h < dtmin:
                raise StepSizeUnderflow(f"step size {h} below {dtmin} at t={t}")
            continue
        for i in range(5):
            if y_f[i] < 0.0:
                clipped += -y_f[i]
                y_f[i] = 0.0
                clips += 1
        if clipped > _CLIP_BUDGET * mass0:
            raise NegativeStateBeyondTolerance(
                f"cumulative clipped mass {clipped} exceeds budget")
        t = t_end if clamped else t + h_try
        y = y_f
        ts.append(t)
        ys.append(y.copy())
        acc += 1
        h = h_try * _pi_factor(err_norm, err_prev, 2)
        err_prev = max(err_norm, 1e-10)
    stats = {"steps_accepted": acc, "steps_rejected": rej,
             "newton_iters": newton, "clip_events": clips,
             "clipped_mass": clipped}
    return OdeTrajectory(times=np.array(ts), states=np.array(ys),
                         scheme="micro_strang_be",
                         columns=("s1", "s2", "U1", "U2", "V"), stats=stats)


# ---------------------------------------------------------------------------
# initial layer measurement
# ---------------------------------------------------------------------------

def initial_layer_probe(params, phi, psi, init, eps_list, t_probe=1.0,
                        controls=None):
    """First times at which |Q| drops below 1% of its initial value, per eps.

    Each run caps dt at eps/5 so the layer is resolved; the crossing is
    located by log-linear interpolation between stored steps.  Returns
    t_probe for runs that never cross (and 0.0 if Q(init) = 0).
    """
    controls = _default_controls(controls)
    y0 = _scalar_state(init, model_core.MesoState, ("u_a", "u_b", "v"))
    Q0 = abs(model_core.eval_Q(params, phi, psi, *y0))
    widths = []
    for eps in eps_list:
        if Q0 == 0.0:
            widths.append(0.0)
            continue
        p_eps = dataclasses.replace(params, epsilon=float(eps))
        c = dataclasses.replace(controls,
                                dt_max=min(controls.dt_max, eps / 5.0))
        traj = integrate_meso_ode(p_eps, phi, psi, y0, t_probe, c)
        q = np.abs(model_core.eval_Q(params, phi, psi,
                                     traj.states[:, 0], traj.states[:, 1],
                                     traj.states[:, 2]))
        thr = 0.01 * Q0
        below = np.nonzero(q <= thr)[0]
        if below.size == 0:
            widths.append(float(t_probe))
            continue
        i = int(below[0])
        if i == 0 or q[i] == 0.0:
            widths.append(float(traj.times[i]))
            continue
        t0, t1 = traj.times[i - 1], traj.times[i]
        w0, w1 = math.log(q[i - 1]), math.log(q[i])
        widths.append(float(t0 + (t1 - t0) * (w0 - math.log(thr)) / (w0 - w1)))
    return widths

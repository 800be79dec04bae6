"""A-priori quantities along trajectories and the Lotka-Volterra reduction.

Everything here is post-processing: functions take finished trajectories
(or raw field arrays) and return series, records, or verdicts.  Nothing
feeds back into the integrators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model_core
from .errors import DegenerateInput, InsufficientSnapshots, ValidationError


@dataclass(frozen=True)
class DiagnosticRecord:
    """Per-snapshot summary of the quantities the a-priori bounds control.

    The three *_sq fields are accumulated space-time integrals up to this
    snapshot (trapezoid in time); q_l2_sq carries the 1/eps weight of the
    dissipation identity.  positivity_violation is the cumulative clipped
    mass reported by the integrator.
    """

    t: float
    entropy: float
    grad_ua_sq: float
    grad_ub_sq: float
    q_l2_sq: float
    mass_u: float
    mass_v: float
    v_sup: float
    positivity_violation: float


def gradient_neumann(field, dx):
    """First derivative on cell centers: centered interior, second-order
    one-sided at the boundaries."""
    f = np.asarray(field, dtype=float)
    if f.ndim != 1 or f.size < 3:
        raise ValidationError("gradient needs a 1D field with >= 3 cells")
    g = np.empty_like(f)
    g[1:-1] = (f[2:] - f[:-2]) / (2.0 * dx)
    g[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
    g[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dx)
    return g


def _grad_sq_integral(field, dx):
    g = gradient_neumann(field, dx)
    return float(dx * np.sum(g * g))


def compute_entropy(params, phi, psi, state, dx):
    """Midpoint-rule integral of h1(u_a) + h2(u_b, v) over the grid.

    The densities are scalar routines (closed forms where the rates
    allow, adaptive quadrature otherwise), so this loops per cell.
    """
    ua = np.atleast_1d(np.asarray(state.u_a, float))
    ub = np.atleast_1d(np.asarray(state.u_b, float))
    v = np.atleast_1d(np.asarray(state.v, float))
    total = 0.0
    for i in range(ua.size):
        total += model_core.entropy_density_h1(params, psi, ua[i])
        total += model_core.entropy_density_h2(params, phi, ub[i], v[i])
    return float(dx * total)


def _meso_arrays(state):
    return (np.asarray(state.u_a, float), np.asarray(state.u_b, float),
            np.asarray(state.v, float))


def _split_macro(params, phi, psi, state, tol):
    u = np.asarray(state.u, float)
    v = np.asarray(state.v, float)
    ub = np.array([model_core.solve_ub_star(params, phi, psi, ui, vi, tol=tol)
                   for ui, vi in zip(u, v)])
    return u - ub, ub, v


def _as_meso_fields(params, phi, psi, state, tol=1e-12):
    if hasattr(state, "u_a"):
        return _meso_arrays(state)
    return _split_macro(params, phi, psi, state, tol)


def build_records(params, phi, psi, times, fields, dx, clipped,
                  eps=None, closure_tol=1e-12):
    """Per-snapshot DiagnosticRecord list with trapezoid-accumulated
    dissipation integrals.

    fields: sequence of MesoState or MacroState on the grid.  clipped:
    per-snapshot cumulative clipped mass (scalar allowed).  eps: weight of
    the conversion dissipation; None drops the 1/eps factor (macroscopic
    trajectories, where Q is zero up to closure tolerance).
    """
    times = np.asarray(times, float)
    clipped = np.broadcast_to(np.asarray(clipped, float), times.shape)
    w = 1.0 / eps if eps else 1.0
    records = []
    acc_a = acc_b = acc_q = 0.0
    prev = None
    for k, (t, state) in enumerate(zip(times, fields)):
        ua, ub, v = _as_meso_fields(params, phi, psi, state, closure_tol)
        ga = _grad_sq_integral(ua, dx)
        gb = _grad_sq_integral(ub, dx)
        q = model_core.eval_Q(params, phi, psi, ua, ub, v)
        qq = w * float(dx * np.sum(np.asarray(q) ** 2))
        if prev is not None:
            dt = t - times[k - 1]
            acc_a += 0.5 * dt * (prev[0] + ga)
            acc_b += 0.5 * dt * (prev[1] + gb)
            acc_q += 0.5 * dt * (prev[2] + qq)
        prev = (ga, gb, qq)
        records.append(DiagnosticRecord(
            t=float(t),
            entropy=compute_entropy(params, phi, psi,
                                    model_core.MesoState(ua, ub, v), dx),
            grad_ua_sq=acc_a,
            grad_ub_sq=acc_b,
            q_l2_sq=acc_q,
            mass_u=float(dx * np.sum(ua + ub)),
            mass_v=float(dx * np.sum(v)),
            v_sup=float(np.max(v)),
            positivity_violation=float(clipped[k]),
        ))
    return records


def energy_budget(trajectory, params, phi, psi):
    """Entropy series plus accumulated dissipation integrals.

    Returns {"t", "entropy", "grad_ua_sq", "grad_ub_sq", "q_l2_sq",
    "budget"}; budget(t) = entropy(t) + the three accumulations, the
    quantity the a-priori estimate bounds uniformly in eps.
    """
    times = np.asarray(trajectory.times, float)
    if times.size < 50:
        raise InsufficientSnapshots(
            f"energy budget needs >= 50 snapshots, got {times.size}")
    dx = trajectory.grid.dx
    eps = getattr(params, "epsilon", None)
    is_meso = hasattr(trajectory.fields[0], "u_a")
    records = build_records(params, phi, psi, times, trajectory.fields, dx,
                            0.0, eps=eps if is_meso else None)
    ent = np.array([r.entropy for r in records])
    ga = np.array([r.grad_ua_sq for r in records])
    gb = np.array([r.grad_ub_sq for r in records])
    qq = np.array([r.q_l2_sq for r in records])
    return {
        "t": times,
        "entropy": ent,
        "grad_ua_sq": ga,
        "grad_ub_sq": gb,
        "q_l2_sq": qq,
        "budget": ent + ga + gb + qq,
    }


def budget_bounded(budgets, max_ratio=5.0):
    """Boundedness verdict across an eps sweep: max/min of the terminal
    budget values must not exceed max_ratio."""
    finals = [float(np.asarray(bgt["budget"])[-1]) for bgt in budgets]
    if len(finals) < 2:
        raise ValidationError("boundedness verdict needs >= 2 budgets")
    lo, hi = min(finals), max(finals)
    if not lo > 0:
        raise ValidationError(f"terminal budgets must be positive, got {lo}")
    ratio = hi / lo
    return {"finals": finals, "ratio": ratio, "bounded": bool(ratio <= max_ratio)}


def q_norm_series(trajectory, params, phi, psi):
    """Spatial L2 norms of the conversion flux per snapshot, plus the
    accumulated space-time L2 norm (trapezoid of the squared series).

    Takes spatial trajectories (norms weighted by dx) or homogeneous ODE
    trajectories, where the spatial norm on the unit interval is |Q| of
    the single state (macro rows go through the closure solve first).
    """
    times = np.asarray(trajectory.times, float)
    if hasattr(trajectory, "grid"):
        norms = []
        dx = trajectory.grid.dx
        for state in trajectory.fields:
            ua, ub, v = _as_meso_fields(params, phi, psi, state)
            q = np.asarray(model_core.eval_Q(params, phi, psi, ua, ub, v))
            norms.append(float(np.sqrt(dx * np.sum(q * q))))
        norms = np.array(norms)
    else:
        cols = tuple(trajectory.columns)
        states = np.asarray(trajectory.states, float)
        if cols == ("u_a", "u_b", "v"):
            norms = np.abs(np.asarray(model_core.eval_Q(
                params, phi, psi, states[:, 0], states[:, 1],
                states[:, 2]), float))
        elif cols == ("u", "v"):
            qs = []
            for u, v in states:
                ub = model_core.solve_ub_star(params, phi, psi, u, v)
                qs.append(model_core.eval_Q(params, phi, psi, u - ub, ub, v))
            norms = np.abs(np.asarray(qs, float))
        else:
            raise ValidationError(
                f"conversion-flux norms need population states, got "
                f"columns {cols}")
    sq = norms * norms
    acc = np.concatenate([[0.0], np.cumsum(
        0.5 * np.diff(times) * (sq[1:] + sq[:-1]))])
    return {"t": times, "q_l2": norms, "accumulated": np.sqrt(acc)}


def lv_reduction(params, phi, psi, u, v):
    """Composition fractions and competition coefficients of the
    two-species reduction at the closure point of (u, v).

    r_a and r_b are computed both from the solved closure (u_a/u) and
    from their closed forms in the conversion rates; the two must agree,
    and the closed forms are returned.
    """
    u = float(u)
    v = float(v)
    if u == 0.0:
        raise DegenerateInput("the reduction needs u > 0")
    if u < 0 or v < 0:
        raise ValidationError(f"densities must be nonnegative: u={u}, v={v}")
    ub = model_core.solve_ub_star(params, phi, psi, u, v)
    ua = u - ub
    pv = float(phi.value((ub + v) / params.b))
    sv = float(psi.value(ua / params.a))
    r_a = pv / (pv + sv)
    r_b = sv / (pv + sv)
    if abs(r_a - ua / u) > 1e-10 or abs(r_b - ub / u) > 1e-10:
        raise ValidationError(
            "closure split and closed-form fractions disagree: "
            f"{ua / u} vs {r_a}")
    eta_u = params.eta_a * r_a + params.eta_b * r_b
    return {
        "r_a": r_a,
        "r_b": r_b,
        "b11": (params.eta_a * r_a ** 2 / params.a
                + params.eta_b * r_b ** 2 / params.b) / eta_u,
        "b12": (params.eta_b * r_b / params.b) / eta_u,
        "b21": r_b / params.b,
        "b22": 1.0 / params.b,
        "eta_u": eta_u,
    }


def lv_residual(params, phi, psi, u, v):
    """Max abs difference between the diffusionless two-equation
    right-hand side evaluated through the closure and its competition
    form; an algebraic identity, so the result is roundoff-sized."""
    u = float(u)
    v = float(v)
    red = lv_reduction(params, phi, psi, u, v)
    ub = model_core.solve_ub_star(params, phi, psi, u, v)
    f_a, f_b, f_v = model_core.eval_reactions(params, u - ub, ub, v)
    lv_u = red["eta_u"] * (1.0 - red["b11"] * u - red["b12"] * v) * u
    lv_v = params.eta_v * (1.0 - red["b21"] * u - red["b22"] * v) * v
    return max(abs((f_a + f_b) - lv_u), abs(f_v - lv_v))

"""1D method-of-lines integration with zero-flux boundaries.

Two systems share the spatial machinery: the three-field system with the
stiff conversion term (Strang splitting around an explicit RK4 core, the
per-cell conversion handled by the same implicit midpoint as the
homogeneous integrator) and the two-field cross-diffusion limit, where
every stage solves the algebraic closure per cell and diffuses the
composite flux w = d_a u_a + d_b u_b.

Time steps are fixed per segment at dt = cfl * dx^2 / (2 max d) and
aligned to the requested snapshot times.  Compiled kernels carry the
inner loops for encodable rates; pure-python fallbacks keep warped rates
working at small scale.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import __version__, _kernels, diagnostics, model_core, ode_sim
from .errors import (
    NegativeStateBeyondTolerance,
    NoConvergence,
    ValidationError,
)

_NEG_TOL = -1e-12
_CLIP_BUDGET = 1e-8


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered grid on [0, length]."""

    n_cells: int
    length: float = 1.0

    def __post_init__(self):
        if self.n_cells < 8:
            raise ValidationError(f"n_cells must be >= 8, got {self.n_cells}")
        if not self.length > 0:
            raise ValidationError(f"length must be > 0, got {self.length}")

    @property
    def dx(self):
        return self.length / self.n_cells

    def cell_centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass(frozen=True)
class PdeTrajectory:
    """Snapshot sequence of grid fields plus per-snapshot diagnostics."""

    times: np.ndarray
    fields: tuple
    grid: Grid1D
    scheme: str
    columns: tuple
    diagnostics: tuple
    stats: dict

    @property
    def final(self):
        return self.fields[-1]

    def field_arrays(self, k):
        """Field arrays of snapshot k in column order."""
        state = self.fields[k]
        return tuple(np.asarray(getattr(state, name), float)
                     for name in self.columns)

    def to_csv(self, path, params=None, manifest=True):
        """x column plus one column per field per snapshot; writes a
        sidecar JSON manifest next to the CSV unless manifest=False
        (callers that keep their own manifest pass False so each file
        stays referenced exactly once)."""
        x = self.grid.cell_centers()
        header = ["x"]
        cols = [x]
        for k in range(len(self.fields)):
            for name, arr in zip(self.columns, self.field_arrays(k)):
                header.append(f"{name}_{k:03d}")
                cols.append(arr)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in np.column_stack(cols):
                fh.write(",".join(format(val, ".17g") for val in row) + "\n")
        if not manifest:
            return None
        manifest = {
            "scheme": self.scheme,
            "version": __version__,
            "grid": {"n_cells": self.grid.n_cells, "length": self.grid.length},
            "times": [float(t) for t in self.times],
            "columns": list(self.columns),
            "stats": {k: (float(v) if isinstance(v, (int, float)) else v)
                      for k, v in self.stats.items()},
        }
        if params is not None:
            manifest["params"] = dataclasses.asdict(params)
        mpath = str(path) + ".manifest.json"
        with open(mpath, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return mpath


def laplacian_neumann(field, dx):
    """Second-order Laplacian with mirror ghost cells (zero flux).

    Annihilates constants exactly; discrete row sums are zero, so the
    operator conserves cell sums.
    """
    f = np.asarray(field, dtype=float)
    if f.ndim != 1 or f.size < 3:
        raise ValidationError("laplacian needs a 1D field with >= 3 cells")
    out = np.empty_like(f)
    out[1:-1] = f[2:] - 2.0 * f[1:-1] + f[:-2]
    out[0] = f[1] - f[0]
    out[-1] = f[-2] - f[-1]
    return out / (dx * dx)


# ---------------------------------------------------------------------------
# named initial profiles (the canonical oscillatory benchmark set)
# ---------------------------------------------------------------------------

PROFILES = {
    "benchmark_u_a": lambda x: np.cos(4.0 * np.pi * x) + 4.0,
    "benchmark_u_b": lambda x: (x - 1.0) * np.sin(4.0 * np.pi * x * x) + 2.0,
    "benchmark_v": lambda x: (np.cos(4.0 * np.pi * x)
                              + np.cos(2.0 * np.pi * x) + 2.5),
}
PROFILES["benchmark_u"] = lambda x: (PROFILES["benchmark_u_a"](x)
                                     + PROFILES["benchmark_u_b"](x))


def evaluate_profile(name, x):
    if name not in PROFILES:
        raise ValidationError(
            f"unknown profile {name!r}; available: {sorted(PROFILES)}")
    return PROFILES[name](np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# snapshot scheduling
# ---------------------------------------------------------------------------

def default_snapshot_times(t_end, n_snapshots=200):
    """Geometric spacing early (resolving fast transients), uniform after
    0.1*t_end; always includes 0 and t_end."""
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end}")
    if n_snapshots < 2:
        raise ValidationError("need at least 2 snapshots")
    n_geo = min(60, max(0, n_snapshots - 2) // 3)
    n_uni = n_snapshots - 1 - n_geo
    geo = np.geomspace(1e-5 * t_end, 0.1 * t_end, n_geo, endpoint=False)
    uni = np.linspace(0.1 * t_end, t_end, n_uni)
    return np.concatenate([[0.0], geo, uni])


def _normalize_snapshots(snapshot_times, t_end):
    if snapshot_times is None:
        return default_snapshot_times(t_end)
    ts = np.sort(np.asarray(snapshot_times, dtype=float))
    if ts.size and (ts[0] < 0 or ts[-1] > t_end * (1 + 1e-12)):
        raise ValidationError("snapshot times must lie in [0, t_end]")
    ts = ts[(ts > 0) & (ts <= t_end)]
    keep = np.concatenate([[True], np.diff(ts) > 1e-12 * max(1.0, t_end)])
    ts = ts[keep] if ts.size else ts
    if ts.size == 0 or abs(ts[-1] - t_end) > 1e-12 * max(1.0, t_end):
        ts = np.concatenate([ts, [t_end]])
    return np.concatenate([[0.0], ts])


def _segment_dt(params, grid, controls, seg_len):
    d_max = max(params.d_a, params.d_b, params.d_v)
    if d_max > 0:
        dt = controls.cfl * grid.dx ** 2 / (2.0 * d_max)
    else:
        # no diffusion: cap by the reaction time scale instead
        eta = max(params.eta_a, params.eta_b, params.eta_v)
        dt = 0.05 / eta if eta > 0 else seg_len
    dt = min(dt, controls.dt_max)
    m = max(1, math.ceil(seg_len / dt))
    return seg_len / m, m


def _grid_field(name, value, n):
    arr = np.array(value, dtype=float, copy=True)
    if arr.shape != (n,):
        raise ValidationError(f"{name} must be a length-{n} array on the grid")
    if np.min(arr) < _NEG_TOL:
        raise ValidationError(f"{name} has negative entries: {np.min(arr)}")
    return np.maximum(arr, 0.0)


# ---------------------------------------------------------------------------
# mesoscopic PDE
# ---------------------------------------------------------------------------

def _meso_segment_py(params, phi, psi, ua, ub, v, dx, dt, nsteps,
                     mass0, clipped, stats):
    """Python mirror of the compiled segment; used for warped rates."""
    eps = params.epsilon
    half = 0.5 * dt
    qsq = 0.0
    vmin, vmax = np.inf, -np.inf

    def fast_half():
        nonlocal clipped
        for i in range(ua.size):
            m = ua[i] + ub[i]
            x, iters = ode_sim._py_midpoint_solve(
                params, phi, psi, ub[i], m, v[i], half, eps)
            stats["newton_iters"] += iters
            ubn = 2.0 * x - ub[i]
            if ubn < _NEG_TOL or ubn > m - _NEG_TOL:
                raise NegativeStateBeyondTolerance(
                    "conversion half-step left [0, u]")
            if ubn < 0.0:
                clipped += -ubn
                ubn = 0.0
                stats["clip_events"] += 1
            ub[i] = ubn
            ua[i] = m - ubn

    def rhs(a_, b_, v_):
        f_a, f_b, f_v = model_core.eval_reactions(params, a_, b_, v_)
        return (params.d_a * laplacian_neumann(a_, dx) + f_a,
                params.d_b * laplacian_neumann(b_, dx) + f_b,
                params.d_v * laplacian_neumann(v_, dx) + f_v)

    def clip(arr):
        nonlocal clipped
        mn = arr.min()
        if mn < 0.0:
            if mn < _NEG_TOL:
                raise NegativeStateBeyondTolerance(
                    f"field dropped to {mn} under the explicit step")
            neg = arr < 0.0
            clipped += -float(arr[neg].sum())
            stats["clip_events"] += int(neg.sum())
            np.maximum(arr, 0.0, out=arr)

    for _ in range(nsteps):
        fast_half()
        k1 = rhs(ua, ub, v)
        k2 = rhs(ua + half * k1[0], ub + half * k1[1], v + half * k1[2])
        k3 = rhs(ua + half * k2[0], ub + half * k2[1], v + half * k2[2])
        k4 = rhs(ua + dt * k3[0], ub + dt * k3[1], v + dt * k3[2])
        ua += dt / 6.0 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
        ub += dt / 6.0 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
        v += dt / 6.0 * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
        clip(ua), clip(ub), clip(v)
        fast_half()
        vmin = min(vmin, float(v.min()))
        vmax = max(vmax, float(v.max()))
        clip(ua), clip(v)
        q = model_core.eval_Q(params, phi, psi, ua, ub, v)
        qsq += dt * dx * float(np.sum(np.asarray(q) ** 2))
        if clipped > _CLIP_BUDGET * mass0:
            raise NegativeStateBeyondTolerance(
                f"cumulative clipped mass {clipped} exceeds budget")
    return qsq, clipped, vmin, vmax


def integrate_meso_pde(params, phi, psi, init, t_end, controls=None,
                       snapshot_times=None, grid=None):
    """Three-field run on the grid; returns a PdeTrajectory with
    per-snapshot diagnostic records and a global v-range in stats."""
    controls = ode_sim._default_controls(controls)
    if params.epsilon is None or not params.epsilon > 0:
        raise ValidationError("params.epsilon must be positive for this run")
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end}")
    if grid is None:
        n = np.asarray(init.u_a).shape[0]
        grid = Grid1D(n_cells=n)
    n = grid.n_cells
    ua = _grid_field("u_a", init.u_a, n)
    ub = _grid_field("u_b", init.u_b, n)
    v = _grid_field("v", init.v, n)

    times = _normalize_snapshots(snapshot_times, t_end)
    mass0 = float(np.sum(ua + ub + v))
    stats = {"steps": 0, "newton_iters": 0, "clip_events": 0,
             "clipped_mass": 0.0, "v_min": np.inf, "v_max": -np.inf,
             "q_l2_sq_steps": 0.0}

    enc_phi = phi.kernel_encoding()
    enc_psi = psi.kernel_encoding()
    use_kernel = _kernels.HAVE_NUMBA and enc_phi is not None and enc_psi is not None

    fields = [model_core.MesoState(ua.copy(), ub.copy(), v.copy())]
    clip_series = [0.0]
    clipped = 0.0
    kstats = np.zeros(2, dtype=np.int64)
    for s0, s1 in zip(times[:-1], times[1:]):
        dt, m = _segment_dt(params, grid, controls, s1 - s0)
        if use_kernel:
            status, qsq, clipped, vmin, vmax = _kernels.meso_pde_segment(
                ua, ub, v, grid.dx, dt, m,
                params.a, params.b, params.eta_a, params.eta_b, params.eta_v,
                params.d_a, params.d_b, params.d_v, params.epsilon,
                enc_phi[0], enc_phi[1], enc_psi[0], enc_psi[1],
                mass0, clipped, kstats)
            if status == _kernels.STATUS_NEWTON_FAIL:
                raise NoConvergence(
                    "conversion midpoint solve failed; reduce cfl")
            if status == _kernels.STATUS_NEGATIVE:
                raise NegativeStateBeyondTolerance(
                    f"negativity beyond tolerance in segment ending {s1}")
            stats["q_l2_sq_steps"] += qsq
        else:
            qsq, clipped, vmin, vmax = _meso_segment_py(
                params, phi, psi, ua, ub, v, grid.dx, dt, m,
                mass0, clipped, stats)
            stats["q_l2_sq_steps"] += qsq
        stats["steps"] += m
        stats["v_min"] = min(stats["v_min"], vmin)
        stats["v_max"] = max(stats["v_max"], vmax)
        fields.append(model_core.MesoState(ua.copy(), ub.copy(), v.copy()))
        clip_series.append(clipped)
    stats["newton_iters"] += int(kstats[0])
    stats["clip_events"] += int(kstats[1])
    stats["clipped_mass"] = clipped

    records = diagnostics.build_records(
        params, phi, psi, times, fields, grid.dx, clip_series,
        eps=params.epsilon)
    return PdeTrajectory(times=times, fields=tuple(fields), grid=grid,
                         scheme="meso_strang_rk4",
                         columns=("u_a", "u_b", "v"),
                         diagnostics=tuple(records), stats=stats)


# ---------------------------------------------------------------------------
# macroscopic PDE
# ---------------------------------------------------------------------------

def _macro_segment_py(params, phi, psi, u, v, dx, dt, nsteps, tol, mirror_u,
                      mass0, clipped, stats):
    half = 0.5 * dt

    def stage(u_, v_):
        uu = np.maximum(u_, 0.0)
        vv = np.maximum(v_, 0.0)
        ub = np.array([model_core.solve_ub_star(params, phi, psi, ui, vi,
                                                tol=tol)
                       for ui, vi in zip(uu, vv)])
        stats["newton_iters"] += uu.size
        w = params.d_a * (uu - ub) + params.d_b * ub
        lw = laplacian_neumann(w, dx)
        if mirror_u:
            # ghost state mirrors (u, v); w at the ghost equals the
            # boundary-cell w, so this reproduces the default stencil
            lw[0] = (w[1] - w[0]) / (dx * dx)
            lw[-1] = (w[-2] - w[-1]) / (dx * dx)
        f_a, f_b, f_v = model_core.eval_reactions(params, uu - ub, ub, vv)
        return (lw + f_a + f_b,
                params.d_v * laplacian_neumann(v_, dx) + f_v)

    def clip(arr):
        nonlocal clipped
        mn = arr.min()
        if mn < 0.0:
            if mn < _NEG_TOL:
                raise NegativeStateBeyondTolerance(
                    f"field dropped to {mn} under the explicit step")
            neg = arr < 0.0
            clipped += -float(arr[neg].sum())
            stats["clip_events"] += int(neg.sum())
            np.maximum(arr, 0.0, out=arr)

    vmin, vmax = np.inf, -np.inf
    for _ in range(nsteps):
        k1 = stage(u, v)
        k2 = stage(u + half * k1[0], v + half * k1[1])
        k3 = stage(u + half * k2[0], v + half * k2[1])
        k4 = stage(u + dt * k3[0], v + dt * k3[1])
        u += dt / 6.0 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
        v += dt / 6.0 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
        vmin = min(vmin, float(v.min()))
        vmax = max(vmax, float(v.max()))
        clip(u), clip(v)
        if clipped > _CLIP_BUDGET * mass0:
            raise NegativeStateBeyondTolerance(
                f"cumulative clipped mass {clipped} exceeds budget")
    return clipped, vmin, vmax


def integrate_macro_pde(params, phi, psi, init, t_end, controls=None,
                        snapshot_times=None, grid=None,
                        mirror_u_instead=False):
    """Two-field cross-diffusion run.  The u-equation diffuses the
    composite flux w with mirror ghosts on w itself; pass
    mirror_u_instead=True to build the ghost from mirrored (u, v) and
    evaluate w there (numerically identical on this stencil, kept as a
    switchable path for comparison)."""
    controls = ode_sim._default_controls(controls)
    if not t_end > 0:
        raise ValidationError(f"t_end must be > 0, got {t_end}")
    if grid is None:
        n = np.asarray(init.u).shape[0]
        grid = Grid1D(n_cells=n)
    n = grid.n_cells
    u = _grid_field("u", init.u, n)
    v = _grid_field("v", init.v, n)

    times = _normalize_snapshots(snapshot_times, t_end)
    mass0 = float(np.sum(u + v))
    stats = {"steps": 0, "newton_iters": 0, "clip_events": 0,
             "clipped_mass": 0.0, "v_min": np.inf, "v_max": -np.inf}

    enc_phi = phi.kernel_encoding()
    enc_psi = psi.kernel_encoding()
    use_kernel = _kernels.HAVE_NUMBA and enc_phi is not None and enc_psi is not None

    ubw = np.empty(n)
    for i in range(n):
        ubw[i] = model_core.solve_ub_star(params, phi, psi, u[i], v[i],
                                          tol=controls.tol_closure)
    fields = [model_core.MacroState(u.copy(), v.copy())]
    clip_series = [0.0]
    clipped = 0.0
    kstats = np.zeros(2, dtype=np.int64)
    for s0, s1 in zip(times[:-1], times[1:]):
        dt, m = _segment_dt(params, grid, controls, s1 - s0)
        if use_kernel:
            status, clipped, vmin, vmax = _kernels.macro_pde_segment(
                u, v, ubw, grid.dx, dt, m,
                params.a, params.b, params.eta_a, params.eta_b, params.eta_v,
                params.d_a, params.d_b, params.d_v, controls.tol_closure,
                enc_phi[0], enc_phi[1], enc_psi[0], enc_psi[1],
                1 if mirror_u_instead else 0, mass0, clipped, kstats)
            if status == _kernels.STATUS_NEWTON_FAIL:
                raise NoConvergence("per-cell closure solve failed")
            if status == _kernels.STATUS_NEGATIVE:
                raise NegativeStateBeyondTolerance(
                    f"negativity beyond tolerance in segment ending {s1}")
        else:
            clipped, vmin, vmax = _macro_segment_py(
                params, phi, psi, u, v, grid.dx, dt, m,
                controls.tol_closure, mirror_u_instead, mass0, clipped,
                stats)
        stats["steps"] += m
        stats["v_min"] = min(stats["v_min"], vmin)
        stats["v_max"] = max(stats["v_max"], vmax)
        fields.append(model_core.MacroState(u.copy(), v.copy()))
        clip_series.append(clipped)
    stats["newton_iters"] += int(kstats[0])
    stats["clip_events"] += int(kstats[1])
    stats["clipped_mass"] = clipped

    records = diagnostics.build_records(
        params, phi, psi, times, fields, grid.dx, clip_series, eps=None,
        closure_tol=controls.tol_closure)
    return PdeTrajectory(times=times, fields=tuple(fields), grid=grid,
                         scheme="macro_rk4",
                         columns=("u", "v"),
                         diagnostics=tuple(records), stats=stats)


# ---------------------------------------------------------------------------
# limit-gap measurement
# ---------------------------------------------------------------------------

def meso_macro_gap(params, phi, psi, init, t_end, eps_list, grid,
                   norms=("u", "v"), controls=None, n_snapshots=200):
    """Space-time L2 gaps between the three-field runs and the limit run.

    The limit run starts from the matched data (u = u_a + u_b); gaps are
    measured over [10*eps, t_end] per eps; the conversion-flux norm comes
    from the per-step accumulation of each run.  Returns a table dict
    with one macro entry and per-eps rows.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or any(e2 >= e1 for e1, e2
                                in zip(eps_list, eps_list[1:])):
        raise ValidationError("eps_list must be >= 3 strictly decreasing values")
    for name in norms:
        if name not in ("u", "v"):
            raise ValidationError(f"unknown norm field {name!r}")
    times = default_snapshot_times(t_end, n_snapshots)
    macro_init = model_core.MacroState(
        np.asarray(init.u_a, float) + np.asarray(init.u_b, float),
        np.asarray(init.v, float))
    macro = integrate_macro_pde(params, phi, psi, macro_init, t_end,
                                controls=controls, snapshot_times=times,
                                grid=grid)
    mu = np.stack([np.asarray(st.u) for st in macro.fields])
    mv = np.stack([np.asarray(st.v) for st in macro.fields])

    table = {"eps": [], "q_l2": [], "t_layer": [],
             "macro": {"scheme": macro.scheme, "steps": macro.stats["steps"]},
             }
    for name in norms:
        table[f"gap_{name}"] = []
    dx = grid.dx
    for eps in eps_list:
        p = dataclasses.replace(params, epsilon=eps)
        meso = integrate_meso_pde(p, phi, psi, init, t_end,
                                  controls=controls, snapshot_times=times,
                                  grid=grid)
        su = np.stack([np.asarray(st.u_a) + np.asarray(st.u_b)
                       for st in meso.fields])
        sv = np.stack([np.asarray(st.v) for st in meso.fields])
        t_layer = 10.0 * eps
        mask = meso.times >= t_layer
        tt = meso.times[mask]
        gaps = {"u": su[mask] - mu[mask], "v": sv[mask] - mv[mask]}
        for name in norms:
            sq = dx * np.sum(gaps[name] ** 2, axis=1)
            table[f"gap_{name}"].append(float(np.sqrt(np.trapezoid(sq, tt))))
        table["eps"].append(eps)
        table["t_layer"].append(t_layer)
        table["q_l2"].append(float(np.sqrt(meso.stats["q_l2_sq_steps"])))
    slope = np.polyfit(np.log(table["eps"]), np.log(table["q_l2"]), 1)[0]
    table["q_slope"] = float(slope)
    return table

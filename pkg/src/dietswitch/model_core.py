"""Core model data types and algebra for the diet-switching competition system.

Two consumer populations share habitat: one (density ``u_a``) feeds on a
private resource with carrying capacity ``a``, the other (``u_b``) shares a
resource of capacity ``b`` with a third population ``v``.  Individuals switch
diet depending on crowding, at a rate controlled by two increasing functions
``phi`` and ``psi`` of the normalized crowding ratios ``(u_b+v)/b`` and
``u_a/a``.  The net conversion flux is

    Q(u_a, u_b, v) = phi((u_b+v)/b) * u_b - psi(u_a/a) * u_a

and enters the fast dynamics as Q/epsilon.  In the fast-conversion limit the
pair (u_a, u_b) is slaved to (u = u_a+u_b, v) through the closure
``u_a + u_b = u``, ``Q = 0``, whose unique root u_b*(u, v) this module solves.

Also here: the reaction terms, the closure partial derivatives used by the
stability analysis, convex entropy densities, and the map from a microscopic
resource-explicit model onto this system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInput,
    DomainError,
    NoConvergence,
    NonBracketing,
    ValidationError,
)

_MAX_ROOT_ITERS = 200


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Scalar coefficients of the mesoscopic/macroscopic systems.

    Parameters
    ----------
    a, b : float
        Carrying capacities (positive). ``a`` belongs to the private
        resource of u_a, ``b`` to the resource shared by u_b and v.
    eta_a, eta_b, eta_v : float
        Intrinsic growth rates (positive).
    d_a, d_b, d_v : float
        Diffusivities (nonnegative; zero selects diffusionless/ODE mode).
    epsilon : float or None
        Fast-conversion time-scale ratio. Positive when present; ignored by
        macroscopic-mode operations.
    """

    a: float
    b: float
    eta_a: float
    eta_b: float
    eta_v: float
    d_a: float = 0.0
    d_b: float = 0.0
    d_v: float = 0.0
    epsilon: float | None = None

    def __post_init__(self):
        for name in ("a", "b", "eta_a", "eta_b", "eta_v"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("d_a", "d_b", "d_v"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive when present, got {self.epsilon}")


@dataclass(frozen=True)
class MicroParams:
    """Microscopic (resource-explicit) model coefficients.

    The five-equation system tracks two resource densities s1, s2 (fast,
    time scale ``delta``) and three consumer densities U1, U2, V.  ``Phi``
    and ``Psi`` are the raw switching rates, functions of the starvation
    measures (p2*U2 + pV*V)/s2 and p1*U1/s1.
    """

    r1: float
    r2: float
    A1: float
    A2: float
    p1: float
    p2: float
    pV: float
    k1: float
    k2: float
    kV: float
    delta: float
    epsilon: float
    Phi: "ConversionRate"
    Psi: "ConversionRate"
    D1: float = 0.0
    D2: float = 0.0
    DV: float = 0.0

    def __post_init__(self):
        for name in ("r1", "r2", "A1", "A2", "p1", "p2", "pV",
                     "k1", "k2", "kV", "delta", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("D1", "D2", "DV"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.delta < self.epsilon:
            raise ValidationError(
                f"delta ({self.delta}) must be smaller than epsilon ({self.epsilon})")


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------

_NEG_TOL = -1e-12


def _check_nonneg(name, x):
    if np.min(x) < _NEG_TOL:
        raise ValidationError(f"{name} has entries below {_NEG_TOL}: min={np.min(x)}")


@dataclass(frozen=True)
class MesoState:
    """Population triple (u_a, u_b, v); scalars or equal-length 1D arrays."""

    u_a: object
    u_b: object
    v: object

    def __post_init__(self):
        sizes = {np.size(self.u_a), np.size(self.u_b), np.size(self.v)}
        if len(sizes) != 1:
            raise ValidationError(f"field lengths differ: {sizes}")
        for name in ("u_a", "u_b", "v"):
            _check_nonneg(name, getattr(self, name))

    def as_array(self):
        return np.array([np.asarray(self.u_a, dtype=float),
                         np.asarray(self.u_b, dtype=float),
                         np.asarray(self.v, dtype=float)])


@dataclass(frozen=True)
class MacroState:
    """Population pair (u, v); scalars or equal-length 1D arrays."""

    u: object
    v: object

    def __post_init__(self):
        if np.size(self.u) != np.size(self.v):
            raise ValidationError("field lengths differ")
        _check_nonneg("u", self.u)
        _check_nonneg("v", self.v)

    def as_array(self):
        return np.array([np.asarray(self.u, dtype=float),
                         np.asarray(self.v, dtype=float)])


# ---------------------------------------------------------------------------
# conversion rates
# ---------------------------------------------------------------------------

# kernel encoding ids shared with the compiled PDE kernels
KERNEL_AFFINE = 0
KERNEL_STEP = 1
KERNEL_TABLE = 2


class ConversionRate:
    """A nondecreasing rate function with derivative and positive floor.

    Subclasses implement ``value`` and ``derivative`` (elementwise on numpy
    arrays), report jump locations through ``discontinuities`` and, where
    possible, a flat parameter encoding for the compiled stepping kernels.
    """

    def value(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def lower_bound(self):
        # nondecreasing on [0, inf): the floor is the value at 0
        return float(self.value(0.0))

    def discontinuities(self):
        return ()

    def kernel_encoding(self):
        """Return (code, params) for the compiled kernels, or None."""
        return None

    def affine_coefficients(self):
        """Return (slope, intercept) if the rate is affine, else None."""
        enc = self.kernel_encoding()
        if enc is not None and enc[0] == KERNEL_AFFINE:
            return float(enc[1][0]), float(enc[1][1])
        return None


class AffineRate(ConversionRate):
    """rate(x) = slope*x + intercept with slope >= 0, intercept > 0."""

    def __init__(self, slope, intercept):
        if slope < 0:
            raise ValidationError(f"affine slope must be >= 0, got {slope}")
        if not intercept > 0:
            raise ValidationError(f"affine intercept must be > 0, got {intercept}")
        self.slope = float(slope)
        self.intercept = float(intercept)

    def value(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept if np.ndim(x) \
            else self.slope * float(x) + self.intercept

    def derivative(self, x):
        return np.full(np.shape(x), self.slope) if np.ndim(x) else self.slope

    def kernel_encoding(self):
        return KERNEL_AFFINE, np.array([self.slope, self.intercept])

    def __repr__(self):
        return f"AffineRate(slope={self.slope!r}, intercept={self.intercept!r})"


class ScaledRate(ConversionRate):
    """rate(x) = omega1 * base(omega2 * x)."""

    def __init__(self, omega1, omega2, base):
        if not omega1 > 0:
            raise ValidationError(f"omega1 must be > 0, got {omega1}")
        if omega2 < 0:
            raise ValidationError(f"omega2 must be >= 0, got {omega2}")
        self.omega1 = float(omega1)
        self.omega2 = float(omega2)
        self.base = base

    def value(self, x):
        return self.omega1 * self.base.value(self.omega2 * np.asarray(x, dtype=float)
                                             if np.ndim(x) else self.omega2 * float(x))

    def derivative(self, x):
        arg = self.omega2 * (np.asarray(x, dtype=float) if np.ndim(x) else float(x))
        return self.omega1 * self.omega2 * self.base.derivative(arg)

    def discontinuities(self):
        if self.omega2 == 0.0:
            return ()
        return tuple(d / self.omega2 for d in self.base.discontinuities())

    def kernel_encoding(self):
        enc = self.base.kernel_encoding()
        if enc is None:
            return None
        code, p = enc
        w1, w2 = self.omega1, self.omega2
        if w2 == 0.0:
            # constant rate omega1 * base(0)
            return KERNEL_AFFINE, np.array([0.0, w1 * float(self.base.value(0.0))])
        if code == KERNEL_AFFINE:
            return KERNEL_AFFINE, np.array([w1 * p[0] * w2, w1 * p[1]])
        if code == KERNEL_STEP:
            return KERNEL_STEP, np.array([w1 * p[0], w1 * p[1], p[2] / w2])
        if code == KERNEL_TABLE:
            n = len(p) // 2
            return KERNEL_TABLE, np.concatenate([p[:n] / w2, w1 * p[n:]])
        return None

    def __repr__(self):
        return f"ScaledRate(omega1={self.omega1!r}, omega2={self.omega2!r}, base={self.base!r})"


class StepRate(ConversionRate):
    """Piecewise-constant rate: ``low`` for x <= threshold, ``high`` beyond.

    The jump breaks the continuity the rest of the analysis assumes, so
    construction demands an explicit ``allow_h1_violation=True``.  Root
    solvers fall back to bisection and report roots landing on the jump.
    """

    def __init__(self, low, high, threshold, allow_h1_violation=False):
        if not allow_h1_violation:
            raise ValidationError(
                "step rates are discontinuous; pass allow_h1_violation=True "
                "to accept the loss of the smooth-rate guarantees")
        if not low > 0:
            raise ValidationError(f"low must be > 0, got {low}")
        if high < low:
            raise ValidationError(f"high ({high}) must be >= low ({low})")
        if not threshold > 0:
            raise ValidationError(f"threshold must be > 0, got {threshold}")
        self.low = float(low)
        self.high = float(high)
        self.threshold = float(threshold)

    def value(self, x):
        if np.ndim(x):
            x = np.asarray(x, dtype=float)
            return np.where(x <= self.threshold, self.low, self.high)
        return self.low if x <= self.threshold else self.high

    def derivative(self, x):
        # zero away from the jump; the jump itself is reported separately
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def discontinuities(self):
        return () if self.high == self.low else (self.threshold,)

    def kernel_encoding(self):
        return KERNEL_STEP, np.array([self.low, self.high, self.threshold])

    def __repr__(self):
        return (f"StepRate(low={self.low!r}, high={self.high!r}, "
                f"threshold={self.threshold!r})")


class TableRate(ConversionRate):
    """Piecewise-linear interpolation through (x_i, y_i) breakpoints.

    Outside the table the end values are held constant, which keeps the
    rate nondecreasing and bounded.
    """

    def __init__(self, xs, ys):
        xs = tuple(float(x) for x in xs)
        ys = tuple(float(y) for y in ys)
        if len(xs) != len(ys) or len(xs) < 2:
            raise ValidationError("table needs >= 2 breakpoints with matching values")
        if any(x1 <= x0 for x0, x1 in zip(xs, xs[1:])):
            raise ValidationError("table breakpoints must be strictly increasing")
        if any(y1 < y0 for y0, y1 in zip(ys, ys[1:])):
            raise ValidationError("table values must be nondecreasing")
        if not ys[0] > 0:
            raise ValidationError("table values must be positive")
        if xs[0] > 0:
            # extend the constant left branch so value(0) is defined
            xs = (0.0,) + xs
            ys = (ys[0],) + ys
        self.xs = np.array(xs)
        self.ys = np.array(ys)

    def value(self, x):
        out = np.interp(x, self.xs, self.ys)
        return out if np.ndim(x) else float(out)

    def derivative(self, x):
        idx = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        slopes = np.diff(self.ys) / np.diff(self.xs)
        inside = (np.asarray(x) >= self.xs[0]) & (np.asarray(x) < self.xs[-1])
        out = np.where(inside, slopes[idx], 0.0)
        return out if np.ndim(x) else float(out)

    def kernel_encoding(self):
        return KERNEL_TABLE, np.concatenate([self.xs, self.ys])

    def __repr__(self):
        return f"TableRate(xs={self.xs.tolist()!r}, ys={self.ys.tolist()!r})"


class WarpedRate(ConversionRate):
    """rate(x) = base(c * x / (1 - x)), the microscopic-rate composition.

    The warp blows up at x = 1; evaluation at or beyond ``x_cap`` raises
    DomainError so misuse surfaces as an error instead of an overflow.
    """

    def __init__(self, base, c, x_cap=0.999):
        if not c > 0:
            raise ValidationError(f"warp coefficient must be > 0, got {c}")
        if not 0 < x_cap < 1:
            raise ValidationError(f"x_cap must lie in (0, 1), got {x_cap}")
        self.base = base
        self.c = float(c)
        self.x_cap = float(x_cap)

    def _warp(self, x):
        if np.any(np.asarray(x) >= self.x_cap):
            raise DomainError(
                f"warped rate evaluated at x >= x_cap ({self.x_cap}); "
                f"max argument {np.max(x)}")
        x = np.asarray(x, dtype=float) if np.ndim(x) else float(x)
        return self.c * x / (1.0 - x)

    def value(self, x):
        return self.base.value(self._warp(x))

    def derivative(self, x):
        y = self._warp(x)
        onemx = 1.0 - (np.asarray(x, dtype=float) if np.ndim(x) else float(x))
        return self.base.derivative(y) * self.c / (onemx * onemx)

    def discontinuities(self):
        # base jump at y maps back through x = y/(c+y)
        return tuple(d / (self.c + d) for d in self.base.discontinuities())

    def __repr__(self):
        return f"WarpedRate(base={self.base!r}, c={self.c!r}, x_cap={self.x_cap!r})"


def rate_is_smooth(*rates):
    return all(not r.discontinuities() for r in rates)


# ---------------------------------------------------------------------------
# reactions and conversion flux
# ---------------------------------------------------------------------------

def eval_reactions(params, u_a, u_b, v):
    """Logistic reaction terms (f_a, f_b, f_v); elementwise on arrays."""
    f_a = params.eta_a * u_a * (1.0 - u_a / params.a)
    shared = 1.0 - (u_b + v) / params.b
    f_b = params.eta_b * u_b * shared
    f_v = params.eta_v * v * shared
    return f_a, f_b, f_v


def eval_Q(params, phi, psi, u_a, u_b, v):
    """Net diet-conversion flux; the O(1) part, callers divide by epsilon."""
    return phi.value((u_b + v) / params.b) * u_b - psi.value(u_a / params.a) * u_a


def closure_partials(params, phi, psi, u_a, u_b, v):
    """(beta, gamma, theta) at the normalized point (u_a/a, u_b/b, v/b).

    beta  = psi(lam) + lam*psi'(lam)          (sensitivity through u_a)
    gamma = phi(s+d) + s*phi'(s+d)            (sensitivity through u_b)
    theta = s*phi'(s+d)                       (sensitivity through v)

    All three are nonnegative, beta and gamma strictly positive, for rates
    with a positive floor.  beta + gamma equals d/du_b of the closure
    residual q(u_b; u, v).
    """
    lam = u_a / params.a
    sig = u_b / params.b
    sd = (u_b + v) / params.b
    beta = psi.value(lam) + lam * psi.derivative(lam)
    dphi = phi.derivative(sd)
    gamma = phi.value(sd) + sig * dphi
    theta = sig * dphi
    return beta, gamma, theta


def closure_residual(params, phi, psi, u_b, u, v):
    """q(u_b) = Q(u - u_b, u_b, v); strictly increasing in u_b on [0, u]."""
    return eval_Q(params, phi, psi, u - u_b, u_b, v)


def closure_scale(params, phi, psi, u, v):
    """Magnitude scale for closure residual tolerances."""
    u = float(u)
    return max(1.0,
               float(phi.value((u + v) / params.b)) * u,
               float(psi.value(u / params.a)) * u)


def solve_ub_star(params, phi, psi, u, v, tol=1e-12):
    """Solve the closure Q(u - u_b, u_b, v) = 0 for u_b in [0, u].

    Bisection brackets the root, safeguarded Newton (with the closed-form
    derivative beta+gamma) finishes it.  Discontinuous rates get pure
    bisection; when the sign change sits on a jump the collapsed bracket
    point is returned.

    Returns 0 for u = 0 (continuous extension of the closure).

    Raises
    ------
    NonBracketing
        q(0) >= 0 or q(u) <= 0 beyond tolerance (invalid rates).
    NoConvergence
        Iteration cap hit (not reachable for monotone rates).
    """
    u = float(u)
    v = float(v)
    if u < 0 or v < 0:
        raise ValidationError(f"densities must be nonnegative, got u={u}, v={v}")
    if u == 0.0:
        return 0.0
    scale = closure_scale(params, phi, psi, u, v)
    q_lo = closure_residual(params, phi, psi, 0.0, u, v)
    q_hi = closure_residual(params, phi, psi, u, u, v)
    if q_lo >= 0.0:
        if abs(q_lo) <= tol * scale:
            return 0.0
        raise NonBracketing(f"q(0) = {q_lo} >= 0; rates do not bracket a root")
    if q_hi <= 0.0:
        if abs(q_hi) <= tol * scale:
            return u
        raise NonBracketing(f"q(u) = {q_hi} <= 0; rates do not bracket a root")

    lo, hi = 0.0, u
    if not rate_is_smooth(phi, psi):
        for _ in range(_MAX_ROOT_ITERS):
            mid = 0.5 * (lo + hi)
            qm = closure_residual(params, phi, psi, mid, u, v)
            if abs(qm) <= tol * scale:
                return mid
            if hi - lo <= 8.0 * np.finfo(float).eps * max(1.0, u):
                # sign change across a jump: the root is the jump location
                return mid
            if qm < 0.0:
                lo = mid
            else:
                hi = mid
        raise NoConvergence("closure bisection exceeded iteration cap")

    x = u * psi.value(u / params.a) / (psi.value(u / params.a)
                                       + phi.value((u + v) / params.b))
    x = min(max(x, lo), hi)
    for _ in range(_MAX_ROOT_ITERS):
        q = closure_residual(params, phi, psi, x, u, v)
        if abs(q) <= tol * scale:
            return x
        if q < 0.0:
            lo = x
        else:
            hi = x
        beta, gamma, _ = closure_partials(params, phi, psi, u - x, x, v)
        step = q / (beta + gamma)
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            return x
        x = x_new
    raise NoConvergence("closure Newton exceeded iteration cap")


def dub_star_du(params, phi, psi, u, v, tol=1e-12):
    """d(u_b*)/du = beta/(beta+gamma) at the closure point; lies in (0, 1)."""
    if not u > 0:
        raise DegenerateInput(f"dub_star_du needs u > 0, got {u}")
    ub = solve_ub_star(params, phi, psi, u, v, tol=tol)
    beta, gamma, _ = closure_partials(params, phi, psi, u - ub, ub, v)
    return beta / (beta + gamma)


# ---------------------------------------------------------------------------
# microscopic model map
# ---------------------------------------------------------------------------

def map_micro_to_meso(micro, x_cap=0.999):
    """Map microscopic coefficients onto (ModelParams, phi, psi).

    Growth rates compose as eta_a = p1*A1*k1 etc., capacities as a = r1/p1,
    b = r2/p2, and the switching rates warp through the slow-manifold
    resource levels: phi(x) = Phi((r2/A2) * x/(1-x)) and likewise for psi.
    The warp is capped at ``x_cap`` (DomainError beyond).
    """
    params = ModelParams(
        a=micro.r1 / micro.p1,
        b=micro.r2 / micro.p2,
        eta_a=micro.p1 * micro.A1 * micro.k1,
        eta_b=micro.p2 * micro.A2 * micro.k2,
        eta_v=micro.pV * micro.A2 * micro.kV,
        d_a=micro.D1,
        d_b=micro.D2,
        d_v=micro.DV,
        epsilon=micro.epsilon,
    )
    phi = WarpedRate(micro.Phi, micro.r2 / micro.A2, x_cap=x_cap)
    psi = WarpedRate(micro.Psi, micro.r1 / micro.A1, x_cap=x_cap)
    return params, phi, psi


def micro_slow_manifold(micro, U1, U2, V):
    """Quasi-steady resource levels (s1, s2) for given consumer densities."""
    s1 = micro.A1 * (1.0 - micro.p1 * U1 / micro.r1)
    s2 = micro.A2 * (1.0 - (micro.p2 * U2 + micro.pV * V) / micro.r2)
    return s1, s2


def micro_to_meso_state(micro, U1, U2, V):
    """Consumer densities in mesoscopic variables: (u_a, u_b, v)."""
    return U1, U2, (micro.pV / micro.p2) * V


# ---------------------------------------------------------------------------
# entropy densities
# ---------------------------------------------------------------------------

def _adaptive_simpson(f, a, b, rel=1e-10, abs_tol=1e-14, max_depth=40):
    """Classic adaptive Simpson on [a, b]."""

    def simpson(fa, fm, fb, h):
        return h * (fa + 4.0 * fm + fb) / 6.0

    def recurse(a, b, fa, fm, fb, whole, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        err = left + right - whole
        if depth <= 0 or abs(err) <= 15.0 * max(abs_tol, rel * abs(left + right)):
            return left + right + err / 15.0
        return (recurse(a, m, fa, flm, fm, left, depth - 1)
                + recurse(m, b, fm, frm, fb, right, depth - 1))

    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), max_depth)


def entropy_density_h1(params, psi, u_a):
    """h1(u_a) = integral_0^{u_a} psi(z/a) z dz; convex, nonnegative."""
    u = float(u_a)
    if u == 0.0:
        return 0.0
    aff = psi.affine_coefficients()
    if aff is not None:
        s, c = aff
        return c * u * u / 2.0 + s * u ** 3 / (3.0 * params.a)
    enc = psi.kernel_encoding()
    if enc is not None and enc[0] == KERNEL_STEP:
        low, high, th = enc[1]
        zc = params.a * th  # jump in the z variable
        if u <= zc:
            return low * u * u / 2.0
        return low * zc * zc / 2.0 + high * (u * u - zc * zc) / 2.0
    return _adaptive_simpson(lambda z: psi.value(z / params.a) * z, 0.0, u)


def entropy_density_h2(params, phi, u_b, v):
    """h2(u_b, v) = integral_0^{u_b} phi((z+v)/b) z dz; convex in u_b."""
    u = float(u_b)
    v = float(v)
    if u == 0.0:
        return 0.0
    aff = phi.affine_coefficients()
    if aff is not None:
        s, c = aff
        return (c + s * v / params.b) * u * u / 2.0 + s * u ** 3 / (3.0 * params.b)
    enc = phi.kernel_encoding()
    if enc is not None and enc[0] == KERNEL_STEP:
        low, high, th = enc[1]
        zc = params.b * th - v  # (z+v)/b crosses th here
        if zc >= u:
            return low * u * u / 2.0
        if zc <= 0.0:
            return high * u * u / 2.0
        return low * zc * zc / 2.0 + high * (u * u - zc * zc) / 2.0
    return _adaptive_simpson(lambda z: phi.value((z + v) / params.b) * z, 0.0, u)

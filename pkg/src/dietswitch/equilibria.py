"""Spatially homogeneous steady states of the macroscopic system.

Every homogeneous steady state satisfies

    f_a(u_a) + f_b(u_b, v) = 0,   f_v(u_b, v) = 0,   Q(u_a, u_b, v) = 0,

and is parametrized by normalized coordinates (lambda, sigma, delta) =
(u_a/a, u_b/b, v/b).  Besides the trivial states (0,0) and (0,b), the
v-extinct family solves F(lambda) = 0 for

    F(lambda) = eta_a*a*lambda*(1-lambda) + eta_b*b*sigma(lambda)*(1-sigma(lambda)),

where sigma(lambda) inverts the normalized closure Sigma(sigma) =
alpha*Lambda(lambda), and a unique coexistence state (a+b*alpha, b*(1-alpha))
exists exactly when the criterion alpha = (psi(1)/phi(1))*(a/b) is below 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model_core
from .errors import (
    DietSwitchError,
    DiscontinuityError,
    EmptyResult,
    NoConvergence,
    ValidationError,
)

KIND_TRIVIAL = "trivial"
KIND_U_EXTINCT = "semitrivial_u_extinct"
KIND_V_EXTINCT = "semitrivial_v_extinct"
KIND_COEXISTENCE = "coexistence"

_MAX_ITERS = 200


@dataclass(frozen=True)
class Equilibrium:
    """One homogeneous steady state in both physical and normalized coordinates."""

    kind: str
    u_bar: float
    v_bar: float
    lam: float     # u_a / a
    sigma: float   # u_b / b
    delta: float   # v / b
    on_discontinuity: bool = False


@dataclass(frozen=True)
class EquilibriumSet:
    alpha: float
    items: tuple

    def of_kind(self, kind):
        return [eq for eq in self.items if eq.kind == kind]

    def coexistence(self):
        found = self.of_kind(KIND_COEXISTENCE)
        return found[0] if found else None


@dataclass(frozen=True)
class UniquenessReport:
    """Verdicts of the two sufficient uniqueness conditions for v-extinct states.

    half_point_condition_holds checks alpha*Lambda(1/2) <= 1 (when alpha > 1)
    or Sigma(1/2)/alpha <= 1 (when alpha < 1); None at the boundary alpha = 1.
    affine_structure_applies is True when phi is affine and psi is a
    positively scaled dilation of it, which forces a unique v-extinct state.
    """

    alpha: float
    branch: str  # "coexistence" (alpha<1), "exclusion" (alpha>1), "boundary"
    half_point_condition_holds: bool | None
    half_point_value: float | None
    affine_structure_applies: bool
    omega1: float | None = None
    omega2: float | None = None


def compute_alpha(params, phi, psi):
    """Stability criterion alpha = (psi(1)/phi(1)) * (a/b)."""
    return (psi.value(1.0) / phi.value(1.0)) * (params.a / params.b)


def _Lambda(psi, lam):
    return lam * psi.value(lam) / psi.value(1.0)


def _Sigma(phi, sigma):
    return sigma * phi.value(sigma) / phi.value(1.0)


def invert_Sigma(params, phi, target, tol=1e-14):
    """Solve Sigma(sigma) = target for sigma >= 0 (Sigma strictly increasing)."""
    if target <= 0.0:
        return 0.0
    phi1 = phi.value(1.0)
    hi = 1.0
    for _ in range(200):
        if _Sigma(phi, hi) >= target:
            break
        hi *= 2.0
    else:
        raise NoConvergence("Sigma bracket expansion failed")
    lo = 0.0
    smooth = model_core.rate_is_smooth(phi)
    x = min(hi, max(target * phi1 / phi.value(0.0), 0.0))
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for _ in range(_MAX_ITERS):
        res = _Sigma(phi, x) - target
        if abs(res) <= tol * max(1.0, target):
            return x
        if res < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4.0 * np.finfo(float).eps * max(1.0, hi):
            return 0.5 * (lo + hi)
        if smooth:
            dS = (phi.value(x) + x * phi.derivative(x)) / phi1
            x_new = x - res / dS if dS > 0 else 0.5 * (lo + hi)
            if not lo < x_new < hi:
                x_new = 0.5 * (lo + hi)
        else:
            x_new = 0.5 * (lo + hi)
        x = x_new
    raise NoConvergence("Sigma inversion exceeded iteration cap")


def sigma_of_lambda(params, phi, psi, lam, tol=1e-14):
    """The v-extinct closure branch: sigma with Sigma(sigma) = alpha*Lambda(lambda)."""
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    if lam == 0.0:
        return 0.0
    alpha = compute_alpha(params, phi, psi)
    return invert_Sigma(params, phi, alpha * _Lambda(psi, lam), tol=tol)


def F_of_lambda(params, phi, psi, lam):
    """Net growth along the v-extinct family; steady states are its zeros."""
    sig = sigma_of_lambda(params, phi, psi, lam)
    return (params.eta_a * params.a * lam * (1.0 - lam)
            + params.eta_b * params.b * sig * (1.0 - sig))


def _near_jump(rate, x, scale=1.0):
    return any(abs(x - d) <= 1e-9 * max(1.0, abs(scale)) for d in rate.discontinuities())


def F_prime(params, phi, psi, lam):
    """Closed-form F'(lambda); raises at step-rate jumps where it is undefined.

    sigma'(lambda) = (a/b) * beta(lambda) / gamma(sigma(lambda), 0), so

        F'(lambda) = eta_a*a*(1-2*lambda) + eta_b*b*sigma'(lambda)*(1-2*sigma).
    """
    if not lam > 0:
        raise ValidationError(f"F_prime needs lambda > 0, got {lam}")
    sig = sigma_of_lambda(params, phi, psi, lam)
    if _near_jump(psi, lam) or _near_jump(phi, sig):
        raise DiscontinuityError(
            f"rate jump at lambda={lam} (sigma={sig}); F' undefined there")
    beta, gamma, _ = model_core.closure_partials(
        params, phi, psi, params.a * lam, params.b * sig, 0.0)
    sig_prime = (params.a / params.b) * beta / gamma
    return (params.eta_a * params.a * (1.0 - 2.0 * lam)
            + params.eta_b * params.b * sig_prime * (1.0 - 2.0 * sig))


def theorem_lambda_bound(params):
    """Upper bound on v-extinct lambda values (for alpha <= 1 ordering)."""
    return 0.5 + 0.5 * math.sqrt(
        1.0 + params.b * params.eta_b / (params.a * params.eta_a))


def default_lambda_max(params):
    # padded past the analytic confinement bound so the scan brackets safely
    return 1.0 + 0.5 * (1.0 + math.sqrt(
        1.0 + params.b * params.eta_b / (params.a * params.eta_a)))


def _F_scale(params, lambda_max):
    return max(params.eta_a * params.a, params.eta_b * params.b) * max(1.0, lambda_max) ** 2


def find_semitrivial_v_extinct(params, phi, psi, lambda_max=None, grid_n=4096):
    """Scan F over (0, lambda_max], refine sign changes, flag jump crossings.

    Returns the v-extinct equilibria ordered by lambda.  Sign changes are
    refined by bisection to an absolute lambda tolerance of 1e-12; a refined
    point where |F| stays large is a discontinuous crossing of a step rate
    and comes back flagged ``on_discontinuity``.

    Raises EmptyResult when no sign change is found (lambda_max too small).
    """
    if lambda_max is None:
        lambda_max = default_lambda_max(params)
    if lambda_max <= theorem_lambda_bound(params):
        raise ValidationError(
            f"lambda_max={lambda_max} does not clear the confinement bound "
            f"{theorem_lambda_bound(params)}")
    if grid_n < 100:
        raise ValidationError(f"grid_n must be >= 100, got {grid_n}")

    grid = np.linspace(lambda_max / grid_n, lambda_max, grid_n)
    F_vals = np.array([F_of_lambda(params, phi, psi, l) for l in grid])
    f_tol = 1e-9 * _F_scale(params, lambda_max)

    roots = []
    for i in range(grid_n - 1):
        f0, f1 = F_vals[i], F_vals[i + 1]
        if f0 == 0.0:
            roots.append(grid[i])
            continue
        if f0 * f1 < 0.0:
            lo, hi = grid[i], grid[i + 1]
            flo = f0
            while hi - lo > 1e-12:
                mid = 0.5 * (lo + hi)
                fm = F_of_lambda(params, phi, psi, mid)
                if fm == 0.0:
                    lo = hi = mid
                    break
                if flo * fm < 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            roots.append(0.5 * (lo + hi))
    if F_vals[-1] == 0.0:
        roots.append(grid[-1])

    # collapse duplicates from roots landing exactly on grid points
    roots.sort()
    unique = []
    for lam in roots:
        if not unique or lam - unique[-1] > 1e-9:
            unique.append(lam)

    items = []
    for lam in unique:
        F_here = F_of_lambda(params, phi, psi, lam)
        on_disc = abs(F_here) > f_tol
        sig = sigma_of_lambda(params, phi, psi, lam)
        items.append(Equilibrium(
            kind=KIND_V_EXTINCT,
            u_bar=float(params.a * lam + params.b * sig),
            v_bar=0.0,
            lam=float(lam), sigma=float(sig), delta=0.0,
            on_discontinuity=bool(on_disc)))
    if not items:
        raise EmptyResult(
            f"no sign change of F on (0, {lambda_max}]; increase lambda_max")
    return items


def steady_state_residual(params, phi, psi, eq):
    """Max residual of the three steady-state equations at the equilibrium."""
    u_a = params.a * eq.lam
    u_b = params.b * eq.sigma
    v = params.b * eq.delta
    f_a, f_b, f_v = model_core.eval_reactions(params, u_a, u_b, v)
    Q = model_core.eval_Q(params, phi, psi, u_a, u_b, v)
    return max(abs(f_a + f_b), abs(f_v), abs(Q))


def _residual_scale(params, phi, psi, eq):
    return max(params.eta_a * params.a,
               params.eta_b * params.b,
               params.eta_v * params.b,
               float(psi.value(eq.lam)) * params.a * eq.lam,
               float(phi.value(eq.sigma + eq.delta)) * params.b * eq.sigma)


def enumerate_equilibria(params, phi, psi, lambda_max=None, grid_n=4096,
                         residual_tol=1e-9):
    """All homogeneous steady states: trivial pair, v-extinct scan, coexistence.

    The coexistence state (a+b*alpha, b*(1-alpha)) is included exactly when
    alpha < 1.  Each state not sitting on a rate jump is substituted back
    into the steady-state equations; residuals beyond tolerance raise.
    """
    alpha = compute_alpha(params, phi, psi)
    items = [
        Equilibrium(KIND_TRIVIAL, 0.0, 0.0, 0.0, 0.0, 0.0),
        Equilibrium(KIND_U_EXTINCT, 0.0, params.b, 0.0, 0.0, 1.0),
    ]
    items.extend(find_semitrivial_v_extinct(params, phi, psi,
                                            lambda_max=lambda_max, grid_n=grid_n))
    if alpha < 1.0:
        items.append(Equilibrium(
            KIND_COEXISTENCE,
            params.a + params.b * alpha,
            params.b * (1.0 - alpha),
            1.0, alpha, 1.0 - alpha))

    for eq in items:
        if eq.on_discontinuity:
            continue  # a jump crossing cannot satisfy Q = 0 pointwise
        res = steady_state_residual(params, phi, psi, eq)
        scale = _residual_scale(params, phi, psi, eq)
        if res > residual_tol * scale:
            raise DietSwitchError(
                f"steady-state residual {res} exceeds {residual_tol * scale} "
                f"for {eq}")
    return EquilibriumSet(alpha=alpha, items=tuple(items))


def check_uniqueness_conditions(params, phi, psi):
    """Evaluate the two sufficient conditions for a unique v-extinct state."""
    alpha = compute_alpha(params, phi, psi)
    if alpha > 1.0:
        branch = "exclusion"
        value = alpha * _Lambda(psi, 0.5)
        holds = value <= 1.0
    elif alpha < 1.0:
        branch = "coexistence"
        value = _Sigma(phi, 0.5) / alpha
        holds = value <= 1.0
    else:
        branch = "boundary"
        value = None
        holds = None

    applies = False
    omega1 = omega2 = None
    phi_aff = phi.affine_coefficients()
    psi_aff = psi.affine_coefficients()
    if phi_aff is not None and psi_aff is not None:
        th1, th2 = phi_aff
        s, c = psi_aff
        if th1 > 0.0:
            omega1 = c / th2
            omega2 = s * th2 / (c * th1)
            applies = True
        elif s == 0.0:
            omega1 = c / th2
            omega2 = 0.0
            applies = True
    return UniquenessReport(
        alpha=alpha, branch=branch,
        half_point_condition_holds=holds,
        half_point_value=value,
        affine_structure_applies=applies,
        omega1=omega1, omega2=omega2)

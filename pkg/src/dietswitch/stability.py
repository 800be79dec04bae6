"""Linear stability of homogeneous steady states at both model scales.

The macroscopic linearization splits into Fourier modes: for the Neumann
Laplacian eigenvalue lambda_n the mode matrix is N_n = -lambda_n*J + M, where
M is the 2x2 reaction Jacobian in (u, v) after closure and J the 2x2
cross-diffusion matrix.  The mesoscopic linearization at the coexistence
triplet gives a 3x3 matrix M_eps whose spectrum contains a fast eigenvalue
-r/eps + O(1) and two slow eigenvalues converging to those of M at rate
O(eps); spectral_asymptotics_check measures both facts.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import equilibria as eqmod
from . import model_core
from .errors import (
    DiscontinuityError,
    InvalidEquilibrium,
    MatchingError,
    NoConvergence,
    ValidationError,
)

VERDICT_STABLE = "stable"
VERDICT_UNSTABLE = "unstable"
VERDICT_NON_HYPERBOLIC = "non-hyperbolic"

_MARGIN_FACTOR = 1e-8  # relative hyperbolicity margin on matrix norm


def _frob(A):
    return float(np.sqrt(np.sum(np.asarray(A, dtype=float) ** 2)))


def _closure_quantities(params, phi, psi, eq):
    """(beta, gamma, theta, r) at the equilibrium, guarding rate jumps."""
    lam, sig, dlt = eq.lam, eq.sigma, eq.delta
    for d in psi.discontinuities():
        if abs(lam - d) <= 1e-9 * max(1.0, lam):
            raise DiscontinuityError(
                f"psi jumps at {d}; no linearization at lambda={lam}")
    for d in phi.discontinuities():
        if abs(sig + dlt - d) <= 1e-9 * max(1.0, sig + dlt):
            raise DiscontinuityError(
                f"phi jumps at {d}; no linearization at sigma+delta={sig + dlt}")
    if eq.on_discontinuity:
        raise DiscontinuityError(
            "equilibrium is a jump crossing; the linearization does not exist")
    beta, gamma, theta = model_core.closure_partials(
        params, phi, psi, params.a * lam, params.b * sig, params.b * dlt)
    return beta, gamma, theta, beta + gamma


def build_M(params, phi, psi, eq):
    """Reaction Jacobian of the macroscopic system in (u, v) at a steady state."""
    beta, gamma, theta, r = _closure_quantities(params, phi, psi, eq)
    lam, sig, dlt = eq.lam, eq.sigma, eq.delta
    ea, eb, ev = params.eta_a, params.eta_b, params.eta_v
    ca = ea * (1.0 - 2.0 * lam)       # d f_a / d u_a, per unit
    cb = eb * (1.0 - 2.0 * sig - dlt)  # d f_b / d u_b at fixed v
    m11 = (ca * gamma + cb * beta) / r
    m12 = (ca * theta - cb * theta) / r - eb * sig
    m21 = -(ev / r) * dlt * beta
    m22 = (ev / r) * dlt * theta + ev * (1.0 - sig - 2.0 * dlt)
    return np.array([[m11, m12], [m21, m22]], dtype=float)


def build_J(params, phi, psi, eq):
    """Cross-diffusion matrix of the macroscopic limit at a steady state."""
    beta, gamma, theta, r = _closure_quantities(params, phi, psi, eq)
    return np.array([
        [(params.d_a * gamma + params.d_b * beta) / r,
         (params.d_a - params.d_b) * theta / r],
        [0.0, params.d_v],
    ], dtype=float)


def neumann_laplacian_eigenvalues(length, n_max):
    """(n*pi/length)^2 for n = 0..n_max on an interval with no-flux ends."""
    if not length > 0:
        raise ValidationError(f"interval length must be > 0, got {length}")
    if n_max < 0:
        raise ValidationError(f"n_max must be >= 0, got {n_max}")
    n = np.arange(n_max + 1, dtype=float)
    return (n * math.pi / length) ** 2


def build_N_n(M, J, lambda_n):
    """Mode matrix -lambda_n*J + M."""
    if lambda_n < 0:
        raise ValidationError(f"lambda_n must be >= 0, got {lambda_n}")
    return -lambda_n * np.asarray(J, dtype=float) + np.asarray(M, dtype=float)


def build_M_eps(params, phi, psi, eq_coex, eps=None):
    """Mesoscopic Jacobian at the coexistence triplet (a, b*alpha, b*(1-alpha)).

    The triplet is a steady state of the three-species system for every eps;
    the 1/eps block comes from the partial derivatives of Q there.
    """
    if eq_coex.kind != eqmod.KIND_COEXISTENCE:
        raise InvalidEquilibrium(
            f"mesoscopic Jacobian needs the coexistence state, got {eq_coex.kind}")
    if eps is None:
        eps = params.epsilon
    if eps is None or not eps > 0:
        raise ValidationError("a positive eps is required (argument or params.epsilon)")
    alpha = eq_coex.sigma
    beta, gamma, theta, _ = _closure_quantities(params, phi, psi, eq_coex)
    ea, eb, ev = params.eta_a, params.eta_b, params.eta_v
    d1Q, d2Q, d3Q = -beta, gamma, theta
    return np.array([
        [-ea + d1Q / eps, d2Q / eps, d3Q / eps],
        [-d1Q / eps, -eb * alpha - d2Q / eps, -eb * alpha - d3Q / eps],
        [0.0, -ev * (1.0 - alpha), -ev * (1.0 - alpha)],
    ], dtype=float)


def build_N_eps_n(M_eps, diffusivities, lambda_n):
    """Mesoscopic mode matrix -lambda_n*diag(d_a, d_b, d_v) + M_eps."""
    if lambda_n < 0:
        raise ValidationError(f"lambda_n must be >= 0, got {lambda_n}")
    d = np.asarray(diffusivities, dtype=float)
    if d.shape != (3,):
        raise ValidationError("diffusivities must be a 3-vector (d_a, d_b, d_v)")
    return -lambda_n * np.diag(d) + np.asarray(M_eps, dtype=float)


def _det3(A):
    return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
            + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))


def _minors_sum3(A):
    return ((A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
            + (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0])
            + (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]))


def routh_hurwitz_3x3(A):
    """Routh-Hurwitz verdict for a real 3x3 matrix.

    All eigenvalues have negative real part iff tr A < 0, det A < 0 and
    (sum of principal 2x2 minors)*(tr A) - det A < 0.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3):
        raise ValidationError(f"expected a 3x3 matrix, got shape {A.shape}")
    tr = float(np.trace(A))
    ms = float(_minors_sum3(A))
    det = float(_det3(A))
    conditions = (tr < 0.0, ms * tr - det < 0.0, det < 0.0)
    return {
        "trace": tr,
        "minors_sum": ms,
        "det": det,
        "conditions": conditions,
        "stable": all(conditions),
    }


def _sort_desc(roots):
    return tuple(sorted(roots, key=lambda z: (-z.real, -z.imag)))


def eigenvalues_2x2(A):
    """Roots of the characteristic quadratic, sorted by real part descending."""
    A = np.asarray(A, dtype=float)
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = tr * tr - 4.0 * det
    if disc >= 0.0:
        s = math.sqrt(disc)
        # form the larger-magnitude root first to avoid cancellation
        r1 = 0.5 * (tr + s) if tr >= 0 else 0.5 * (tr - s)
        r2 = det / r1 if r1 != 0.0 else 0.5 * (tr - s) if tr >= 0 else 0.5 * (tr + s)
        roots = (complex(r1), complex(r2))
    else:
        s = math.sqrt(-disc)
        roots = (complex(0.5 * tr, 0.5 * s), complex(0.5 * tr, -0.5 * s))
    return _sort_desc(roots)


def eigenvalues_3x3(A):
    """Roots of the characteristic cubic via its companion matrix.

    Residual |det(A - mu*I)| is checked against 1e-9 * ||A||_F^3 per root.
    """
    A = np.asarray(A, dtype=float)
    tr = float(np.trace(A))
    ms = float(_minors_sum3(A))
    det = float(_det3(A))
    roots = np.roots([1.0, -tr, ms, -det])
    norm = _frob(A)
    for mu in roots:
        res = abs(_det3(A - mu * np.eye(3)))
        if res > 1e-9 * max(norm ** 3, 1e-300):
            raise NoConvergence(
                f"characteristic-polynomial root residual {res} too large "
                f"(bound {1e-9 * norm ** 3})")
    return _sort_desc(tuple(complex(z) for z in roots))


def _spectral_verdict(eigenvalues, margin):
    re = [z.real for z in eigenvalues]
    if any(x > margin for x in re):
        return VERDICT_UNSTABLE
    if all(x < -margin for x in re):
        return VERDICT_STABLE
    return VERDICT_NON_HYPERBOLIC


def spectral_asymptotics_check(params, phi, psi, eq_coex, lambda_n, eps_list):
    """Measure the eps-asymptotics of the mesoscopic spectrum for one mode.

    The two slow eigenvalues of N_eps_n must approach the eigenvalues of the
    2x2 mode matrix N_n at rate O(eps), and eps times the fast eigenvalue
    must approach -r = -(beta+gamma).  Returns slopes, the r estimate at the
    smallest eps, and a combined pass flag (slope in [0.8, 1.2], r within 20%).
    """
    eps_list = sorted(float(e) for e in eps_list)
    if len(eps_list) < 3:
        raise ValidationError("need at least 3 eps values")
    if eps_list[-1] / eps_list[0] < 99.0:
        raise ValidationError("eps values must span at least two decades")
    beta, gamma_cl, theta, r = _closure_quantities(params, phi, psi, eq_coex)
    M = build_M(params, phi, psi, eq_coex)
    J = build_J(params, phi, psi, eq_coex)
    N = build_N_n(M, J, lambda_n)
    slow_limits = eigenvalues_2x2(N)
    diffs = (params.d_a, params.d_b, params.d_v)

    gaps = []
    fast_scaled = []
    for eps in eps_list:
        Me = build_M_eps(params, phi, psi, eq_coex, eps=eps)
        Ne = build_N_eps_n(Me, diffs, lambda_n)
        mus = eigenvalues_3x3(Ne)
        fast = min(mus, key=lambda z: z.real)
        slow = [z for z in mus if z is not fast]
        matched = []
        for g in slow_limits:
            dists = sorted(abs(mu - g) for mu in slow)
            if len(dists) > 1 and dists[1] < 2.0 * dists[0]:
                raise MatchingError(
                    f"ambiguous eigenvalue pairing at eps={eps}: distances {dists}")
            matched.append(min(slow, key=lambda mu: abs(mu - g)))
        gaps.append(max(abs(mu - g) for mu, g in zip(matched, slow_limits)))
        fast_scaled.append(eps * fast.real)

    log_e = np.log(np.asarray(eps_list))
    log_g = np.log(np.asarray(gaps))
    slope = float(np.polyfit(log_e, log_g, 1)[0])
    r_estimate = -fast_scaled[0]  # smallest eps
    passed = (0.8 <= slope <= 1.2) and abs(r_estimate - r) / r <= 0.2
    return {
        "slopes": {"slow_gap": slope},
        "r_estimate": r_estimate,
        "r_expected": r,
        "pass": passed,
        "eps": list(eps_list),
        "slow_gaps": [float(g) for g in gaps],
        "fast_scaled": [float(f) for f in fast_scaled],
    }


@dataclass(frozen=True)
class ModeReport:
    lambda_n: float
    N_n: np.ndarray
    eigenvalues: tuple
    verdict: str


@dataclass(frozen=True)
class MesoModeReport:
    lambda_n: float
    N_eps_n: np.ndarray
    routh_table: dict
    eigenvalues: tuple
    verdict: str


@dataclass(frozen=True)
class MesoBlock:
    eps: float
    M_eps: np.ndarray
    modes: tuple


@dataclass(frozen=True)
class StabilityReport:
    equilibrium: eqmod.Equilibrium
    classification: str        # verdict from the analytic theory
    overall_verdict: str       # verdict from the computed spectra
    M: np.ndarray = None
    J: np.ndarray = None
    modes: tuple = ()
    meso: tuple = ()           # MesoBlock per eps, coexistence only
    errors: tuple = ()

    def to_json_dict(self):
        def mat(A):
            return None if A is None else [[float(x) for x in row] for row in A]

        def eigs(es):
            return [[z.real, z.imag] for z in es]

        d = {
            "equilibrium": {
                "kind": self.equilibrium.kind,
                "u_bar": self.equilibrium.u_bar,
                "v_bar": self.equilibrium.v_bar,
                "lam": self.equilibrium.lam,
                "sigma": self.equilibrium.sigma,
                "delta": self.equilibrium.delta,
                "on_discontinuity": self.equilibrium.on_discontinuity,
            },
            "classification": self.classification,
            "overall_verdict": self.overall_verdict,
            "M": mat(self.M),
            "J": mat(self.J),
            "modes": [
                {"lambda_n": m.lambda_n, "N_n": mat(m.N_n),
                 "eigenvalues": eigs(m.eigenvalues), "verdict": m.verdict}
                for m in self.modes
            ],
            "errors": list(self.errors),
        }
        if self.meso:
            d["meso"] = [
                {"eps": b.eps, "M_eps": mat(b.M_eps),
                 "modes": [
                     {"lambda_n": m.lambda_n, "N_eps_n": mat(m.N_eps_n),
                      "routh_table": {
                          "trace": m.routh_table["trace"],
                          "minors_sum": m.routh_table["minors_sum"],
                          "det": m.routh_table["det"],
                          "conditions": list(m.routh_table["conditions"]),
                          "stable": m.routh_table["stable"],
                      },
                      "eigenvalues": eigs(m.eigenvalues), "verdict": m.verdict}
                     for m in b.modes
                 ]}
                for b in self.meso
            ]
        return d


def classify_equilibrium(params, phi, psi, eq, alpha):
    """Analytic verdict per the steady-state theory, independent of spectra."""
    if eq.kind in (eqmod.KIND_TRIVIAL, eqmod.KIND_U_EXTINCT):
        return VERDICT_UNSTABLE
    if eq.kind == eqmod.KIND_COEXISTENCE:
        return VERDICT_STABLE
    # v-extinct family
    if eq.on_discontinuity:
        return VERDICT_NON_HYPERBOLIC
    margin = _MARGIN_FACTOR * max(1.0, params.eta_a * params.a,
                                  params.eta_b * params.b)
    if abs(alpha - 1.0) <= 1e-12:
        return VERDICT_NON_HYPERBOLIC
    if alpha < 1.0:
        return VERDICT_UNSTABLE
    try:
        fp = eqmod.F_prime(params, phi, psi, eq.lam)
    except DiscontinuityError:
        return VERDICT_NON_HYPERBOLIC
    if abs(fp) <= margin:
        return VERDICT_NON_HYPERBOLIC
    return VERDICT_STABLE if fp < 0.0 else VERDICT_UNSTABLE


def _combine(verdicts):
    if any(v == VERDICT_UNSTABLE for v in verdicts):
        return VERDICT_UNSTABLE
    if any(v == VERDICT_NON_HYPERBOLIC for v in verdicts):
        return VERDICT_NON_HYPERBOLIC
    return VERDICT_STABLE


def stability_report(params, phi, psi, n_max=64, eps_list=None, length=1.0,
                     lambda_max=None, grid_n=4096):
    """Full per-equilibrium stability analysis; one report per steady state.

    For every equilibrium the macroscopic mode matrices N_n are assembled for
    n = 0..n_max and classified by their spectra; for the coexistence state
    and each requested eps the mesoscopic matrices N_eps_n are added with
    Routh-Hurwitz tables.  Failures (rate jumps, residual blowups) are
    collected per equilibrium instead of aborting the whole report.
    """
    eq_set = eqmod.enumerate_equilibria(params, phi, psi,
                                        lambda_max=lambda_max, grid_n=grid_n)
    lambdas = neumann_laplacian_eigenvalues(length, n_max)
    reports = []
    for eq in eq_set.items:
        classification = classify_equilibrium(params, phi, psi, eq, eq_set.alpha)
        errors = []
        M = J = None
        modes = []
        meso_blocks = []
        try:
            M = build_M(params, phi, psi, eq)
            J = build_J(params, phi, psi, eq)
        except DiscontinuityError as exc:
            errors.append(str(exc))
        if M is not None:
            margin = _MARGIN_FACTOR * max(_frob(M), _frob(J))
            for ln in lambdas:
                N = build_N_n(M, J, ln)
                es = eigenvalues_2x2(N)
                modes.append(ModeReport(
                    lambda_n=float(ln), N_n=N, eigenvalues=es,
                    verdict=_spectral_verdict(es, max(margin, _MARGIN_FACTOR * _frob(N)))))
            if eq.kind == eqmod.KIND_COEXISTENCE and eps_list:
                for eps in eps_list:
                    try:
                        Me = build_M_eps(params, phi, psi, eq, eps=eps)
                    except (InvalidEquilibrium, ValidationError,
                            DiscontinuityError) as exc:
                        errors.append(f"eps={eps}: {exc}")
                        continue
                    meso_modes = []
                    for ln in lambdas:
                        Ne = build_N_eps_n(
                            Me, (params.d_a, params.d_b, params.d_v), ln)
                        es3 = eigenvalues_3x3(Ne)
                        meso_modes.append(MesoModeReport(
                            lambda_n=float(ln), N_eps_n=Ne,
                            routh_table=routh_hurwitz_3x3(Ne),
                            eigenvalues=es3,
                            verdict=_spectral_verdict(
                                es3, _MARGIN_FACTOR * _frob(Ne))))
                    meso_blocks.append(MesoBlock(
                        eps=float(eps), M_eps=Me, modes=tuple(meso_modes)))

        all_verdicts = [m.verdict for m in modes]
        for b in meso_blocks:
            all_verdicts.extend(m.verdict for m in b.modes)
        overall = _combine(all_verdicts) if all_verdicts else classification
        if modes and overall != classification:
            errors.append(
                f"analytic classification {classification!r} disagrees with "
                f"spectral verdict {overall!r}")
        reports.append(StabilityReport(
            equilibrium=eq, classification=classification,
            overall_verdict=overall, M=M, J=J,
            modes=tuple(modes), meso=tuple(meso_blocks),
            errors=tuple(errors)))
    return reports

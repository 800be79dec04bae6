"""Mode matrices, spectra, Routh-Hurwitz, and the report assembly."""

import dataclasses
import json
import math

import numpy as np
import pytest

from dietswitch import equilibria as eq
from dietswitch import model_core as mc
from dietswitch import stability as st
from dietswitch.errors import (
    DiscontinuityError,
    InvalidEquilibrium,
    ValidationError,
)


def _coexistence_eq(params, phi, psi):
    return eq.enumerate_equilibria(params, phi, psi).coexistence()


class TestModeMachinery:
    def test_neumann_eigenvalues(self):
        lams = st.neumann_laplacian_eigenvalues(1.0, 4)
        want = [(n * math.pi) ** 2 for n in range(5)]
        assert np.allclose(lams, want)
        assert lams[0] == 0.0
        with pytest.raises(ValidationError):
            st.neumann_laplacian_eigenvalues(0.0, 4)
        with pytest.raises(ValidationError):
            st.neumann_laplacian_eigenvalues(1.0, -1)

    def test_build_N_n(self):
        M = np.array([[1.0, 2.0], [3.0, 4.0]])
        J = np.array([[0.5, 0.1], [0.0, 0.2]])
        N = st.build_N_n(M, J, 2.0)
        assert np.allclose(N, M - 2.0 * J)
        with pytest.raises(ValidationError):
            st.build_N_n(M, J, -1.0)


class TestMacroJacobians:
    def test_M_matches_reduced_system_fd(self, coexistence_params,
                                         phi_bench, psi_bench):
        """The analytic M must be the Jacobian of the closed (u, v) system."""
        p = coexistence_params
        co = _coexistence_eq(p, phi_bench, psi_bench)
        M = st.build_M(p, phi_bench, psi_bench, co)

        def rhs(u, v):
            ub = mc.solve_ub_star(p, phi_bench, psi_bench, u, v, tol=1e-14)
            f_a, f_b, f_v = mc.eval_reactions(p, u - ub, ub, v)
            return np.array([f_a + f_b, f_v])

        u0, v0 = co.u_bar, co.v_bar
        h = 1e-6
        fd = np.column_stack([
            (rhs(u0 + h, v0) - rhs(u0 - h, v0)) / (2 * h),
            (rhs(u0, v0 + h) - rhs(u0, v0 - h)) / (2 * h),
        ])
        assert np.allclose(M, fd, rtol=1e-6, atol=1e-6)

    def test_M_oracle_values(self, coexistence_params, phi_bench,
                             psi_bench):
        # beta = 11, gamma = 2.25, theta = 0.75, r = 13.25 at the
        # coexistence point of the benchmark parameters
        co = _coexistence_eq(coexistence_params, phi_bench, psi_bench)
        M = st.build_M(coexistence_params, phi_bench, psi_bench, co)
        assert np.trace(M) == pytest.approx(-23.25 / 13.25 - 9.433962264,
                                            rel=1e-9)
        assert np.linalg.det(M) == pytest.approx(3.3962264150943398,
                                                 rel=1e-12)

    def test_J_matches_flux_map_fd(self, phi_bench, psi_bench):
        p = mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0,
                           d_a=2.0, d_b=0.1, d_v=0.1)
        co = _coexistence_eq(p, phi_bench, psi_bench)
        J = st.build_J(p, phi_bench, psi_bench, co)

        def flux(u, v):
            ub = mc.solve_ub_star(p, phi_bench, psi_bench, u, v, tol=1e-14)
            return np.array([p.d_a * (u - ub) + p.d_b * ub, p.d_v * v])

        u0, v0 = co.u_bar, co.v_bar
        h = 1e-6
        fd = np.column_stack([
            (flux(u0 + h, v0) - flux(u0 - h, v0)) / (2 * h),
            (flux(u0, v0 + h) - flux(u0, v0 - h)) / (2 * h),
        ])
        assert np.allclose(J, fd, rtol=1e-6, atol=1e-8)
        assert J[1, 0] == 0.0  # v diffuses independently

    def test_jump_equilibrium_has_no_linearization(self, nonunique_setup):
        params, phi, psi = nonunique_setup
        states = eq.find_semitrivial_v_extinct(params, phi, psi,
                                               lambda_max=2.0)
        jump = next(s for s in states if s.on_discontinuity)
        with pytest.raises(DiscontinuityError):
            st.build_M(params, phi, psi, jump)


class TestMesoJacobian:
    def test_M_eps_matches_fd(self, coexistence_params, phi_bench,
                              psi_bench):
        p = dataclasses.replace(coexistence_params, epsilon=0.05)
        co = _coexistence_eq(p, phi_bench, psi_bench)
        Me = st.build_M_eps(p, phi_bench, psi_bench, co)

        def rhs(y):
            ua, ub, v = y
            f_a, f_b, f_v = mc.eval_reactions(p, ua, ub, v)
            q = mc.eval_Q(p, phi_bench, psi_bench, ua, ub, v) / p.epsilon
            return np.array([f_a + q, f_b - q, f_v])

        y0 = np.array([p.a, p.b * co.sigma, p.b * co.delta])
        h = 1e-6
        fd = np.zeros((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd[:, j] = (rhs(y0 + e) - rhs(y0 - e)) / (2 * h)
        assert np.allclose(Me, fd, rtol=1e-5, atol=1e-5)

    def test_requires_coexistence_state(self, coexistence_params, phi_bench,
                                        psi_bench):
        trivial = eq.Equilibrium(eq.KIND_TRIVIAL, 0.0, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(InvalidEquilibrium):
            st.build_M_eps(coexistence_params, phi_bench, psi_bench,
                           trivial, eps=0.1)

    def test_requires_positive_eps(self, phi_bench, psi_bench):
        p = mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0)
        co = _coexistence_eq(p, phi_bench, psi_bench)
        with pytest.raises(ValidationError):
            st.build_M_eps(p, phi_bench, psi_bench, co)


class TestSpectra:
    def test_eigenvalues_2x2_against_numpy(self, rng):
        for _ in range(200):
            A = rng.normal(size=(2, 2)) * 10 ** rng.uniform(-2, 2)
            got = np.array(st.eigenvalues_2x2(A))
            want = np.sort_complex(np.linalg.eigvals(A))[::-1]
            got_s = sorted(got, key=lambda z: (z.real, z.imag))
            want_s = sorted(want, key=lambda z: (z.real, z.imag))
            scale = max(1.0, np.abs(A).max())
            assert np.allclose(got_s, want_s, atol=1e-8 * scale)

    def test_eigenvalues_3x3_against_numpy(self, rng):
        for _ in range(200):
            A = rng.normal(size=(3, 3)) * 10 ** rng.uniform(-1, 1)
            got = np.array(st.eigenvalues_3x3(A))
            want = np.linalg.eigvals(A)
            got_s = sorted(got, key=lambda z: (z.real, z.imag))
            want_s = sorted(want, key=lambda z: (z.real, z.imag))
            scale = max(1.0, np.abs(A).max())
            assert np.allclose(got_s, want_s, atol=1e-6 * scale)

    def test_routh_hurwitz_agrees_with_spectra(self, rng):
        margin = 1e-6
        checked = 0
        for _ in range(2000):
            A = rng.normal(size=(3, 3)) * 10 ** rng.uniform(-1, 1)
            max_re = max(z.real for z in np.linalg.eigvals(A))
            if abs(max_re) < margin:
                continue  # not hyperbolic enough to grade
            verdict = st.routh_hurwitz_3x3(A)
            assert verdict["stable"] == (max_re < 0), (A, max_re)
            checked += 1
        assert checked > 1500

    def test_routh_hurwitz_shape_guard(self):
        with pytest.raises(ValidationError):
            st.routh_hurwitz_3x3(np.eye(2))


class TestAsymptotics:
    def test_benchmark_passes(self, phi_bench, psi_bench):
        p = mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0,
                           d_a=2.0, d_b=0.1, d_v=0.1)
        co = _coexistence_eq(p, phi_bench, psi_bench)
        lam1 = st.neumann_laplacian_eigenvalues(1.0, 1)[1]
        out = st.spectral_asymptotics_check(p, phi_bench, psi_bench, co,
                                            lam1, [1e-2, 1e-3, 1e-4])
        assert out["pass"]
        assert out["r_expected"] == pytest.approx(13.25)
        assert 0.8 <= out["slopes"]["slow_gap"] <= 1.2
        assert out["r_estimate"] == pytest.approx(13.25, rel=0.2)

    def test_eps_span_guards(self, coexistence_params, phi_bench,
                             psi_bench):
        co = _coexistence_eq(coexistence_params, phi_bench, psi_bench)
        with pytest.raises(ValidationError):
            st.spectral_asymptotics_check(coexistence_params, phi_bench,
                                          psi_bench, co, 0.0, [1e-2, 1e-3])
        with pytest.raises(ValidationError):
            st.spectral_asymptotics_check(coexistence_params, phi_bench,
                                          psi_bench, co, 0.0,
                                          [1e-2, 2e-2, 4e-2])


class TestReport:
    def test_benchmark_verdicts(self, phi_bench, psi_bench):
        p = mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0,
                           d_a=2.0, d_b=0.1, d_v=0.1)
        reports = st.stability_report(p, phi_bench, psi_bench, n_max=16)
        by_kind = {r.equilibrium.kind: r for r in reports}
        assert by_kind[eq.KIND_TRIVIAL].overall_verdict == st.VERDICT_UNSTABLE
        assert by_kind[eq.KIND_U_EXTINCT].overall_verdict == \
            st.VERDICT_UNSTABLE
        assert by_kind[eq.KIND_V_EXTINCT].overall_verdict == \
            st.VERDICT_UNSTABLE
        co = by_kind[eq.KIND_COEXISTENCE]
        assert co.overall_verdict == st.VERDICT_STABLE
        assert not co.errors
        # no cross-diffusion-driven instability: every mode matrix passes
        for mode in co.modes:
            N = np.asarray(mode.N_n)
            assert np.linalg.det(N) > 0
            assert np.trace(N) < 0
            assert mode.verdict == st.VERDICT_STABLE

    def test_extinction_boundary_non_hyperbolic(self, extinction_params,
                                                phi_bench, psi_bench):
        reports = st.stability_report(extinction_params, phi_bench,
                                      psi_bench, n_max=4)
        by_kind = {r.equilibrium.kind: r for r in reports}
        assert by_kind[eq.KIND_V_EXTINCT].overall_verdict == \
            st.VERDICT_NON_HYPERBOLIC

    def test_v_extinct_stable_when_alpha_above_one(self, phi_bench,
                                                   psi_bench):
        p = mc.ModelParams(a=1.5, b=5.0, eta_a=3.0, eta_b=2.0, eta_v=40.0)
        assert eq.compute_alpha(p, phi_bench, psi_bench) > 1.0
        reports = st.stability_report(p, phi_bench, psi_bench, n_max=4)
        by_kind = {r.equilibrium.kind: r for r in reports}
        assert eq.KIND_COEXISTENCE not in by_kind
        assert by_kind[eq.KIND_V_EXTINCT].overall_verdict == \
            st.VERDICT_STABLE

    def test_meso_blocks_routh_stable(self, phi_bench, psi_bench):
        p = mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0,
                           d_a=2.0, d_b=0.1, d_v=0.1)
        reports = st.stability_report(p, phi_bench, psi_bench, n_max=4,
                                      eps_list=[1e-1, 1e-2])
        co = next(r for r in reports
                  if r.equilibrium.kind == eq.KIND_COEXISTENCE)
        assert len(co.meso) == 2
        for block in co.meso:
            for mode in block.modes:
                assert mode.routh_table["stable"]
                assert mode.verdict == st.VERDICT_STABLE

    def test_jump_state_reported_with_errors(self, nonunique_setup):
        params, phi, psi = nonunique_setup
        reports = st.stability_report(params, phi, psi, n_max=2)
        jumps = [r for r in reports if r.equilibrium.on_discontinuity]
        assert len(jumps) == 1
        assert jumps[0].classification == st.VERDICT_NON_HYPERBOLIC
        assert jumps[0].errors
        assert jumps[0].M is None

    def test_report_json_round_trip(self, coexistence_params, phi_bench,
                                    psi_bench):
        reports = st.stability_report(coexistence_params, phi_bench,
                                      psi_bench, n_max=2)
        text = json.dumps([r.to_json_dict() for r in reports])
        docs = json.loads(text)
        assert len(docs) == len(reports)
        assert all("overall_verdict" in d for d in docs)

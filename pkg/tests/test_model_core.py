"""Rates, parameter containers, reactions, closure solver, entropy."""

import numpy as np
import pytest

from dietswitch import model_core as mc
from dietswitch.errors import (
    DegenerateInput,
    DomainError,
    ValidationError,
)


class TestRates:
    def test_affine_values_and_derivative(self):
        r = mc.AffineRate(2.0, 0.5)
        assert r.value(0.0) == 0.5
        assert r.value(1.5) == 3.5
        assert r.derivative(10.0) == 2.0
        out = r.value(np.array([0.0, 1.0]))
        assert np.array_equal(out, [0.5, 2.5])

    def test_affine_validation(self):
        with pytest.raises(ValidationError):
            mc.AffineRate(-1.0, 0.5)
        with pytest.raises(ValidationError):
            mc.AffineRate(1.0, 0.0)

    def test_scaled_composition(self):
        base = mc.AffineRate(1.0, 0.5)
        r = mc.ScaledRate(2.0, 3.0, base)
        x = 0.7
        assert r.value(x) == pytest.approx(2.0 * (3.0 * x + 0.5))
        assert r.derivative(x) == pytest.approx(6.0)

    def test_scaled_encoding_matches_value(self):
        base = mc.AffineRate(1.5, 0.25)
        r = mc.ScaledRate(2.0, 0.5, base)
        code, p = r.kernel_encoding()
        assert code == mc.KERNEL_AFFINE
        for x in (0.0, 0.3, 2.0):
            assert p[0] * x + p[1] == pytest.approx(r.value(x))

    def test_step_requires_explicit_flag(self):
        with pytest.raises(ValidationError):
            mc.StepRate(0.1, 0.3, 1.6)
        r = mc.StepRate(0.1, 0.3, 1.6, allow_h1_violation=True)
        assert r.value(1.6) == 0.1
        assert r.value(1.6000001) == 0.3
        assert r.discontinuities() == (1.6,)

    def test_table_interpolation(self):
        r = mc.TableRate([0.0, 1.0, 2.0], [1.0, 3.0, 3.0])
        assert r.value(0.5) == pytest.approx(2.0)
        assert r.value(5.0) == 3.0  # held constant beyond the table
        assert r.derivative(0.5) == pytest.approx(2.0)
        assert r.derivative(1.5) == pytest.approx(0.0)

    def test_table_validation(self):
        with pytest.raises(ValidationError):
            mc.TableRate([0.0, 0.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            mc.TableRate([0.0, 1.0], [2.0, 1.0])  # decreasing

    def test_warped_values_and_domain(self):
        base = mc.AffineRate(0.5, 0.6)
        r = mc.WarpedRate(base, 2.0)
        x = 0.25
        assert r.value(x) == pytest.approx(base.value(2.0 * x / (1 - x)))
        with pytest.raises(DomainError):
            r.value(0.9995)

    def test_warped_derivative_chain_rule(self):
        r = mc.WarpedRate(mc.AffineRate(0.5, 0.6), 2.0)
        x, h = 0.4, 1e-7
        fd = (r.value(x + h) - r.value(x - h)) / (2 * h)
        assert r.derivative(x) == pytest.approx(fd, rel=1e-6)

    def test_warped_discontinuity_pullback(self):
        base = mc.StepRate(0.1, 0.3, 1.6, allow_h1_violation=True)
        r = mc.WarpedRate(base, 2.0)
        (d,) = r.discontinuities()
        # the warp maps d back onto the base jump
        assert 2.0 * d / (1 - d) == pytest.approx(1.6)

    def test_rate_is_smooth(self):
        smooth = mc.AffineRate(1.0, 0.5)
        jumpy = mc.StepRate(0.1, 0.3, 1.6, allow_h1_violation=True)
        assert mc.rate_is_smooth(smooth, smooth)
        assert not mc.rate_is_smooth(smooth, jumpy)


class TestParams:
    def test_model_params_validation(self):
        with pytest.raises(ValidationError):
            mc.ModelParams(a=-1.0, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0)
        with pytest.raises(ValidationError):
            mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0,
                           d_a=-0.1)
        with pytest.raises(ValidationError):
            mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0,
                           epsilon=0.0)
        p = mc.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0, eta_v=40.0)
        assert p.epsilon is None

    def test_micro_params_scale_ordering(self, micro_bench):
        import dataclasses
        with pytest.raises(ValidationError):
            dataclasses.replace(micro_bench, delta=0.1)  # delta >= epsilon


class TestStates:
    def test_meso_state_length_mismatch(self):
        with pytest.raises(ValidationError):
            mc.MesoState(np.ones(4), np.ones(4), np.ones(5))

    def test_negative_entries_rejected(self):
        with pytest.raises(ValidationError):
            mc.MesoState(1.0, -1.0, 0.5)
        with pytest.raises(ValidationError):
            mc.MacroState(np.array([1.0, -2.0]), np.array([0.5, 0.5]))

    def test_tiny_negative_tolerated(self):
        s = mc.MesoState(1.0, -1e-13, 0.5)
        assert s.u_b == -1e-13


class TestReactionsAndQ:
    def test_reactions_oracle(self, coexistence_params):
        f_a, f_b, f_v = mc.eval_reactions(coexistence_params, 1.0, 2.0, 3.0)
        assert f_a == pytest.approx(3.0 * 1.0 * (1 - 1.0 / 1.5))
        assert f_b == pytest.approx(2.0 * 2.0 * (1 - 5.0 / 8.0))
        assert f_v == pytest.approx(40.0 * 3.0 * (1 - 5.0 / 8.0))

    def test_reactions_vanish_at_capacity(self, coexistence_params):
        f_a, f_b, f_v = mc.eval_reactions(coexistence_params, 1.5, 5.0, 3.0)
        assert f_a == 0.0
        assert f_b == 0.0
        assert f_v == 0.0

    def test_q_zero_on_balance_manifold(self, coexistence_params,
                                        phi_bench, psi_bench):
        # pick u_a, v; solve the balance by construction for u_b
        u_a, v = 1.0, 2.0
        lhs = psi_bench.value(u_a / 1.5) * u_a
        # phi((u_b+v)/8)*u_b = lhs is quadratic in u_b; root by bisection
        lo, hi = 0.0, 8.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if phi_bench.value((mid + v) / 8.0) * mid < lhs:
                lo = mid
            else:
                hi = mid
        q = mc.eval_Q(coexistence_params, phi_bench, psi_bench, u_a, lo, v)
        assert abs(q) < 1e-12

    def test_q_signs(self, coexistence_params, phi_bench, psi_bench):
        # all mass in u_b: conversion flows toward u_a, Q > 0
        assert mc.eval_Q(coexistence_params, phi_bench, psi_bench,
                         0.0, 3.0, 1.0) > 0
        assert mc.eval_Q(coexistence_params, phi_bench, psi_bench,
                         3.0, 0.0, 1.0) < 0


class TestClosureSolver:
    def test_contract_random_states(self, coexistence_params, phi_bench,
                                    psi_bench, rng):
        p = coexistence_params
        for _ in range(300):
            u = float(rng.uniform(0.01, 12.0))
            v = float(rng.uniform(0.0, 6.0))
            ub = mc.solve_ub_star(p, phi_bench, psi_bench, u, v)
            assert 0.0 < ub < u
            q = mc.eval_Q(p, phi_bench, psi_bench, u - ub, ub, v)
            assert abs(q) <= 1e-12 * mc.closure_scale(p, phi_bench,
                                                      psi_bench, u, v)

    def test_monotone_in_u(self, coexistence_params, phi_bench, psi_bench,
                           rng):
        p = coexistence_params
        for _ in range(100):
            v = float(rng.uniform(0.0, 4.0))
            us = np.sort(rng.uniform(0.05, 10.0, size=4))
            ubs = [mc.solve_ub_star(p, phi_bench, psi_bench, float(u), v)
                   for u in us]
            assert all(b1 < b2 for b1, b2 in zip(ubs, ubs[1:]))

    def test_zero_u_extension(self, coexistence_params, phi_bench,
                              psi_bench):
        assert mc.solve_ub_star(coexistence_params, phi_bench, psi_bench,
                                0.0, 1.0) == 0.0

    def test_negative_inputs_rejected(self, coexistence_params, phi_bench,
                                      psi_bench):
        with pytest.raises(ValidationError):
            mc.solve_ub_star(coexistence_params, phi_bench, psi_bench,
                             -1.0, 1.0)

    def test_step_rate_bisection(self, nonunique_setup):
        params, phi, psi = nonunique_setup
        ub = mc.solve_ub_star(params, phi, psi, 1.0, 0.5)
        assert 0.0 < ub < 1.0
        q = mc.eval_Q(params, phi, psi, 1.0 - ub, ub, 0.5)
        assert abs(q) <= 1e-12 * mc.closure_scale(params, phi, psi, 1.0, 0.5)

    def test_partials_match_finite_differences(self, coexistence_params,
                                               phi_bench, psi_bench):
        p = coexistence_params
        ua, ub, v = 0.8, 3.0, 1.5
        beta, gamma, theta = mc.closure_partials(p, phi_bench, psi_bench,
                                                 ua, ub, v)
        h = 1e-7

        def q(ua_, ub_, v_):
            return mc.eval_Q(p, phi_bench, psi_bench, ua_, ub_, v_)

        # Q = phi(sd)*u_b - psi(lam)*u_a: dQ/du_a = -beta, dQ/du_b = gamma,
        # dQ/dv = theta (the normalization makes them per-unit-density)
        assert (q(ua + h, ub, v) - q(ua - h, ub, v)) / (2 * h) == \
            pytest.approx(-beta, rel=1e-6)
        assert (q(ua, ub + h, v) - q(ua, ub - h, v)) / (2 * h) == \
            pytest.approx(gamma, rel=1e-6)
        assert (q(ua, ub, v + h) - q(ua, ub, v - h)) / (2 * h) == \
            pytest.approx(theta, rel=1e-6)

    def test_dub_star_du_fraction(self, coexistence_params, phi_bench,
                                  psi_bench, rng):
        p = coexistence_params
        for _ in range(50):
            u = float(rng.uniform(0.1, 9.0))
            v = float(rng.uniform(0.0, 4.0))
            d = mc.dub_star_du(p, phi_bench, psi_bench, u, v)
            assert 0.0 < d < 1.0
            h = 1e-6 * max(1.0, u)
            ub_p = mc.solve_ub_star(p, phi_bench, psi_bench, u + h, v,
                                    tol=1e-14)
            ub_m = mc.solve_ub_star(p, phi_bench, psi_bench, u - h, v,
                                    tol=1e-14)
            assert d == pytest.approx((ub_p - ub_m) / (2 * h), rel=1e-4)

    def test_degenerate_input(self, coexistence_params, phi_bench,
                              psi_bench):
        with pytest.raises(DegenerateInput):
            mc.dub_star_du(coexistence_params, phi_bench, psi_bench,
                           0.0, 1.0)


class TestMicroMap:
    def test_mapped_coefficients(self, micro_bench):
        params, phi, psi = mc.map_micro_to_meso(micro_bench)
        assert params.a == pytest.approx(6.0)
        assert params.b == pytest.approx(8.0)
        assert params.eta_a == pytest.approx(3.0)
        assert params.eta_b == pytest.approx(2.0)
        assert params.eta_v == pytest.approx(1.0)
        assert params.epsilon == micro_bench.epsilon

    def test_mapped_rates_compose_slow_manifold(self, micro_bench):
        _, phi, psi = mc.map_micro_to_meso(micro_bench)
        m = micro_bench
        x = 0.3
        # phi(x) = Phi((r2/A2) x/(1-x)): crowding through resource depletion
        assert phi.value(x) == pytest.approx(
            m.Phi.value((m.r2 / m.A2) * x / (1 - x)))
        assert psi.value(x) == pytest.approx(
            m.Psi.value((m.r1 / m.A1) * x / (1 - x)))

    def test_slow_manifold_resources(self, micro_bench):
        s1, s2 = mc.micro_slow_manifold(micro_bench, 0.75, 2.0, 2.0)
        assert s1 == pytest.approx(3.0 * (1 - 0.75 / 6.0))
        assert s2 == pytest.approx(4.0 * (1 - 4.0 / 8.0))

    def test_state_map_scales_v(self, micro_bench):
        import dataclasses
        m = dataclasses.replace(micro_bench, pV=2.0)
        ua, ub, v = mc.micro_to_meso_state(m, 1.0, 2.0, 3.0)
        assert (ua, ub) == (1.0, 2.0)
        assert v == pytest.approx(2.0 * 3.0)


class TestEntropyDensities:
    def test_affine_closed_forms(self, coexistence_params, phi_bench,
                                 psi_bench):
        # integral_0^u psi(z/a) z dz with psi = 5x+1, a = 1.5, u = 1.5
        h1 = mc.entropy_density_h1(coexistence_params, psi_bench, 1.5)
        assert h1 == pytest.approx(4.875, abs=1e-14)
        # integral_0^6 phi((z+2)/8) z dz with phi = x + 0.5
        h2 = mc.entropy_density_h2(coexistence_params, phi_bench, 6.0, 2.0)
        assert h2 == pytest.approx(22.5, abs=1e-13)

    def test_zero_state(self, coexistence_params, phi_bench, psi_bench):
        assert mc.entropy_density_h1(coexistence_params, psi_bench,
                                     0.0) == 0.0
        assert mc.entropy_density_h2(coexistence_params, phi_bench,
                                     0.0, 3.0) == 0.0

    def test_step_closed_form(self, nonunique_setup):
        params, _, psi = nonunique_setup
        # a=1, jump at z=1.6: low*z^2/2 below, high branch above
        below = mc.entropy_density_h1(params, psi, 1.0)
        assert below == pytest.approx(0.1 * 0.5, abs=1e-14)
        above = mc.entropy_density_h1(params, psi, 2.0)
        manual = 0.1 * 1.6 ** 2 / 2 + 0.3 * (4.0 - 1.6 ** 2) / 2
        assert above == pytest.approx(manual, abs=1e-13)

    def test_quadrature_fallback_matches_dense_sum(self, coexistence_params):
        # a table rate has no affine form: the adaptive quadrature path
        psi = mc.TableRate([0.0, 0.5, 1.0, 2.0], [1.0, 1.5, 4.0, 4.0])
        got = mc.entropy_density_h1(coexistence_params, psi, 2.2)
        z = np.linspace(0.0, 2.2, 200001)
        want = np.trapezoid(psi.value(z / 1.5) * z, z)
        assert got == pytest.approx(want, rel=1e-8)

    def test_derivative_identity(self, coexistence_params, phi_bench,
                                 psi_bench, rng):
        # d h1/du = psi(u/a) u; d h2/du_b = phi((u_b+v)/b) u_b
        p = coexistence_params
        for _ in range(20):
            u = float(rng.uniform(0.1, 5.0))
            v = float(rng.uniform(0.0, 3.0))
            h = 1e-6
            d1 = (mc.entropy_density_h1(p, psi_bench, u + h)
                  - mc.entropy_density_h1(p, psi_bench, u - h)) / (2 * h)
            assert d1 == pytest.approx(psi_bench.value(u / p.a) * u,
                                       rel=1e-7)
            d2 = (mc.entropy_density_h2(p, phi_bench, u + h, v)
                  - mc.entropy_density_h2(p, phi_bench, u - h, v)) / (2 * h)
            assert d2 == pytest.approx(
                phi_bench.value((u + v) / p.b) * u, rel=1e-7)

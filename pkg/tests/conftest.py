"""Shared fixtures: canonical parameter sets and a kernel warmup.

The compiled kernels build lazily on first use (then cache on disk), so a
session-scoped warmup keeps the compile cost out of timing-sensitive
tests.
"""

import numpy as np
import pytest

from dietswitch import model_core, ode_sim, pde_sim


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    phi = model_core.AffineRate(1.0, 0.5)
    psi = model_core.AffineRate(5.0, 1.0)
    p = model_core.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0,
                               eta_v=40.0, d_a=2.0, d_b=0.1, d_v=0.1,
                               epsilon=0.1)
    ode_sim.integrate_meso_ode(p, phi, psi, (4.0, 2.0, 2.5), 1e-3)
    grid = pde_sim.Grid1D(n_cells=8)
    ones = np.ones(8)
    pde_sim.integrate_meso_pde(p, phi, psi,
                               model_core.MesoState(ones, 2 * ones, ones),
                               1e-4, grid=grid)
    pde_sim.integrate_macro_pde(p, phi, psi,
                                model_core.MacroState(3 * ones, ones),
                                1e-4, grid=grid)


@pytest.fixture
def phi_bench():
    return model_core.AffineRate(1.0, 0.5)


@pytest.fixture
def psi_bench():
    return model_core.AffineRate(5.0, 1.0)


@pytest.fixture
def coexistence_params():
    return model_core.ModelParams(a=1.5, b=8.0, eta_a=3.0, eta_b=2.0,
                                  eta_v=40.0, epsilon=1e-2)


@pytest.fixture
def extinction_params():
    return model_core.ModelParams(a=1.5, b=6.0, eta_a=3.0, eta_b=2.0,
                                  eta_v=40.0, epsilon=1e-2)


@pytest.fixture
def nonunique_setup():
    params = model_core.ModelParams(a=1.0, b=1.0, eta_a=0.2, eta_b=1.0,
                                    eta_v=1.0)
    phi = model_core.AffineRate(0.0, 1.0)
    psi = model_core.StepRate(0.1, 0.3, 1.6, allow_h1_violation=True)
    return params, phi, psi


@pytest.fixture
def micro_bench():
    return model_core.MicroParams(
        r1=6.0, r2=8.0, A1=3.0, A2=4.0, p1=1.0, p2=1.0, pV=1.0,
        k1=1.0, k2=0.5, kV=0.25, delta=1e-3, epsilon=1e-2,
        Phi=model_core.AffineRate(0.5, 0.6),
        Psi=model_core.AffineRate(0.8, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)

"""Simulation and analysis toolkit for a two-species competition model
with crowding-driven diet switching.

Submodules
----------
model_core   parameters, conversion rates, closure solver, entropy densities
equilibria   homogeneous steady states and uniqueness conditions
stability    linearization matrices, spectra, Routh-Hurwitz verdicts
ode_sim      stiff splitting integrators for the homogeneous systems
pde_sim      1D method-of-lines integrators with zero-flux boundaries
diagnostics  entropy/energy budgets, conversion-flux norms, LV reduction
cli          scenario configs, presets, sweeps, file emission
"""

__version__ = "0.1.0"

from .model_core import (
    AffineRate,
    ConversionRate,
    MacroState,
    MesoState,
    MicroParams,
    ModelParams,
    ScaledRate,
    StepRate,
    TableRate,
    WarpedRate,
)

__all__ = [
    "AffineRate",
    "ConversionRate",
    "MacroState",
    "MesoState",
    "MicroParams",
    "ModelParams",
    "ScaledRate",
    "StepRate",
    "TableRate",
    "WarpedRate",
    "__version__",
]

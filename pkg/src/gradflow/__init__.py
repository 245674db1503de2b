"""Semi-implicit gradient-flow solver for anisotropic energies with
state-dependent coefficients."""

from .energy import EnergyBreakdown, energy, energy_gap_bound
from .grid import Grid
from .models import ModelSpec, validate
from .scheme import StepFailure, StepParams, Trajectory, interpolant, run, solve_step, step_residual

__all__ = [
    "EnergyBreakdown", "Grid", "ModelSpec", "StepFailure", "StepParams", "Trajectory",
    "energy", "energy_gap_bound", "interpolant", "run", "solve_step", "step_residual",
    "validate",
]

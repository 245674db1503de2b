"""Discrete energies.

The limit energy is ``E(u) = kappa/2 |grad u|^2 + int alpha(u) gamma(B(u) grad u)
+ int G(x, u)`` and the regularized energy adds ``nu int Upsilon_p(grad u)`` and
replaces ``gamma`` by ``gamma_eps``.  Cell terms use the cell mean of ``u`` and
the cell gradient, exactly as the time-stepping residual does, so the residual
is the derivative of this energy.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .grid import Grid, frobenius
from .models import ModelSpec, apply_B

CSV_HEADER = ("dirichlet", "anisotropy", "potential", "regularizer", "total")


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    anisotropy: float
    potential: float
    regularizer: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.anisotropy + self.potential + self.regularizer

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self) + (self.total,)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["total"] = self.total
        return d


def cell_state(grid: Grid, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cell means ``(K_c, M)`` and cell gradients ``(K_c, M, N)`` of ``u``."""
    u = grid.check_nodal(u)
    if u.ndim == 1:
        u = u[:, None]
    return grid.averaging_matrix @ u, grid.gradient(u)


def energy_density(spec: ModelSpec, grid: Grid, u: np.ndarray, nu: float = 0.0,
                   eps: float = 0.0) -> dict[str, np.ndarray]:
    """Per-cell / per-node integrands of every energy term."""
    if nu < 0 or eps < 0:
        raise ValueError("nu and eps must be >= 0")
    u = grid.check_nodal(u)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != spec.m or grid.dim != spec.n:
        raise ValueError(f"field with M={u.shape[1]} on a {grid.dim}D grid does not "
                         f"match model M={spec.m}, N={spec.n}")
    ubar, X = cell_state(grid, u)
    return {
        "dirichlet": 0.5 * spec.kappa * frobenius(X, X),
        "anisotropy": spec.weight(ubar) * spec.anisotropy.value(apply_B(spec, ubar, X), eps),
        "regularizer": nu * spec.regularizer.value(X) if nu > 0 else np.zeros(len(X)),
        "potential": spec.potential.nodal_value(u),
    }


def energy(spec: ModelSpec, grid: Grid, u: np.ndarray, nu: float = 0.0,
           eps: float = 0.0) -> EnergyBreakdown:
    """Energy breakdown; ``nu = eps = 0`` gives the limit energy."""
    dens = energy_density(spec, grid, u, nu, eps)
    return EnergyBreakdown(
        dirichlet=grid.integrate_cells(dens["dirichlet"]),
        anisotropy=grid.integrate_cells(dens["anisotropy"]),
        potential=grid.integrate_nodal(dens["potential"]),
        regularizer=grid.integrate_cells(dens["regularizer"]),
    )


def energy_gap_bound(spec: ModelSpec, grid: Grid, eps: float) -> float:
    """Certified bound on ``|E_{0,eps}(u) - E(u)|``: ``sup|alpha| |Omega| g(eps)``."""
    if not 0 <= eps < 1:
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    if eps == 0:
        return 0.0
    return spec.alpha_sup * grid.measure * spec.anisotropy.gap(eps)

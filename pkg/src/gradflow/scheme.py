"""Semi-implicit time stepping for the regularized gradient system.

One step maps ``u_prev`` to the ``v`` that zeroes the weak form

    (1/tau) (A(u_prev)(v - u_prev), phi) + (mu/tau) (grad(v - u_prev), grad phi)
    + (alpha(v) grad gamma_eps(B(v) grad v), B(v) grad phi)
    + nu (grad Upsilon_p(grad v), grad phi) + kappa (grad v, grad phi)
    + (grad_u G(x, v), phi)
    + ([grad alpha](u_prev) gamma_eps(B(u_prev) grad u_prev), phi)
    + (alpha(u_prev) grad gamma_eps(...) : [grad B](u_prev) grad u_prev, phi) = 0

for every nodal basis function ``phi``.  The principal anisotropic term is
implicit (including its ``alpha`` and ``B`` arguments); the two lower-order
terms coming from the state dependence of ``alpha`` and ``B`` are explicit.

The nonlinear system is solved by damped Newton on the residual H-norm, with
a lagged-coefficient (Picard) direction as fallback.  After convergence the
step must satisfy the discrete dissipation inequality

    C_A/(4 tau) |v - u|_H^2 + mu/(2 tau) |grad(v - u)|^2 + E(v) <= E(u),

otherwise ``tau`` is halved and the step retried.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .energy import CSV_HEADER, EnergyBreakdown, cell_state, energy
from .grid import Grid
from .models import ModelSpec, apply_B, apply_B_star, contract_nabla_B

log = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    """Raised when a step cannot be completed; carries the partial trajectory."""

    def __init__(self, message: str, trajectory: Trajectory | None = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class StepParams:
    tau: float
    nu: float = 0.0
    eps: float = 0.1
    mu: float = 0.0
    tol: float = 1e-9
    max_iter: int = 50
    max_halvings: int = 12
    energy_rtol: float = 1e-10

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0 <= self.nu < 1:
            raise ValueError(f"nu must lie in [0, 1), got {self.nu}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0 <= self.mu < 1:
            raise ValueError(f"mu must lie in [0, 1), got {self.mu}")
        if self.tol <= 0 or self.max_iter < 1 or self.max_halvings < 0:
            raise ValueError("tol > 0, max_iter >= 1 and max_halvings >= 0 required")

    def with_tau(self, tau: float) -> StepParams:
        return replace(self, tau=tau)


@dataclass(frozen=True)
class StepDiagnostics:
    tau: float
    halvings: int
    iterations: int
    residual: float
    energy: EnergyBreakdown
    energy_prev: float
    lhs: float
    rhs: float
    kinetic: float          # |v - u|_H^2 / tau, used for time integrals

    @property
    def dissipation_ok(self) -> bool:
        return self.lhs <= self.rhs + 1e-10 * (1.0 + abs(self.rhs))


class Discretization:
    """Assembles the step residual and its Jacobian for one (spec, grid) pair."""

    def __init__(self, spec: ModelSpec, grid: Grid):
        if grid.dim != spec.n:
            raise ValueError(f"model is {spec.n}D but grid is {grid.dim}D")
        self.spec, self.grid = spec, grid
        K, M = grid.num_nodes, spec.m
        self.K, self.M = K, M
        self.wn = grid.node_weights
        self.wc = grid.cell_weights
        self.conn = grid.connectivity
        self.gl = np.ascontiguousarray(grid.local_gradients)
        self.stiff = grid.stiffness_matrix
        self.stiff_m = sp.kron(self.stiff, sp.identity(M), format="csr")
        kc, nl = grid.num_cells, grid.nodes_per_cell
        dof = self.conn[:, :, None] * M + np.arange(M)[None, None, :]   # (kc, nl, M)
        shape = (kc, nl, M, nl, M)
        self._rows = np.broadcast_to(dof[:, :, :, None, None], shape).ravel()
        self._cols = np.broadcast_to(dof[:, None, None, :, :], shape).ravel()
        node_rows = np.repeat(np.arange(K) * M, M * M) + np.tile(np.repeat(np.arange(M), M), K)
        node_cols = np.repeat(np.arange(K) * M, M * M) + np.tile(np.tile(np.arange(M), M), K)
        self._node_rows, self._node_cols = node_rows, node_cols

    # -- helpers -------------------------------------------------------------

    def _flux_to_nodes(self, S: np.ndarray) -> np.ndarray:
        """``D^T W_c S``: weak form of a cell flux ``S`` of shape (K_c, M, N)."""
        kc, n = self.grid.num_cells, self.grid.dim
        flat = (S * self.wc[:, None, None]).transpose(0, 2, 1).reshape(kc * n, -1)
        return self.grid.gradient_matrix.T @ flat

    def _cells_to_nodes(self, f: np.ndarray) -> np.ndarray:
        """``P^T W_c f``: pairing of a cell quantity with nodal test functions."""
        return self.grid.averaging_matrix.T @ (f * self.wc[:, None])

    def hnorm(self, F: np.ndarray) -> float:
        """H-norm of the Riesz representative of a weak-form vector."""
        return float(np.sqrt(np.sum(F * F / self.wn[:, None])))

    def _check(self, v, name):
        v = np.asarray(v, float)
        if v.shape != (self.K, self.M):
            raise ValueError(f"{name} has shape {v.shape}, expected {(self.K, self.M)}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} contains non-finite values")
        return v

    # -- residual ------------------------------------------------------------

    def implicit_vector(self, v, u_prev, tau, p: StepParams) -> np.ndarray:
        spec = self.spec
        v = self._check(v, "v")
        u_prev = self._check(u_prev, "u_prev")
        dv = v - u_prev
        A = spec.mobility(u_prev)
        F = self.wn[:, None] * np.einsum("kij,kj->ki", A, dv) / tau
        if p.mu:
            F += (p.mu / tau) * (self.stiff @ dv)
        F += spec.kappa * (self.stiff @ v)
        F += self.wn[:, None] * spec.potential.nodal_grad(v)
        ubar, X = cell_state(self.grid, v)
        g = spec.anisotropy.grad(apply_B(spec, ubar, X), p.eps)
        S = spec.weight(ubar)[:, None, None] * apply_B_star(spec, ubar, g)
        if p.nu:
            S = S + p.nu * spec.regularizer.grad(X)
        F += self._flux_to_nodes(S)
        return F

    def explicit_vector(self, u_prev, eps: float) -> np.ndarray:
        spec = self.spec
        ubar, X = cell_state(self.grid, self._check(u_prev, "u_prev"))
        Y = apply_B(spec, ubar, X)
        fam = spec.anisotropy
        f = (spec.weight.grad(ubar) * fam.value(Y, eps)[:, None]
             + spec.weight(ubar)[:, None] * contract_nabla_B(spec, fam.grad(Y, eps), ubar, X))
        return self._cells_to_nodes(f)

    def residual_vector(self, v, u_prev, tau, p: StepParams) -> np.ndarray:
        return self.implicit_vector(v, u_prev, tau, p) + self.explicit_vector(u_prev, p.eps)

    # -- Jacobian ------------------------------------------------------------

    def jacobian(self, v, u_prev, tau, p: StepParams, lagged: bool = False) -> sp.csr_matrix:
        """Derivative of :meth:`implicit_vector` with respect to ``v``.

        With ``lagged=True`` the dependence of ``alpha`` and ``B`` on ``v`` is
        frozen (Picard linearization)."""
        spec, K, M = self.spec, self.K, self.M
        A = np.asarray(spec.mobility(u_prev), float) * (self.wn / tau)[:, None, None]
        J = sp.coo_matrix((A.ravel(), (self._node_rows, self._node_cols)), shape=(K * M, K * M))
        J = J.tocsr() + (p.mu / tau + spec.kappa) * self.stiff_m
        hG = spec.potential.nodal_hess_diag(v)
        if np.any(hG):
            J = J + sp.diags((self.wn[:, None] * hG).ravel())

        op, fam, gl = spec.operator, spec.anisotropy, self.gl
        nl = self.grid.nodes_per_cell
        ubar, X = cell_state(self.grid, v)
        B0, B1 = op.b0(ubar), op.b1(ubar)
        B0t, B1t = np.swapaxes(B0, -1, -2), np.swapaxes(B1, -1, -2)
        Y = B0 @ X @ B1
        g = fam.grad(Y, p.eps)
        H = fam.hess(Y, p.eps)
        a = spec.weight(ubar)

        def L(Q):   # Q: (kc, ..., M, N) -> a B0^T (H : Q) B1^T
            HQ = np.einsum("cijkl,c...kl->c...ij", H, Q)
            extra = (slice(None),) + (None,) * (Q.ndim - 3)
            return (a[extra + (None, None)]
                    * (B0t[extra] @ HQ @ B1t[extra]))

        # derivative through grad v: direction e_k (x) g_b
        B1tg = np.einsum("clj,cbl->cbj", B1, gl)                    # (kc, nl, N)
        Q2 = np.einsum("cik,cbj->cbkij", B0, B1tg)                   # (kc, nl, M, M, N)
        dS = L(Q2)
        if not lagged:
            # derivative through the cell mean: direction e_k / nl
            dB0, dB1 = op.db0(ubar), op.db1(ubar)                    # (kc, M, ., .)
            Bsg = B0t @ g @ B1t
            T1 = spec.weight.grad(ubar)[:, :, None, None] * Bsg[:, None]
            T2 = a[:, None, None, None] * (
                np.swapaxes(dB0, -1, -2) @ g[:, None] @ B1t[:, None]
                + B0t[:, None] @ g[:, None] @ np.swapaxes(dB1, -1, -2))
            dYu = dB0 @ X[:, None] @ B1[:, None] + B0[:, None] @ X[:, None] @ dB1
            dS = dS + ((T1 + T2 + L(dYu)) / nl)[:, None]
        if p.nu:
            HU = spec.regularizer.hess(X)
            dS = dS + p.nu * np.einsum("cijkl,cbl->cbkij", HU, gl)
        Jc = np.einsum("c,cbkmn,can->cambk", self.wc, dS, gl)
        Jloc = sp.coo_matrix((Jc.ravel(), (self._rows, self._cols)), shape=(K * M, K * M))
        return (J + Jloc.tocsr()).tocsr()


def step_residual(spec: ModelSpec, grid: Grid, v, u_prev, params: StepParams,
                  tau: float | None = None) -> np.ndarray:
    """Riesz representative (discrete H inner product) of the step weak form."""
    disc = Discretization(spec, grid)
    tau = params.tau if tau is None else tau
    F = disc.residual_vector(v, u_prev, tau, params)
    return F / grid.node_weights[:, None]


def _newton(disc: Discretization, u_prev: np.ndarray, tau: float, p: StepParams):
    rhs = disc.explicit_vector(u_prev, p.eps)

    def F(v):
        return disc.implicit_vector(v, u_prev, tau, p) + rhs

    v = u_prev.copy()
    r = F(v)
    nr = disc.hnorm(r)
    it = 0
    while nr > p.tol:
        if it >= p.max_iter:
            return v, it, nr, False
        it += 1
        accepted = False
        for lagged in (False, True):
            J = disc.jacobian(v, u_prev, tau, p, lagged=lagged)
            with np.errstate(all="ignore"):
                dv = spsolve(J.tocsc(), -r.ravel()).reshape(v.shape)
            if not np.all(np.isfinite(dv)):
                continue
            lam = 1.0
            while lam >= 2.0 ** -12:
                vt = v + lam * dv
                rt = F(vt)
                nt = disc.hnorm(rt)
                if nt <= (1.0 - 1e-4 * lam) * nr:
                    v, r, nr, accepted = vt, rt, nt, True
                    break
                lam *= 0.5
            if accepted:
                break
        if not accepted:
            return v, it, nr, False
    return v, it, nr, True


def solve_step(spec: ModelSpec, grid: Grid, u_prev: np.ndarray, params: StepParams,
               disc: Discretization | None = None,
               energy_prev: EnergyBreakdown | None = None):
    """Advance one step.  Returns ``(u_next, StepDiagnostics)``.

    ``tau`` is halved until Newton converges and the dissipation inequality
    holds; :class:`StepFailure` is raised when ``max_halvings`` is exhausted.
    """
    disc = disc or Discretization(spec, grid)
    u_prev = disc._check(u_prev, "u_prev")
    E_prev = energy_prev or energy(spec, grid, u_prev, params.nu, params.eps)
    tau = params.tau
    reason = ""
    for halvings in range(params.max_halvings + 1):
        v, iters, res, ok = _newton(disc, u_prev, tau, params)
        if ok:
            E_new = energy(spec, grid, v, params.nu, params.eps)
            dv = v - u_prev
            kin = grid.inner_h(dv, dv) / tau
            lhs = spec.c_a / 4.0 * kin + E_new.total
            if params.mu:
                gd = grid.gradient(dv)
                lhs += params.mu / (2.0 * tau) * grid.inner_grad(gd, gd)
            rhs = E_prev.total
            if lhs <= rhs + params.energy_rtol * (1.0 + abs(rhs)):
                return v, StepDiagnostics(tau, halvings, iters, res, E_new, rhs, lhs, rhs, kin)
            reason = f"dissipation violated by {lhs - rhs:.3e}"
        else:
            reason = f"Newton stalled at residual {res:.3e} after {iters} iterations"
        log.debug("step with tau=%g rejected: %s", tau, reason)
        tau *= 0.5
    raise StepFailure(f"step failed after {params.max_halvings} halvings: {reason}")


@dataclass
class Trajectory:
    spec: ModelSpec
    grid: Grid
    params: StepParams
    times: list[float]
    states: list[np.ndarray]
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    energy0: EnergyBreakdown | None = None

    @property
    def steps(self) -> int:
        return len(self.diagnostics)

    @property
    def final_time(self) -> float:
        return self.times[-1]

    def energies(self) -> np.ndarray:
        """Regularized energies ``E_{nu,eps}(u^i)`` for ``i = 0..steps``."""
        return np.array([self.energy0.total] + [d.energy.total for d in self.diagnostics])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("i", "t", "lhs", "rhs") + CSV_HEADER + ("newton_iters", "tau"))
            for i, d in enumerate(self.diagnostics, start=1):
                w.writerow([i, repr(self.times[i]), repr(d.lhs), repr(d.rhs)]
                           + [repr(x) for x in d.energy.as_tuple()]
                           + [d.iterations, repr(d.tau)])


def run(spec: ModelSpec, grid: Grid, u0: np.ndarray, T: float, params: StepParams,
        callback=None) -> Trajectory:
    """Run the scheme on ``[0, T]`` from ``u0``.

    ``callback(i, t, u)`` is invoked after every accepted step.  On failure
    :class:`StepFailure` is raised with the partial trajectory attached.
    """
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    disc = Discretization(spec, grid)
    u = disc._check(np.array(u0, dtype=float).reshape(grid.num_nodes, -1), "u0").copy()
    E = energy(spec, grid, u, params.nu, params.eps)
    traj = Trajectory(spec, grid, params, [0.0], [u], energy0=E)
    t = 0.0
    snap = 1e-9 * max(T, params.tau)
    while T - t > snap:
        tau = min(params.tau, T - t)
        try:
            u, diag = solve_step(spec, grid, u, params.with_tau(tau), disc, energy_prev=E)
        except StepFailure as exc:
            raise StepFailure(f"t={t:.6g}: {exc}", traj) from None
        t = t + diag.tau
        if abs(T - t) <= snap:
            t = T
        E = diag.energy
        traj.times.append(t)
        traj.states.append(u)
        traj.diagnostics.append(diag)
        if callback is not None:
            callback(len(traj.diagnostics), t, u)
    return traj


def interpolant(traj: Trajectory, t: float, kind: str = "linear") -> np.ndarray:
    """Piecewise-affine (``linear``), backward-constant (``backward``) or
    forward-constant (``forward``) reconstruction at time ``t``."""
    times = np.asarray(traj.times)
    if t < 0 or t > times[-1] * (1 + 1e-14):
        raise ValueError(f"t={t} outside [0, {times[-1]}]")
    if kind not in ("linear", "backward", "forward"):
        raise ValueError(f"unknown interpolant kind {kind!r}")
    if t <= 0:
        return traj.states[0]
    i = int(np.searchsorted(times, t, side="left"))      # t in (t_{i-1}, t_i]
    i = min(max(i, 1), len(times) - 1)
    if kind == "backward":
        return traj.states[i]
    if kind == "forward":
        return traj.states[i - 1]
    t0, t1 = times[i - 1], times[i]
    s = (t - t0) / (t1 - t0)
    return (1.0 - s) * traj.states[i - 1] + s * traj.states[i]

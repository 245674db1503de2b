"""Refinement schedules, Cauchy diagnostics and residuals of the limit
properties (variational inequality and energy inequality), plus sampled
convex-analysis probes."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import cell_state, energy, energy_gap_bound
from .grid import Grid
from .models import ModelSpec, apply_B, contract_nabla_B
from .scheme import StepParams, Trajectory, interpolant, run


@dataclass(frozen=True)
class RefinementSchedule:
    """Sequences ``nu_n, eps_n, mu_n`` decreasing to zero and the coupled step
    ``tau_n = min(tau_base, nu_n, eps_n, mu_n, 1) / 2``."""

    nu: tuple[float, ...]
    eps: tuple[float, ...]
    mu: tuple[float, ...]
    tau_base: float = 1.0

    def __post_init__(self):
        n = len(self.nu)
        if n == 0 or len(self.eps) != n or len(self.mu) != n:
            raise ValueError("nu, eps, mu must be nonempty and of equal length")
        for name in ("nu", "eps", "mu"):
            seq = np.asarray(getattr(self, name), float)
            if np.any(seq <= 0) or np.any(seq >= 1):
                raise ValueError(f"{name} entries must lie in (0, 1)")
            if np.any(np.diff(seq) >= 0):
                raise ValueError(f"{name} must be strictly decreasing")
        if not self.tau_base > 0:
            raise ValueError("tau_base must be > 0")

    @classmethod
    def geometric(cls, n_max: int, ratio: float = 0.5, start: float = 0.5,
                  tau_base: float = 1.0) -> RefinementSchedule:
        """``nu_n = eps_n = mu_n = start * ratio**(n-1)`` for ``n = 1..n_max``."""
        if n_max < 1 or not 0 < ratio < 1:
            raise ValueError("need n_max >= 1 and ratio in (0, 1)")
        seq = tuple(start * ratio ** k for k in range(n_max))
        return cls(seq, seq, seq, tau_base)

    @property
    def n_max(self) -> int:
        return len(self.nu)

    @property
    def tau(self) -> tuple[float, ...]:
        return tuple(0.5 * min(self.tau_base, a, b, c, 1.0)
                     for a, b, c in zip(self.nu, self.eps, self.mu))

    def params(self, n: int, **solver) -> StepParams:
        """Step parameters for index ``n`` (0-based)."""
        return StepParams(tau=self.tau[n], nu=self.nu[n], eps=self.eps[n], mu=self.mu[n],
                          **solver)

    def to_dict(self) -> dict:
        return {"nu": list(self.nu), "eps": list(self.eps), "mu": list(self.mu),
                "tau": list(self.tau), "tau_base": self.tau_base}


def _run_job(args):
    return run(*args)


def refine(spec: ModelSpec, grid: Grid, u0, T: float, schedule: RefinementSchedule,
           workers: int | None = None, **solver) -> list[Trajectory]:
    """One trajectory per schedule index, all from the same ``u0``.  With
    ``workers > 1`` the runs execute in separate processes; results do not
    depend on the worker count."""
    jobs = [(spec, grid, u0, T, schedule.params(n, **solver)) for n in range(schedule.n_max)]
    if workers is not None and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def _same_grid(a: Grid, b: Grid) -> bool:
    return a.shape == b.shape and np.allclose(a.extents, b.extents, rtol=0, atol=0)


def cauchy_metric(traj_a: Trajectory, traj_b: Trajectory) -> float:
    """``sup_t |u_a(t) - u_b(t)|_H`` for the piecewise-affine interpolants.

    The difference is affine between consecutive points of the merged time
    grid, so its norm attains the sup on that grid and the value is exact."""
    if not _same_grid(traj_a.grid, traj_b.grid):
        raise ValueError("trajectories live on different grids")
    Ta, Tb = traj_a.final_time, traj_b.final_time
    if abs(Ta - Tb) > 1e-12 * max(Ta, Tb):
        raise ValueError(f"horizons differ: {Ta} vs {Tb}")
    T = min(Ta, Tb)
    times = np.union1d(np.clip(traj_a.times, 0, T), np.clip(traj_b.times, 0, T))
    g = traj_a.grid
    return max(g.norm_h(interpolant(traj_a, t) - interpolant(traj_b, t)) for t in times)


def _step_index(traj: Trajectory, t: float) -> int:
    """Index ``i >= 1`` with ``t`` in ``(t_{i-1}, t_i]`` (``i = 1`` at ``t = 0``)."""
    i = int(np.searchsorted(traj.times, t, side="left"))
    return min(max(i, 1), len(traj.times) - 1)


def time_derivative(traj: Trajectory, t: float) -> np.ndarray:
    """Difference quotient of the step containing ``t``."""
    i = _step_index(traj, t)
    return (traj.states[i] - traj.states[i - 1]) / (traj.times[i] - traj.times[i - 1])


@dataclass
class ViReport:
    t_samples: list[float]
    battery: str
    residuals: np.ndarray            # (len(t_samples), len(battery))

    def __post_init__(self):
        if not np.all(np.isfinite(self.residuals)):
            raise ValueError("non-finite residual")

    @property
    def worst(self) -> float:
        """Largest residual; the inequality predicts ``<= 0``."""
        return float(np.max(self.residuals))

    @property
    def worst_violation(self) -> float:
        return max(0.0, self.worst)

    def to_dict(self) -> dict:
        return {"battery": self.battery, "t_samples": list(map(float, self.t_samples)),
                "residuals": self.residuals.tolist(), "worst": self.worst,
                "worst_violation": self.worst_violation}


def vi_terms(spec: ModelSpec, grid: Grid, u: np.ndarray, dtu: np.ndarray,
             phi: np.ndarray) -> float:
    """``LHS - RHS`` of the variational inequality at state ``u``, velocity
    ``dtu`` and test field ``phi`` (exact ``gamma``, analytic subgradient)."""
    d = u - phi
    ubar, X = cell_state(grid, u)
    W = apply_B(spec, ubar, X)
    fam = spec.anisotropy
    gam = fam.value(W)
    a = spec.weight(ubar)
    wstar = fam.subgradient(W)
    nodal = (np.einsum("kij,kj->ki", spec.mobility(u), dtu)
             + spec.potential.nodal_grad(u))
    cell = (spec.weight.grad(ubar) * gam[:, None]
            + a[:, None] * contract_nabla_B(spec, wstar, ubar, X))
    dbar = grid.averaging_matrix @ d
    lhs = (grid.inner_h(nodal, d)
           + spec.kappa * grid.inner_grad(X, grid.gradient(d))
           + float(np.sum(grid.cell_weights[:, None] * cell * dbar))
           + grid.integrate_cells(a * gam))
    Wphi = apply_B(spec, ubar, grid.gradient(phi))
    return lhs - grid.integrate_cells(a * fam.value(Wphi))


def smooth_battery(grid: Grid, m: int, count: int = 8) -> list[np.ndarray]:
    """Low cosine modes normalized in the H-norm, cycling over components."""
    x = grid.coords
    L = np.asarray(grid.extents, float)
    out = []
    k = 0
    while len(out) < count:
        kx, ky = (k % 3), (k // 3) % 3
        comp = len(out) % m
        arg = np.cos(np.pi * (kx + 1) * x[:, 0] / L[0])
        if grid.dim == 2:
            arg = arg * np.cos(np.pi * ky * x[:, 1] / L[1])
        f = np.zeros((grid.num_nodes, m))
        f[:, comp] = arg
        out.append(f / grid.norm_h(f))
        k += 1
    return out


def vi_residual(spec: ModelSpec, traj: Trajectory, battery, t_samples,
                perturb: bool = True, delta: float = 0.1) -> ViReport:
    """Residual table of the variational inequality.

    With ``perturb`` the test fields are ``u(t) +- delta w`` for each battery
    direction ``w`` (both signs); otherwise the battery entries are used as
    ``phi`` directly."""
    battery = [traj.grid.check_nodal(np.asarray(b, float)).reshape(traj.grid.num_nodes, -1)
               for b in battery]
    if not battery:
        raise ValueError("empty battery")
    grid = traj.grid
    rows = []
    for t in t_samples:
        u = interpolant(traj, t)
        dtu = time_derivative(traj, t)
        if perturb:
            phis = [u + s * delta * w for w in battery for s in (1.0, -1.0)]
        else:
            phis = battery
        rows.append([vi_terms(spec, grid, u, dtu, phi) for phi in phis])
    desc = (f"u(t) +- {delta} w, {len(battery)} directions" if perturb
            else f"{len(battery)} fixed fields")
    return ViReport(list(t_samples), desc, np.array(rows, float))


@dataclass
class EnergyInequalityReport:
    pairs: list[tuple[float, float]]
    lhs: np.ndarray
    rhs: np.ndarray
    allowance: np.ndarray
    tol: float
    regularized: bool

    @property
    def defect(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def worst(self) -> float:
        return float(np.max(self.defect))

    @property
    def excess(self) -> float:
        """Largest amount by which the raw inequality fails (0 if it holds)."""
        return max(0.0, self.worst)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.defect <= self.allowance + self.tol * (1 + np.abs(self.rhs))))

    def to_dict(self) -> dict:
        return {"regularized": self.regularized, "pairs": [list(p) for p in self.pairs],
                "lhs": self.lhs.tolist(), "rhs": self.rhs.tolist(),
                "allowance": self.allowance.tolist(), "tol": self.tol,
                "worst": self.worst, "excess": self.excess, "passed": self.passed}


def _default_samples(times, count=12):
    idx = np.unique(np.linspace(0, len(times) - 1, min(count, len(times))).round().astype(int))
    return [float(times[i]) for i in idx]


def energy_inequality_check(traj: Trajectory, s_samples=None, t_samples=None,
                            regularized: bool = False, tol: float = 1e-10
                            ) -> EnergyInequalityReport:
    """Check ``(C_A/4) int_s^t |d_t u|^2 + E(u(t)) <= E(u(s))`` on sampled pairs.

    ``u(t)`` is the backward-constant and ``u(s)`` the forward-constant
    reconstruction, so the dissipation integral runs over whole steps and is
    computed exactly from the difference quotients.  With ``regularized`` the
    energy is the one the scheme dissipates and the allowance is zero;
    otherwise the exact energy is used and the allowance is the certified
    smoothing and regularization error ``2 sup|alpha| |Omega| g(eps) +
    nu int Upsilon(grad u(s))``."""
    times = np.asarray(traj.times)
    s_samples = _default_samples(times) if s_samples is None else list(s_samples)
    t_samples = _default_samples(times) if t_samples is None else list(t_samples)
    if 0.0 not in s_samples:
        s_samples = [0.0] + s_samples
    spec, grid, p = traj.spec, traj.grid, traj.params
    cA = spec.c_a
    steps = np.diff(times)
    diss = np.array([0.0] + [cA / 4 * grid.norm_h(traj.states[i + 1] - traj.states[i]) ** 2
                             / steps[i] for i in range(len(steps))])
    cum = np.cumsum(diss)
    if regularized:
        E = traj.energies()
        reg = np.zeros(len(times))
    else:
        E = np.array([energy(spec, grid, u).total for u in traj.states])
        reg = np.array([energy(spec, grid, u, p.nu, 0.0).regularizer for u in traj.states])
    gap = 0.0 if regularized else 2 * energy_gap_bound(spec, grid, p.eps)
    pairs, lhs, rhs, allow = [], [], [], []
    for s in s_samples:
        js = 0 if s <= 0 else _step_index(traj, s) - 1        # forward state index
        for t in t_samples:
            if t < s:
                continue
            jt = 0 if t <= 0 else _step_index(traj, t)         # backward state index
            jt = js if t == s else max(jt, js)
            pairs.append((float(s), float(t)))
            lhs.append(cum[jt] - cum[js] + E[jt])
            rhs.append(E[js])
            allow.append(gap + reg[js])
    return EnergyInequalityReport(pairs, np.array(lhs), np.array(rhs), np.array(allow),
                                  tol, regularized)


@dataclass
class ProbeReport:
    samples: int
    violations: int
    worst: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"samples": self.samples, "violations": self.violations,
                "worst": self.worst, "passed": self.passed, **self.details}


def subdiff_membership_probe(family, W_samples, X_samples, selections=None,
                             tol: float = 1e-12) -> ProbeReport:
    """Check ``gamma(X) >= gamma(W) + w* : (X - W)`` on the pairs ``(W_k, X_k)``.

    ``selections`` defaults to the family's analytic subgradient at ``W``;
    ``worst`` is the largest shortfall (positive means violated)."""
    W = np.asarray(W_samples, float)
    X = np.asarray(X_samples, float)
    if W.shape != X.shape or W.ndim < 3 or len(W) == 0:
        raise ValueError("W and X samples must be nonempty stacks of equal shape")
    ws = family.subgradient(W) if selections is None else np.asarray(selections, float)
    gW, gX = family.value(W), family.value(X)
    short = gW + np.einsum("kij,kij->k", ws, X - W) - gX
    bad = short > tol * (1 + np.abs(gX))
    return ProbeReport(len(W), int(np.sum(bad)), float(np.max(short)))


def gamma_consistency_probe(family, W_samples, eps_sequence) -> ProbeReport:
    """``max_W |gamma_eps(W) - gamma(W)|`` along ``eps_sequence``; a violation is
    a gap above ``g(eps)`` or an increase along the sequence."""
    eps_sequence = [float(e) for e in eps_sequence]
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("eps_sequence must be strictly decreasing")
    W = np.asarray(W_samples, float)
    g0 = family.value(W)
    gaps = [float(np.max(np.abs(family.value(W, e) - g0))) for e in eps_sequence]
    bounds = [family.gap(e) for e in eps_sequence]
    # gamma_eps - gamma cancels at large |W|; allow roundoff at the scale of gamma
    slack = 16 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(g0))))
    viol = sum(g > b * (1 + 1e-12) + slack for g, b in zip(gaps, bounds))
    viol += sum(b > a + slack for a, b in zip(gaps, gaps[1:]))
    return ProbeReport(len(W), int(viol), max(g - b for g, b in zip(gaps, bounds)),
                       {"eps": eps_sequence, "gaps": gaps, "bounds": bounds})

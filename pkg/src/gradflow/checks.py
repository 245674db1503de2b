"""Property battery: summation by parts and analytic derivatives against
central finite differences."""

from __future__ import annotations

import numpy as np

from .grid import Grid
from .models import (Check, ModelSpec, ValidationReport, apply_B, apply_nabla_B,
                     potential_eval, potential_grad)
from .scheme import Discretization, StepParams

FD_STEP = 1e-6
FD_TOL = 1e-6


def rel_err(a, b) -> float:
    """``|a - b| / max(|a|, 1)``: relative for large values, absolute near zero."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1.0))


def central_diff(f, x, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient/Jacobian of ``f`` at ``x``; output shape is
    ``f(x).shape + x.shape``."""
    x = np.asarray(x, float)
    f0 = np.asarray(f(x), float)
    out = np.empty(f0.shape + x.shape)
    flat = out.reshape(f0.shape + (-1,))
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        e = e.reshape(x.shape)
        flat[..., j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return out


def green_identity_check(grid: Grid, trials: int = 100, m: int = 2, seed: int = 0,
                         tol: float = 1e-13) -> Check:
    """``-(div Z, w)_h = (Z, grad w)_h`` for random ``Z``, ``w``.  The error is
    measured against the Cauchy-Schwarz scale ``|Z|_h |grad w|_h`` so that a
    near-cancelling pairing does not inflate it."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        Z = rng.standard_normal((grid.num_cells, m, grid.dim))
        w = rng.standard_normal((grid.num_nodes, m))
        lhs = -grid.inner_h(grid.divergence(Z), w)
        gw = grid.gradient(w)
        rhs = grid.inner_grad(Z, gw)
        scale = np.sqrt(grid.inner_grad(Z, Z) * grid.inner_grad(gw, gw))
        worst = max(worst, abs(lhs - rhs) / scale)
    return Check(f"Green identity {grid.shape}", worst <= tol, worst, tol)


def derivative_battery(spec: ModelSpec, grid: Grid, points: int = 100, seed: int = 0,
                       eps: float = 0.1, params: StepParams | None = None,
                       h: float = FD_STEP, tol: float = FD_TOL) -> ValidationReport:
    """Analytic derivatives of every model component and of the implicit part of
    the step residual against central differences at ``points`` random inputs."""
    rng = np.random.default_rng(seed)
    m, n = spec.m, spec.n
    fam, reg = spec.anisotropy, spec.regularizer
    errs = {k: 0.0 for k in ("grad alpha", "nabla B", "grad gamma_eps", "hess gamma_eps",
                             "grad Upsilon", "hess Upsilon", "grad_u G")}

    def bump(name, e):
        errs[name] = max(errs[name], e)

    lo = np.zeros(grid.dim)
    hi = np.asarray(grid.extents, float)
    for _ in range(points):
        v = 2 * rng.standard_normal(m)
        W = 2 * rng.standard_normal((m, n))
        x = rng.uniform(lo, hi)
        bump("grad alpha", rel_err(spec.weight.grad(v), central_diff(spec.weight, v, h)))
        fd_B = np.moveaxis(central_diff(lambda z: apply_B(spec, z, W), v, h), -1, 0)
        bump("nabla B", rel_err(apply_nabla_B(spec, v, W), fd_B))
        bump("grad gamma_eps", rel_err(fam.grad(W, eps),
                                       central_diff(lambda Y: fam.value(Y, eps), W, h)))
        bump("hess gamma_eps", rel_err(fam.hess(W, eps),
                                       central_diff(lambda Y: fam.grad(Y, eps), W, h)))
        bump("grad Upsilon", rel_err(reg.grad(W), central_diff(reg.value, W, h)))
        bump("hess Upsilon", rel_err(reg.hess(W), central_diff(reg.grad, W, h)))
        bump("grad_u G", rel_err(potential_grad(spec, x, v),
                                 central_diff(lambda z: potential_eval(spec, x, z), v, h)))
    checks = [Check(k, e <= tol, e, tol) for k, e in errs.items()]

    p = params or StepParams(tau=0.05, nu=0.1, eps=eps, mu=0.1)
    disc = Discretization(spec, grid)
    worst = 0.0
    for _ in range(points):
        u = rng.standard_normal((grid.num_nodes, m))
        v = u + 0.3 * rng.standard_normal(u.shape)
        d = rng.standard_normal(u.shape)
        Jd = disc.jacobian(v, u, p.tau, p) @ d.ravel()
        fd = (disc.implicit_vector(v + h * d, u, p.tau, p)
              - disc.implicit_vector(v - h * d, u, p.tau, p)).ravel() / (2 * h)
        worst = max(worst, rel_err(Jd, fd))
    checks.append(Check("residual Jacobian", worst <= tol, worst, tol,
                        "implicit part, directional differences"))
    return ValidationReport(checks)

"""Coefficient bundle of the gradient system.

Every component works on batches: states ``v`` have shape ``(..., M)`` and
matrices ``W`` have shape ``(..., M, N)``.  Components are frozen dataclasses
so a :class:`ModelSpec` can be shared between threads and pickled to worker
processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .grid import Grid, frobenius

EPS_LEVELS = (1e-1, 1e-2, 1e-3)


def _sat(s):
    """Bounded smooth bump ``s^2 / (1 + s^2)`` and its derivative."""
    s2 = s * s
    return s2 / (1.0 + s2), 2.0 * s / (1.0 + s2) ** 2


def _check_eps(eps: float, allow_zero: bool = True) -> float:
    eps = float(eps)
    lo_ok = eps >= 0.0 if allow_zero else eps > 0.0
    if not (lo_ok and eps < 1.0):
        raise ValueError(f"smoothing parameter eps must lie in {'[0' if allow_zero else '(0'}, 1), got {eps}")
    return eps


# -- mobility A(v) --------------------------------------------------------------

@dataclass(frozen=True)
class ConstantMobility:
    matrix: np.ndarray
    c_a: float

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, float)))

    @classmethod
    def identity(cls, m: int) -> ConstantMobility:
        return cls(np.eye(m), 1.0)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        return np.broadcast_to(self.matrix, v.shape[:-1] + self.matrix.shape)


@dataclass(frozen=True)
class ScalarMobility:
    """``A(v) = (c_a + amp * s(v_index)) I`` with the saturating bump ``s``."""

    m: int
    c_a: float = 1.0
    amp: float = 0.0
    index: int = 0

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, float)
        a = self.c_a + self.amp * _sat(v[..., self.index])[0]
        return a[..., None, None] * np.eye(self.m)


# -- scalar weight alpha(v) ----------------------------------------------------

@dataclass(frozen=True)
class ConstantWeight:
    m: int
    value: float = 1.0

    @property
    def sup(self) -> float:
        return abs(self.value)

    def __call__(self, v):
        v = np.asarray(v, float)
        return np.full(v.shape[:-1], float(self.value))

    def grad(self, v):
        return np.zeros_like(np.asarray(v, float))


@dataclass(frozen=True)
class SaturatingWeight:
    """``alpha(v) = a0 + a1 * v_k^2 / (1 + v_k^2)``; smooth, bounded, W^{2,inf}."""

    m: int
    a0: float = 0.0
    a1: float = 1.0
    index: int = 0

    @property
    def sup(self) -> float:
        return abs(self.a0) + abs(self.a1)

    def __call__(self, v):
        v = np.asarray(v, float)
        return self.a0 + self.a1 * _sat(v[..., self.index])[0]

    def grad(self, v):
        v = np.asarray(v, float)
        g = np.zeros_like(v)
        g[..., self.index] = self.a1 * _sat(v[..., self.index])[1]
        return g


# -- operator B(v) W = B0(v) W B1(v) ----------------------------------------

@dataclass(frozen=True)
class IdentityOperator:
    m: int
    n: int

    def b0(self, v):
        v = np.asarray(v)
        return np.broadcast_to(np.eye(self.m), v.shape[:-1] + (self.m, self.m))

    def b1(self, v):
        v = np.asarray(v)
        return np.broadcast_to(np.eye(self.n), v.shape[:-1] + (self.n, self.n))

    def db0(self, v):
        v = np.asarray(v)
        return np.zeros(v.shape[:-1] + (self.m, self.m, self.m))

    def db1(self, v):
        v = np.asarray(v)
        return np.zeros(v.shape[:-1] + (self.m, self.n, self.n))


@dataclass(frozen=True)
class RotationOperator:
    """``B0 = I``, ``B1 = R(v_index)``: gradients expressed in a frame turned by the
    orientation component."""

    m: int
    n: int = 2
    index: int = -1

    def __post_init__(self):
        if self.n != 2:
            raise ValueError("rotation operator needs N = 2")

    def b0(self, v):
        v = np.asarray(v)
        return np.broadcast_to(np.eye(self.m), v.shape[:-1] + (self.m, self.m))

    def b1(self, v):
        th = np.asarray(v, float)[..., self.index]
        c, s = np.cos(th), np.sin(th)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    def db0(self, v):
        v = np.asarray(v)
        return np.zeros(v.shape[:-1] + (self.m, self.m, self.m))

    def db1(self, v):
        v = np.asarray(v, float)
        th = v[..., self.index]
        c, s = np.cos(th), np.sin(th)
        out = np.zeros(v.shape[:-1] + (self.m, 2, 2))
        out[..., self.index % self.m, :, :] = np.stack(
            [np.stack([-s, -c], -1), np.stack([c, -s], -1)], -2)
        return out


# -- anisotropy gamma and smoothing families ----------------------------------

class AnisotropyFamily(Protocol):
    lipschitz: float
    c_gamma: float

    def value(self, W, eps: float = 0.0) -> np.ndarray: ...
    def grad(self, W, eps: float) -> np.ndarray: ...
    def hess(self, W, eps: float) -> np.ndarray: ...
    def subgradient(self, W) -> np.ndarray: ...
    def gap(self, eps: float) -> float: ...


@dataclass(frozen=True)
class FrobeniusFamily:
    """Row-weighted Frobenius norm ``gamma(W) = |diag(w) W|`` smoothed as
    ``sqrt(|diag(w) W|^2 + eps^2)`` (minus ``eps`` when ``centered``, which keeps
    ``gamma_eps(0) = 0``).  The uniform gap is ``eps`` either way."""

    m: int
    n: int
    weights: tuple[float, ...] | None = None
    centered: bool = False
    c_gamma_declared: float | None = None

    @property
    def _w(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.m)
        return np.asarray(self.weights, float)

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(self._w)))

    @property
    def c_gamma(self) -> float:
        return self.lipschitz if self.c_gamma_declared is None else self.c_gamma_declared

    def gap(self, eps: float) -> float:
        return _check_eps(eps)

    def _sq(self, W):
        w2 = (self._w ** 2)[:, None]
        return np.einsum("...ij,...ij->...", w2 * W, W), w2

    def value(self, W, eps: float = 0.0):
        eps = _check_eps(eps)
        q, _ = self._sq(np.asarray(W, float))
        val = np.sqrt(q + eps * eps)
        return val - eps if self.centered else val

    def grad(self, W, eps: float):
        eps = _check_eps(eps, allow_zero=False)
        W = np.asarray(W, float)
        q, w2 = self._sq(W)
        return w2 * W / np.sqrt(q + eps * eps)[..., None, None]

    def hess(self, W, eps: float):
        eps = _check_eps(eps, allow_zero=False)
        W = np.asarray(W, float)
        q, w2 = self._sq(W)
        s = np.sqrt(q + eps * eps)[..., None, None, None, None]
        g = w2 * W
        m, n = W.shape[-2:]
        diag = np.einsum("ik,jl->ijkl", np.diag(self._w ** 2), np.eye(n))
        return diag / s - np.einsum("...ij,...kl->...ijkl", g, g) / s ** 3

    def subgradient(self, W):
        W = np.asarray(W, float)
        q, w2 = self._sq(W)
        norm = np.sqrt(q)[..., None, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(norm > 0, w2 * W / norm, 0.0)
        return out


@dataclass(frozen=True)
class HuberFamily:
    """Weighted entrywise 1-norm ``sum w_ij |W_ij|`` with Huber smoothing of width
    ``eps``; the gap is ``eps / 2`` per unit weight."""

    m: int
    n: int
    weights: tuple[tuple[float, ...], ...] | None = None
    c_gamma_declared: float | None = None

    @property
    def _w(self) -> np.ndarray:
        if self.weights is None:
            return np.ones((self.m, self.n))
        return np.asarray(self.weights, float).reshape(self.m, self.n)

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self._w))

    @property
    def c_gamma(self) -> float:
        return self.lipschitz if self.c_gamma_declared is None else self.c_gamma_declared

    def gap(self, eps: float) -> float:
        return 0.5 * _check_eps(eps) * float(np.sum(np.abs(self._w)))

    def value(self, W, eps: float = 0.0):
        eps = _check_eps(eps)
        a = np.abs(np.asarray(W, float))
        if eps == 0.0:
            h = a
        else:
            h = np.where(a <= eps, 0.5 * a * a / eps, a - 0.5 * eps)
        return np.einsum("...ij,ij->...", h, self._w)

    def grad(self, W, eps: float):
        eps = _check_eps(eps, allow_zero=False)
        return self._w * np.clip(np.asarray(W, float) / eps, -1.0, 1.0)

    def hess(self, W, eps: float):
        eps = _check_eps(eps, allow_zero=False)
        W = np.asarray(W, float)
        d = self._w * (np.abs(W) < eps) / eps
        m, n = W.shape[-2:]
        out = np.zeros(W.shape[:-2] + (m, n, m, n))
        ii, jj = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
        out[..., ii, jj, ii, jj] = d
        return out

    def subgradient(self, W):
        return self._w * np.sign(np.asarray(W, float))


# -- p-growth regularizer ------------------------------------------------------

@dataclass(frozen=True)
class PowerRegularizer:
    """``Upsilon_p(W) = |W|^p / p``.

    Growth bounds hold with ``max(p, 2^(p-2))`` and the gradient is strongly
    monotone with constant ``2^(2-p)`` (sharp at ``W1 = -W2``)."""

    p: float = 4.0

    def __post_init__(self):
        if not (np.isfinite(self.p) and self.p >= 2):
            raise ValueError(f"regularizer exponent must be >= 2, got {self.p}")

    @property
    def growth_constant(self) -> float:
        return max(self.p, 2.0 ** (self.p - 2.0))

    @property
    def monotonicity_constant(self) -> float:
        return 2.0 ** (2.0 - self.p)

    def value(self, W):
        W = np.asarray(W, float)
        return np.sqrt(frobenius(W, W)) ** self.p / self.p

    def grad(self, W):
        W = np.asarray(W, float)
        r = np.sqrt(frobenius(W, W))
        return (r ** (self.p - 2.0))[..., None, None] * W

    def hess(self, W):
        W = np.asarray(W, float)
        r = np.sqrt(frobenius(W, W))
        m, n = W.shape[-2:]
        eye = np.einsum("ik,jl->ijkl", np.eye(m), np.eye(n))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where((r > 0)[..., None, None], W / r[..., None, None], 0.0)
        rp = r ** (self.p - 2.0)
        return (rp[..., None, None, None, None] * eye
                + ((self.p - 2.0) * rp)[..., None, None, None, None]
                * np.einsum("...ij,...kl->...ijkl", unit, unit))


# -- potential G(x, u) ----------------------------------------------------------

@dataclass(frozen=True)
class ZeroPotential:
    m: int

    lipschitz = 0.0

    def nodal_value(self, u):
        return np.zeros(np.asarray(u).shape[0])

    def nodal_grad(self, u):
        return np.zeros_like(np.asarray(u, float))

    def nodal_hess_diag(self, u):
        return np.zeros_like(np.asarray(u, float))

    def value(self, f, v):
        return np.zeros(np.asarray(v).shape[:-1])

    def grad(self, f, v):
        return np.zeros_like(np.asarray(v, float))

    def target_at(self, x):
        return None


def pseudo_huber(r, delta):
    """``delta^2 (sqrt(1 + (r/delta)^2) - 1)`` with first and second derivatives."""
    t = np.sqrt(1.0 + (r / delta) ** 2)
    return delta * delta * (t - 1.0), r / t, 1.0 / t ** 3


@dataclass(frozen=True)
class HuberFidelity:
    """Saturating fidelity ``G(x, u) = sum_k lam_k psi(u_k - f_k(x))`` where ``psi``
    is the pseudo-Huber bump: convex, gradient bounded by ``delta``, Hessian by 1.

    ``target`` holds ``f`` at the nodes of ``grid``."""

    grid: Grid
    target: np.ndarray
    weights: tuple[float, ...]
    delta: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.target, float)
        if t.ndim == 1:
            t = t[:, None]
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        if t.shape != (self.grid.num_nodes, len(self.weights)):
            raise ValueError(f"target shape {t.shape} does not match grid/weights")
        if any(x < 0 for x in self.weights) or self.delta <= 0:
            raise ValueError("fidelity weights must be >= 0 and delta > 0")

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def lipschitz(self) -> float:
        lam = np.asarray(self.weights)
        return float(self.delta * np.linalg.norm(lam) + lam.max(initial=0.0))

    def value(self, f, v):
        psi = pseudo_huber(np.asarray(v, float) - f, self.delta)[0]
        return np.sum(np.asarray(self.weights) * psi, axis=-1)

    def grad(self, f, v):
        return np.asarray(self.weights) * pseudo_huber(np.asarray(v, float) - f, self.delta)[1]

    def hess_diag(self, f, v):
        return np.asarray(self.weights) * pseudo_huber(np.asarray(v, float) - f, self.delta)[2]

    def nodal_value(self, u):
        return self.value(self.target, u)

    def nodal_grad(self, u):
        return self.grad(self.target, u)

    def nodal_hess_diag(self, u):
        return self.hess_diag(self.target, u)

    def target_at(self, x):
        from scipy.interpolate import RegularGridInterpolator

        x = np.atleast_2d(np.asarray(x, float))
        axes = [np.linspace(0.0, L, n) for L, n in zip(self.grid.extents, self.grid.shape)]
        vals = self.grid.reshape(self.target)
        interp = RegularGridInterpolator(axes, vals, bounds_error=False, fill_value=None)
        tol = 1e-12 * max(self.grid.extents)
        if np.any(x < -tol) or np.any(x > np.asarray(self.grid.extents) + tol):
            raise ValueError(f"point {x.tolist()} lies outside the domain")
        return interp(np.clip(x, 0.0, self.grid.extents))


# -- the bundle ---------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    m: int
    n: int
    kappa: float
    mobility: ConstantMobility | ScalarMobility
    weight: ConstantWeight | SaturatingWeight
    operator: IdentityOperator | RotationOperator
    anisotropy: FrobeniusFamily | HuberFamily
    regularizer: PowerRegularizer = field(default_factory=PowerRegularizer)
    potential: ZeroPotential | HuberFidelity | None = None

    def __post_init__(self):
        if self.potential is None:
            object.__setattr__(self, "potential", ZeroPotential(self.m))
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if self.n not in (1, 2) or self.m < 1:
            raise ValueError(f"need M >= 1 and N in (1, 2), got M={self.m}, N={self.n}")
        p = self.regularizer.p
        if not (p > 2 and p >= self.n):
            raise ValueError(f"p must satisfy p > 2 and p >= N, got p={p}")
        if self.c_a <= 0:
            raise ValueError(f"ellipticity constant c_a must be > 0, got {self.c_a}")
        for name in ("anisotropy", "operator"):
            comp = getattr(self, name)
            if (comp.m, comp.n) != (self.m, self.n):
                raise ValueError(f"{name} is built for M={comp.m}, N={comp.n}")
        if self.potential.m != self.m:
            raise ValueError("potential has the wrong number of components")

    @property
    def c_a(self) -> float:
        return float(self.mobility.c_a)

    @property
    def p(self) -> float:
        return self.regularizer.p

    @property
    def alpha_sup(self) -> float:
        return float(self.weight.sup)


def _check_pair(spec: ModelSpec, v, W):
    v, W = np.asarray(v, float), np.asarray(W, float)
    if v.shape[-1] != spec.m or W.shape[-2:] != (spec.m, spec.n):
        raise ValueError(f"shape mismatch: v {v.shape}, W {W.shape} for M={spec.m}, N={spec.n}")
    return v, W


def apply_B(spec: ModelSpec, v, W):
    v, W = _check_pair(spec, v, W)
    op = spec.operator
    return op.b0(v) @ W @ op.b1(v)


def apply_B_star(spec: ModelSpec, v, W):
    v, W = _check_pair(spec, v, W)
    op = spec.operator
    return np.swapaxes(op.b0(v), -1, -2) @ W @ np.swapaxes(op.b1(v), -1, -2)


def apply_nabla_B(spec: ModelSpec, v, W):
    """Partial derivatives of ``v -> B(v) W``; shape ``(..., M, M, N)``, first
    trailing index is the differentiation variable."""
    v, W = _check_pair(spec, v, W)
    op = spec.operator
    W_ = W[..., None, :, :]
    return (op.db0(v) @ W_ @ op.b1(v)[..., None, :, :]
            + op.b0(v)[..., None, :, :] @ W_ @ op.db1(v))


def contract_nabla_B(spec: ModelSpec, Z, v, W):
    """``Z : [nabla B](v) W`` as an M-vector."""
    Z = np.asarray(Z, float)
    return np.einsum("...ij,...kij->...k", Z, apply_nabla_B(spec, v, W))


def gamma_eval(family, W, eps: float):
    _check_eps(eps, allow_zero=False)
    return family.value(W, eps)


def gamma_grad(family, W, eps: float):
    return family.grad(W, eps)


def subgradient_select(family, W):
    return family.subgradient(W)


def upsilon_eval(spec: ModelSpec, W):
    return spec.regularizer.value(W)


def upsilon_grad(spec: ModelSpec, W):
    return spec.regularizer.grad(W)


def _target(spec: ModelSpec, x, v):
    f = spec.potential.target_at(x)
    if f is None:
        return None
    return f[0] if v.ndim == 1 else f


def potential_eval(spec: ModelSpec, x, v):
    """``G(x, v)``; raises ``ValueError`` for points outside the domain."""
    v = np.asarray(v, float)
    f = _target(spec, x, v)
    return np.zeros(v.shape[:-1]) if f is None else spec.potential.value(f, v)


def potential_grad(spec: ModelSpec, x, v):
    v = np.asarray(v, float)
    f = _target(spec, x, v)
    return np.zeros_like(v) if f is None else spec.potential.grad(f, v)


# -- sampled assumption checks --------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    observed: float
    declared: float | None = None
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.observed = float(self.observed)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "observed": float(self.observed),
                "declared": None if self.declared is None else float(self.declared),
                "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def validate(spec: ModelSpec, sample_count: int = 1000, seed: int = 0,
             radius: float = 5.0) -> ValidationReport:
    """Sample the structural assumptions on the coefficients.

    Failures are collected into the report, never raised.  ``observed`` is the
    worst value seen, e.g. the smallest Rayleigh quotient of ``A`` for the
    ellipticity check.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    m, n, k = spec.m, spec.n, sample_count
    rtol = 1e-12
    checks: list[Check] = []

    checks.append(Check("kappa positive", spec.kappa > 0, spec.kappa))
    p = spec.p
    checks.append(Check("p > 2 and p >= N", p > 2 and p >= n, p, float(n)))

    v = rng.uniform(-radius, radius, (k, m))
    w = rng.standard_normal((k, m))
    A = spec.mobility(v)
    rq = np.einsum("ki,kij,kj->k", w, A, w) / np.einsum("ki,ki->k", w, w)
    lo = float(rq.min())
    checks.append(Check("A ellipticity", lo >= spec.c_a * (1 - rtol), lo, spec.c_a,
                        "min Rayleigh quotient vs declared c_a"))

    a = spec.weight(v)
    checks.append(Check("alpha nonnegative", a.min() >= 0, float(a.min())))
    checks.append(Check("alpha bounded", np.abs(a).max() <= spec.alpha_sup * (1 + rtol),
                        float(np.abs(a).max()), spec.alpha_sup))

    fam = spec.anisotropy
    X = radius * rng.standard_normal((k, m, n))
    Y = radius * rng.standard_normal((k, m, n))
    gX, gY = fam.value(X), fam.value(Y)
    mid = fam.value(0.5 * (X + Y)) - 0.5 * (gX + gY)
    scale = 1.0 + np.abs(gX) + np.abs(gY)
    checks.append(Check("gamma convex (midpoint)", bool(np.all(mid <= rtol * scale)),
                        float((mid / scale).max())))
    checks.append(Check("gamma nonnegative", gX.min() >= 0, float(gX.min())))
    # include small matrices so that the affine part of the growth bound is probed
    Xg = np.concatenate([X, X * 1e-3, np.zeros((1, m, n))])
    growth = fam.value(Xg) / (np.sqrt(frobenius(Xg, Xg)) + 1.0)
    checks.append(Check("gamma linear growth", growth.max() <= fam.c_gamma * (1 + rtol),
                        float(growth.max()), fam.c_gamma))
    lip = np.abs(gX - gY) / np.sqrt(frobenius(X - Y, X - Y))
    checks.append(Check("gamma Lipschitz", lip.max() <= fam.lipschitz * (1 + rtol),
                        float(lip.max()), fam.lipschitz))

    Xs = np.concatenate([X, 0.01 * X, np.zeros((1, m, n))])
    g0 = fam.value(Xs)
    for eps in EPS_LEVELS:
        gap = float(np.abs(fam.value(Xs, eps) - g0).max())
        checks.append(Check(f"smoothing gap eps={eps:g}", gap <= fam.gap(eps) * (1 + rtol),
                            gap, fam.gap(eps)))
        dg = fam.grad(Xs, eps)
        gn = float(np.sqrt(frobenius(dg, dg)).max())
        checks.append(Check(f"smoothed gradient bound eps={eps:g}",
                            gn <= fam.lipschitz * (1 + rtol), gn, fam.lipschitz))

    pot = spec.potential
    if isinstance(pot, HuberFidelity):
        idx = rng.integers(0, pot.target.shape[0], k)
        f = pot.target[idx]
        u1 = rng.uniform(-radius, radius, (k, m))
        u2 = u1 + rng.standard_normal((k, m))
        G1, G2 = pot.value(f, u1), pot.value(f, u2)
        d = np.linalg.norm(u1 - u2, axis=1)
        q = (np.abs(G1 - G2) + np.linalg.norm(pot.grad(f, u1) - pot.grad(f, u2), axis=1)) / d
        checks.append(Check("G nonnegative", min(G1.min(), G2.min()) >= 0,
                            float(min(G1.min(), G2.min()))))
        checks.append(Check("G Lipschitz (value + gradient)", q.max() <= pot.lipschitz * (1 + rtol),
                            float(q.max()), pot.lipschitz))

    reg = spec.regularizer
    Wn = np.sqrt(frobenius(X, X))
    up = reg.value(X)
    C = reg.growth_constant
    lower_ok = np.all((Wn ** p - 1) / C <= up * (1 + rtol))
    upper_ok = np.all(up <= C * (Wn ** p + 1))
    checks.append(Check("Upsilon growth", bool(lower_ok and upper_ok), C, C))
    D = X - Y
    mono = frobenius(reg.grad(X) - reg.grad(Y), D) / np.sqrt(frobenius(D, D)) ** p
    cm = reg.monotonicity_constant
    checks.append(Check("Upsilon strong monotonicity", mono.min() >= cm * (1 - 1e-10),
                        float(mono.min()), cm))
    return ValidationReport(checks)

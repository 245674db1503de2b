"""Ready-made configurations: orientation-adaptive denoising and KWC-style
grain-boundary evolution.

Both use a two-component state.  Denoising evolves ``(gray, theta)`` where
``theta`` turns the frame in which the gray gradient is measured; grains evolve
``(eta, theta)`` with an order-parameter-dependent weight on ``|grad theta|``.
The concrete coefficient choices are defaults of this package.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import Grid
from .models import (ConstantMobility, ConstantWeight, FrobeniusFamily, HuberFamily,
                     HuberFidelity, IdentityOperator, ModelSpec, PowerRegularizer,
                     RotationOperator, SaturatingWeight, ScalarMobility)
from .scheme import StepParams, Trajectory, run

MAX_SIDE = 128
MAX_STEPS = 500

# -- PGM ------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit PGM; returns ``uint8`` array ``(height, width)``."""
    data = Path(path).read_bytes()
    pos, tokens = 0, []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0][:8]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1:
        raise ValueError(f"{path}: empty image {width}x{height}")
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported depth (maxval {maxval}); only 8-bit PGM")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ValueError(f"{path}: truncated PGM header")
    pos += 1
    body = data[pos:pos + width * height]
    if len(body) != width * height:
        raise ValueError(f"{path}: truncated pixel data ({len(body)} of {width * height} bytes)")
    img = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        img = np.round(img.astype(float) * (255.0 / maxval)).astype(np.uint8)
    return img


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a gray image; float input is read as ``[0, 1]`` and rounded."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


# -- image problems ---------------------------------------------------------------

def structure_tensor_angle(image: np.ndarray, sigma: float = 1.5) -> np.ndarray:
    """Dominant gradient direction ``0.5 atan2(2 J01, J00 - J11)`` of the
    Gaussian-smoothed structure tensor; 0 where the image has no structure."""
    img = np.asarray(image, float)
    if img.ndim != 2 or min(img.shape) < 2:
        return np.zeros(img.shape)
    g0, g1 = np.gradient(img)
    J00 = gaussian_filter(g0 * g0, sigma)
    J01 = gaussian_filter(g0 * g1, sigma)
    J11 = gaussian_filter(g1 * g1, sigma)
    return 0.5 * np.arctan2(2 * J01, J00 - J11)


def image_grid(shape: tuple[int, int]) -> Grid:
    """Pixel-centred grid with spacing ``1 / (max side - 1)``; a one-pixel-wide
    image gives a 1D grid."""
    h, w = shape
    side = max(h, w)
    if side < 2:
        raise ValueError("image needs at least two pixels")
    if side > MAX_SIDE:
        raise ValueError(f"image side {side} exceeds the cap {MAX_SIDE}")
    dx = 1.0 / (side - 1)
    dims = [n for n in (h, w) if n > 1]
    return Grid(tuple(dims), tuple((n - 1) * dx for n in dims))


def image_state(image: np.ndarray, sigma: float = 1.5) -> np.ndarray:
    """``(K, 2)`` field of gray values and structure-tensor angles."""
    img = np.asarray(image, float)
    if img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    theta = structure_tensor_angle(img, sigma)
    return np.stack([img.ravel(), theta.ravel()], axis=1)


def load_image(path: str | Path, sigma: float = 1.5) -> np.ndarray:
    """Read a P5 PGM as the two-component state ``(gray, orientation)``."""
    return image_state(read_pgm(path) / 255.0, sigma)


def stripe_image(size: int = 32, period: float = 8.0, angle: float = np.pi / 4,
                 noise: float = 0.1, seed: int = 0) -> np.ndarray:
    """Sinusoidal stripes with normal at ``angle``, plus clipped Gaussian noise."""
    i, j = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    s = i * np.cos(angle) + j * np.sin(angle)
    img = 0.5 + 0.3 * np.sin(2 * np.pi * s / period)
    img = img + noise * np.random.default_rng(seed).standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class ImageProblem:
    """Denoising setup.  ``coupling`` selects how the gray gradient is measured:
    ``rotation`` in the frame turned by the evolving orientation, ``axis`` in
    the fixed coordinate frame, ``isotropic`` by the Euclidean norm."""

    image: np.ndarray
    lam: float = 1.0
    coupling: str = "rotation"
    eps: float = 0.05
    T: float = 0.01
    tau: float = 1e-4
    nu: float = 1e-3
    mu: float = 1e-3
    kappa: float = 0.05
    alpha: float = 0.5
    weights: tuple[float, float] = (0.25, 1.0)
    delta: float = 0.5
    sigma: float = 1.5

    def __post_init__(self):
        img = np.asarray(self.image, float)
        if img.ndim != 2:
            raise ValueError("image must be 2D")
        if img.min() < 0 or img.max() > 1:
            raise ValueError("image values must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.coupling not in ("rotation", "axis", "isotropic"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        object.__setattr__(self, "image", img)

    @property
    def grid(self) -> Grid:
        return image_grid(self.image.shape)

    def initial_state(self) -> np.ndarray:
        return image_state(self.image, self.sigma)

    def step_params(self) -> StepParams:
        return StepParams(tau=self.tau, nu=self.nu, eps=self.eps, mu=self.mu)


def build_denoise_model(problem: ImageProblem) -> ModelSpec:
    grid = problem.grid
    n = grid.dim
    u0 = problem.initial_state()
    if problem.coupling == "isotropic":
        w = np.zeros(2)
        w[0] = problem.weights[1]
        aniso = FrobeniusFamily(2, n, weights=tuple(w), centered=True)
    else:
        w = np.zeros((2, n))
        w[0] = problem.weights[:n] if n == 2 else problem.weights[0]
        aniso = HuberFamily(2, n, weights=tuple(map(tuple, w)))
    if problem.coupling == "rotation" and n == 2:
        op = RotationOperator(2, 2, index=1)
    else:
        op = IdentityOperator(2, n)
    target = u0.copy()
    fid = HuberFidelity(grid, target, (problem.lam, 0.0), problem.delta)
    return ModelSpec(m=2, n=n, kappa=problem.kappa, mobility=ConstantMobility.identity(2),
                     weight=ConstantWeight(2, problem.alpha), operator=op,
                     anisotropy=aniso, regularizer=PowerRegularizer(4), potential=fid)


def denoise(problem: ImageProblem, params: StepParams | None = None,
            out_dir: str | Path | None = None, snapshot_every: int = 0) -> Trajectory:
    """Run the denoising flow; optionally write PGM snapshots of the gray channel."""
    params = problem.step_params() if params is None else params
    _check_steps(problem.T, params.tau)
    spec = build_denoise_model(problem)
    shape = problem.image.shape
    cb = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_pgm(out / "gray_0000.pgm", problem.image)

        def cb(i, t, u):
            if snapshot_every and i % snapshot_every == 0:
                write_pgm(out / f"gray_{i:04d}.pgm", np.clip(u[:, 0], 0, 1).reshape(shape))
    traj = run(spec, problem.grid, problem.initial_state(), problem.T, params, callback=cb)
    if out_dir is not None:
        write_pgm(Path(out_dir) / "gray_final.pgm",
                  np.clip(traj.states[-1][:, 0], 0, 1).reshape(shape))
    return traj


def _check_steps(T, tau):
    if T / tau > MAX_STEPS * (1 + 1e-9):
        raise ValueError(f"T/tau = {T / tau:.0f} exceeds the step cap {MAX_STEPS}")


# -- grains -------------------------------------------------------------------------

def make_polycrystal(grid: Grid, seeds: int, rng_seed: int = 0,
                     theta_range: tuple[float, float] = (0.0, 1.0),
                     width: float = 0.0) -> np.ndarray:
    """Voronoi polycrystal: ``eta = 1`` and a random constant ``theta`` per grain.

    ``width > 0`` blurs the orientation jumps with a Gaussian of that standard
    deviation (in domain units), so the initial gradients stay bounded under
    grid refinement."""
    if seeds < 1:
        raise ValueError("need at least one seed")
    rng = np.random.default_rng(rng_seed)
    centers = rng.uniform(0.0, 1.0, (seeds, grid.dim)) * np.asarray(grid.extents)
    angles = rng.uniform(*theta_range, seeds)
    d2 = ((grid.coords[:, None, :] - centers[None]) ** 2).sum(-1)
    theta = angles[np.argmin(d2, axis=1)]
    if width > 0 and seeds > 1:
        sig = [width / h for h in grid.spacing]
        theta = gaussian_filter(grid.reshape(theta), sig, mode="nearest").ravel()
    return np.stack([np.ones(grid.num_nodes), theta], axis=1)


@dataclass(frozen=True)
class GrainProblem:
    shape: tuple[int, ...] = (32, 32)
    seeds: int = 5
    rng_seed: int = 0
    kappa: float = 0.01
    a0: float = 0.05
    a1: float = 1.0
    mobility_amp: float = 0.0
    lam: float = 1.0
    T: float = 0.01
    tau: float = 1e-4
    nu: float = 1e-3
    eps: float = 0.05
    mu: float = 1e-3
    theta_range: tuple[float, float] = (0.0, 1.0)
    width: float = 0.03

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) not in (1, 2) or max(shape) > MAX_SIDE:
            raise ValueError(f"grid shape {shape} must be 1D/2D with sides <= {MAX_SIDE}")
        object.__setattr__(self, "shape", shape)
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.a0 < 0 or self.a1 < 0 or self.lam < 0 or self.mobility_amp < 0:
            raise ValueError("a0, a1, lam and mobility_amp must be >= 0")

    @property
    def grid(self) -> Grid:
        return Grid.unit(*self.shape)

    def initial_state(self) -> np.ndarray:
        return make_polycrystal(self.grid, self.seeds, self.rng_seed, self.theta_range,
                                self.width)

    def step_params(self) -> StepParams:
        return StepParams(tau=self.tau, nu=self.nu, eps=self.eps, mu=self.mu)


def build_grain_model(problem: GrainProblem) -> ModelSpec:
    grid = problem.grid
    n = grid.dim
    target = np.zeros((grid.num_nodes, 2))
    target[:, 0] = 1.0
    return ModelSpec(
        m=2, n=n, kappa=problem.kappa,
        mobility=ScalarMobility(2, 1.0, problem.mobility_amp, 0),
        weight=SaturatingWeight(2, problem.a0, problem.a1, 0),
        operator=IdentityOperator(2, n),
        anisotropy=FrobeniusFamily(2, n, weights=(0.0, 1.0), centered=True),
        regularizer=PowerRegularizer(4),
        potential=HuberFidelity(grid, target, (problem.lam, 0.0), 1.0),
    )


def grain_evolve(problem: GrainProblem, params: StepParams | None = None) -> Trajectory:
    params = problem.step_params() if params is None else params
    _check_steps(problem.T, params.tau)
    return run(build_grain_model(problem), problem.grid, problem.initial_state(),
               problem.T, params)


def theta_range_report(traj: Trajectory) -> dict:
    """Initial and final orientation ranges (reported, not enforced)."""
    th0, th1 = traj.states[0][:, 1], traj.states[-1][:, 1]
    return {"initial": [float(th0.min()), float(th0.max())],
            "final": [float(th1.min()), float(th1.max())],
            "within": bool(th1.min() >= th0.min() - 1e-9 and th1.max() <= th0.max() + 1e-9)}

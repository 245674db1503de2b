"""Rectangular grids with homogeneous Neumann boundary conditions.

Nodal fields are arrays of shape ``(K, M)`` (node-major, components last,
nodes in row-major order over the axes).  Gradients live on cells and have
shape ``(K_c, M, N)``.

In 1D the cells are the intervals between consecutive nodes.  In 2D every
rectangle of four neighbouring nodes is split into two right triangles, so the
gradient is piecewise constant and exact for affine fields; the Dirichlet form
reproduces the standard five-point Neumann Laplacian.  The divergence is
defined as the negative adjoint of the gradient with respect to the weighted
inner products below, which makes the discrete Green formula

    -(div Z, w)_h = (Z, grad w)_h

an algebraic identity.  No-flux boundary conditions are then natural.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

GDF_MAGIC = b"GDF1"
_GDF_HEADER = struct.Struct("<4sIIII12x")


def _trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def frobenius(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Frobenius product ``A : B`` over the last two axes."""
    return np.einsum("...ij,...ij->...", A, B)


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on ``[0, L_1] x ... x [0, L_N]`` for ``N in {1, 2}``."""

    shape: tuple[int, ...]
    extents: tuple[float, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        extents = tuple(float(x) for x in self.extents)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extents", extents)
        if len(shape) not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {len(shape)}")
        if len(extents) != len(shape):
            raise ValueError("extents and shape must have the same length")
        if any(n < 2 for n in shape):
            raise ValueError(f"need at least 2 nodes per axis, got {shape}")
        if any(not np.isfinite(x) or x <= 0 for x in extents):
            raise ValueError(f"extents must be positive, got {extents}")

    @classmethod
    def unit(cls, *shape: int) -> Grid:
        return cls(tuple(shape), (1.0,) * len(shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n - 1) for L, n in zip(self.extents, self.shape))

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def num_cells(self) -> int:
        if self.dim == 1:
            return self.shape[0] - 1
        return 2 * (self.shape[0] - 1) * (self.shape[1] - 1)

    @property
    def nodes_per_cell(self) -> int:
        return self.dim + 1

    @property
    def measure(self) -> float:
        return float(np.prod(self.extents))

    @cached_property
    def coords(self) -> np.ndarray:
        axes = [np.linspace(0.0, L, n) for L, n in zip(self.extents, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def node_weights(self) -> np.ndarray:
        ws = [_trapezoid_weights(n, h) for n, h in zip(self.shape, self.spacing)]
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1]).ravel()

    @cached_property
    def cell_weights(self) -> np.ndarray:
        h = self.spacing
        if self.dim == 1:
            return np.full(self.num_cells, h[0])
        return np.full(self.num_cells, 0.5 * h[0] * h[1])

    @cached_property
    def connectivity(self) -> np.ndarray:
        """Node indices of each cell, shape ``(K_c, N + 1)``."""
        if self.dim == 1:
            j = np.arange(self.shape[0] - 1)
            return np.stack([j, j + 1], axis=1)
        nx, ny = self.shape
        i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
        i, j = i.ravel(), j.ravel()
        n00 = i * ny + j
        n10 = (i + 1) * ny + j
        n01 = i * ny + j + 1
        n11 = (i + 1) * ny + j + 1
        lower = np.stack([n00, n10, n01], axis=1)
        upper = np.stack([n11, n01, n10], axis=1)
        conn = np.empty((2 * len(i), 3), dtype=np.intp)
        conn[0::2] = lower
        conn[1::2] = upper
        return conn

    @cached_property
    def local_gradients(self) -> np.ndarray:
        """Gradients of the local nodal basis, shape ``(K_c, N + 1, N)``."""
        h = self.spacing
        if self.dim == 1:
            g = np.array([[-1.0 / h[0]], [1.0 / h[0]]])
            return np.broadcast_to(g, (self.num_cells, 2, 1))
        hx, hy = h
        lower = np.array([[-1 / hx, -1 / hy], [1 / hx, 0.0], [0.0, 1 / hy]])
        upper = np.array([[1 / hx, 1 / hy], [-1 / hx, 0.0], [0.0, -1 / hy]])
        g = np.empty((self.num_cells, 3, 2))
        g[0::2] = lower
        g[1::2] = upper
        return g

    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Sparse map from nodal scalars to cell gradients, ``(K_c * N, K)``."""
        kc, nl, n = self.num_cells, self.nodes_per_cell, self.dim
        rows = (np.arange(kc)[:, None, None] * n + np.arange(n)[None, None, :])
        rows = np.broadcast_to(rows, (kc, nl, n))
        cols = np.broadcast_to(self.connectivity[:, :, None], (kc, nl, n))
        D = sp.coo_matrix(
            (self.local_gradients.ravel(), (rows.ravel(), cols.ravel())),
            shape=(kc * n, self.num_nodes),
        )
        return D.tocsr()

    @cached_property
    def averaging_matrix(self) -> sp.csr_matrix:
        """Sparse map from nodal values to cell means, ``(K_c, K)``."""
        kc, nl = self.num_cells, self.nodes_per_cell
        rows = np.repeat(np.arange(kc), nl)
        vals = np.full(kc * nl, 1.0 / nl)
        P = sp.coo_matrix((vals, (rows, self.connectivity.ravel())),
                          shape=(kc, self.num_nodes))
        return P.tocsr()

    @cached_property
    def stiffness_matrix(self) -> sp.csr_matrix:
        """Scalar Dirichlet form ``D^T W_c D``; ``(K, K)``, symmetric."""
        D = self.gradient_matrix
        wc = np.repeat(self.cell_weights, self.dim)
        return (D.T @ sp.diags(wc) @ D).tocsr()

    # -- field checks --------------------------------------------------------

    def check_nodal(self, u: np.ndarray, name: str = "u") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim not in (1, 2) or u.shape[0] != self.num_nodes:
            raise ValueError(
                f"{name} has shape {u.shape}, expected ({self.num_nodes}, M)")
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{name} contains non-finite values")
        return u

    def check_cellwise(self, Z: np.ndarray, name: str = "Z") -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        ok = Z.shape[:1] == (self.num_cells,) and Z.shape[-1] == self.dim
        if not ok or Z.ndim not in (2, 3):
            raise ValueError(
                f"{name} has shape {Z.shape}, expected ({self.num_cells}, M, {self.dim})")
        if not np.all(np.isfinite(Z)):
            raise ValueError(f"{name} contains non-finite values")
        return Z

    # -- operators -----------------------------------------------------------

    def gradient(self, u: np.ndarray) -> np.ndarray:
        u = self.check_nodal(u)
        g = self.gradient_matrix @ u
        if u.ndim == 1:
            return g.reshape(self.num_cells, self.dim)
        return g.reshape(self.num_cells, self.dim, -1).transpose(0, 2, 1)

    def divergence(self, Z: np.ndarray) -> np.ndarray:
        Z = self.check_cellwise(Z)
        weighted = Z * self.cell_weights.reshape((-1,) + (1,) * (Z.ndim - 1))
        if Z.ndim == 2:
            flat = weighted.reshape(-1)
        else:
            flat = weighted.transpose(0, 2, 1).reshape(self.num_cells * self.dim, -1)
        out = -(self.gradient_matrix.T @ flat)
        return out / self.node_weights.reshape((-1,) + (1,) * (out.ndim - 1))

    def neumann_laplacian(self, u: np.ndarray) -> np.ndarray:
        return self.divergence(self.gradient(u))

    def laplacian_matrix(self) -> sp.csr_matrix:
        return (-sp.diags(1.0 / self.node_weights) @ self.stiffness_matrix).tocsr()

    def inner_h(self, u: np.ndarray, v: np.ndarray) -> float:
        u, v = self.check_nodal(u), self.check_nodal(v, "v")
        if u.shape != v.shape:
            raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
        prod = u * v if u.ndim == 1 else np.sum(u * v, axis=1)
        return float(self.node_weights @ prod)

    def inner_grad(self, Z1: np.ndarray, Z2: np.ndarray) -> float:
        Z1, Z2 = self.check_cellwise(Z1, "Z1"), self.check_cellwise(Z2, "Z2")
        if Z1.shape != Z2.shape:
            raise ValueError(f"shape mismatch {Z1.shape} vs {Z2.shape}")
        prod = (Z1 * Z2).reshape(self.num_cells, -1).sum(axis=1)
        return float(self.cell_weights @ prod)

    def norm_h(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner_h(u, u), 0.0)))

    def cell_values(self, u: np.ndarray) -> np.ndarray:
        """Cell means of a nodal field."""
        return self.averaging_matrix @ self.check_nodal(u)

    def integrate_nodal(self, f: np.ndarray) -> float:
        return float(self.node_weights @ f)

    def integrate_cells(self, f: np.ndarray) -> float:
        return float(self.cell_weights @ f)

    def reshape(self, u: np.ndarray) -> np.ndarray:
        """View a nodal field as ``shape + (M,)``."""
        u = np.asarray(u)
        return u.reshape(self.shape + u.shape[1:])


# -- raw dumps ---------------------------------------------------------------

def write_gdf(path: str | Path, grid: Grid, u: np.ndarray) -> None:
    """Write a GDF1 dump: 32-byte header then little-endian float64 values."""
    u = grid.check_nodal(u)
    if u.ndim == 1:
        u = u[:, None]
    counts = grid.shape + (1,) * (2 - grid.dim)
    header = _GDF_HEADER.pack(GDF_MAGIC, grid.dim, u.shape[1], *counts)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def read_gdf(path: str | Path) -> tuple[tuple[int, ...], np.ndarray]:
    """Return ``(node_counts, values)`` with values of shape ``(K, M)``."""
    data = Path(path).read_bytes()
    if len(data) < _GDF_HEADER.size:
        raise ValueError("GDF file shorter than its header")
    magic, dim, m, nx, ny = _GDF_HEADER.unpack_from(data)
    if magic != GDF_MAGIC or dim not in (1, 2):
        raise ValueError("not a GDF1 file")
    shape = (nx,) if dim == 1 else (nx, ny)
    k = int(np.prod(shape))
    body = data[_GDF_HEADER.size:]
    if len(body) != 8 * k * m:
        raise ValueError(f"GDF payload has {len(body)} bytes, expected {8 * k * m}")
    return shape, np.frombuffer(body, dtype="<f8").reshape(k, m).copy()


def write_csv(path: str | Path, grid: Grid, u: np.ndarray) -> None:
    """One row per node: coordinates followed by the field components."""
    u = grid.check_nodal(u)
    if u.ndim == 1:
        u = u[:, None]
    axes = ["x", "y"][: grid.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(axes + [f"u{k}" for k in range(u.shape[1])])
        for xc, row in zip(grid.coords, u):
            w.writerow([repr(float(c)) for c in xc] + [repr(float(x)) for x in row])

import struct

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from gradflow.checks import green_identity_check
from gradflow.grid import Grid, frobenius, read_gdf, write_csv, write_gdf

shapes_1d = st.integers(2, 40).map(lambda n: (n,))
shapes_2d = st.tuples(st.integers(2, 12), st.integers(2, 12))
extents = st.floats(0.1, 5.0)


@st.composite
def grids(draw):
    shape = draw(st.one_of(shapes_1d, shapes_2d))
    return Grid(shape, tuple(draw(extents) for _ in shape))


def stencil_1d(n, h):
    """Three-point Laplacian with reflected ghost nodes."""
    L = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).tolil()
    L[0, 1] = 2.0
    L[n - 1, n - 2] = 2.0
    return L.tocsr() / h ** 2


def test_grid_counts():
    g = Grid((5, 4), (2.0, 1.5))
    assert g.dim == 2 and g.num_nodes == 20 and g.num_cells == 2 * 4 * 3
    assert g.spacing == (0.5, 0.5)
    assert g.measure == pytest.approx(3.0)
    g1 = Grid.unit(7)
    assert g1.num_cells == 6 and g1.spacing == (1 / 6,)


@pytest.mark.parametrize("shape, ext", [((1,), (1.0,)), ((3, 3, 3), (1.0,) * 3),
                                        ((4,), (0.0,)), ((4, 4), (1.0,))])
def test_grid_rejects_bad_geometry(shape, ext):
    with pytest.raises(ValueError):
        Grid(shape, ext)


@given(g=grids(), c=st.floats(-10, 10), m=st.integers(1, 3))
def test_gradient_of_constant_is_zero(g, c, m):
    G = g.gradient(np.full((g.num_nodes, m), c))
    assert G.shape == (g.num_cells, m, g.dim)
    assert np.all(G == 0)


def test_gradient_exact_for_affine_1d():
    g = Grid((9,), (2.0,))
    G = g.gradient(g.coords[:, 0])
    np.testing.assert_allclose(G, 1.0, rtol=1e-14)


def test_gradient_matches_dense_difference_matrix(rng):
    g = Grid((4,), (1.5,))
    h = 0.5
    D = (np.eye(4, k=1) - np.eye(4))[:3] / h
    u = rng.standard_normal(4)
    np.testing.assert_allclose(g.gradient(u)[:, 0], D @ u, rtol=1e-14)


def test_gradient_2d_matches_per_triangle_solve(rng):
    g = Grid((4, 3), (1.0, 0.7))
    u = rng.standard_normal(g.num_nodes)
    G = g.gradient(u)
    for c, nodes in enumerate(g.connectivity):
        X = g.coords[nodes]
        A = X[1:] - X[0]
        ref = np.linalg.solve(A, u[nodes[1:]] - u[nodes[0]])
        np.testing.assert_allclose(G[c], ref, rtol=1e-12, atol=1e-12)


def test_divergence_of_zero(rng):
    g = Grid.unit(5, 6)
    assert np.all(g.divergence(np.zeros((g.num_cells, 2, 2))) == 0)


def test_div_grad_pairing_8_nodes(rng):
    g = Grid((8,), (1.3,))
    u, w = rng.standard_normal(8), rng.standard_normal(8)
    lhs = g.inner_h(g.neumann_laplacian(u), w)
    rhs = -g.inner_grad(g.gradient(u), g.gradient(w))
    assert abs(lhs - rhs) <= 1e-13 * abs(rhs)


def test_divergence_is_weighted_negative_transpose():
    g = Grid((5,), (1.0,))
    D = g.gradient_matrix.toarray()
    Div = np.column_stack([g.divergence(np.eye(g.num_cells)[:, j:j + 1])
                           for j in range(g.num_cells)])
    Wn, Wc = np.diag(g.node_weights), np.diag(g.cell_weights)
    np.testing.assert_allclose(Wn @ Div, -D.T @ Wc, atol=1e-14)
    # interior rows carry full weight h on both sides, so they are exactly -D^T
    np.testing.assert_allclose(Div[1:-1], -D.T[1:-1], atol=1e-12)


def test_frobenius_definition():
    assert frobenius(np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]])) == 5.0


@given(g=grids(), seed=st.integers(0, 2 ** 16))
def test_inner_products_symmetric_positive(g, seed):
    r = np.random.default_rng(seed)
    u, v = r.standard_normal((2, g.num_nodes, 2))
    Z1, Z2 = r.standard_normal((2, g.num_cells, 2, g.dim))
    assert g.inner_h(u, v) == pytest.approx(g.inner_h(v, u), rel=1e-14)
    assert g.inner_grad(Z1, Z2) == pytest.approx(g.inner_grad(Z2, Z1), rel=1e-14)
    assert g.inner_h(u, u) > 0
    assert g.inner_h(0 * u, 0 * u) == 0
    assert abs(g.inner_h(u, v)) <= g.norm_h(u) * g.norm_h(v) * (1 + 1e-14)


@given(g=grids(), c=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       d=st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_inner_h_of_constants(g, c, d):
    u = np.tile(c, (g.num_nodes, 1))
    v = np.tile(d, (g.num_nodes, 1))
    assert g.inner_h(u, v) == pytest.approx(np.dot(c, d) * g.measure, abs=1e-12)


@given(g=grids(), c=st.floats(-5, 5))
def test_laplacian_kills_constants(g, c):
    assert np.allclose(g.neumann_laplacian(np.full(g.num_nodes, c)), 0, atol=1e-9)


def test_laplacian_row_sums_and_symmetry():
    g = Grid((6,), (1.0,))
    L = g.laplacian_matrix().toarray()
    assert np.max(np.abs(L.sum(axis=1))) <= 1e-12
    S = g.stiffness_matrix.toarray()
    assert np.max(np.abs(S - S.T)) <= 1e-13 * np.max(np.abs(S))
    g2 = Grid.unit(5, 4)
    S2 = g2.stiffness_matrix.toarray()
    assert np.max(np.abs(S2 - S2.T)) <= 1e-13 * np.max(np.abs(S2))
    assert np.max(np.abs(g2.laplacian_matrix().toarray().sum(axis=1))) <= 1e-10


def test_laplacian_matches_ghost_node_stencils():
    g1 = Grid((7,), (1.2,))
    np.testing.assert_allclose(g1.laplacian_matrix().toarray(),
                               stencil_1d(7, 0.2).toarray(), rtol=1e-12, atol=1e-9)
    g2 = Grid((6, 5), (1.0, 0.8))
    Lx, Ly = stencil_1d(6, 0.2), stencil_1d(5, 0.2)
    five_point = sp.kron(Lx, sp.eye(5)) + sp.kron(sp.eye(6), Ly)
    np.testing.assert_allclose(g2.laplacian_matrix().toarray(), five_point.toarray(),
                               rtol=1e-12, atol=1e-9)


@given(g=grids(), seed=st.integers(0, 2 ** 16))
def test_green_identity_property(g, seed):
    assert green_identity_check(g, trials=3, seed=seed).passed


def test_shape_errors():
    g = Grid.unit(4, 4)
    with pytest.raises(ValueError):
        g.gradient(np.zeros(15))
    with pytest.raises(ValueError):
        g.divergence(np.zeros((g.num_cells, 1, 1)))
    with pytest.raises(ValueError):
        g.gradient(np.full(16, np.nan))
    with pytest.raises(ValueError):
        g.inner_h(np.zeros((16, 1)), np.zeros((16, 2)))


@pytest.mark.parametrize("shape", [(6,), (4, 3)])
def test_gdf_roundtrip(tmp_path, rng, shape):
    g = Grid.unit(*shape)
    u = rng.standard_normal((g.num_nodes, 2))
    p = tmp_path / "u.gdf"
    write_gdf(p, g, u)
    raw = p.read_bytes()
    assert raw[:4] == b"GDF1" and len(raw) == 32 + 8 * u.size
    n, m, nx, ny = struct.unpack("<IIII", raw[4:20])
    assert (n, m, nx) == (g.dim, 2, shape[0]) and ny == (shape[1] if len(shape) == 2 else 1)
    shp, vals = read_gdf(p)
    assert shp == shape
    assert np.array_equal(vals, u)


def test_gdf_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.gdf"
    p.write_bytes(b"NOPE" + bytes(28))
    with pytest.raises(ValueError):
        read_gdf(p)


def test_csv_export(tmp_path, rng):
    g = Grid.unit(3, 2)
    p = tmp_path / "u.csv"
    write_csv(p, g, rng.standard_normal((g.num_nodes, 2)))
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,u0,u1" and len(lines) == g.num_nodes + 1

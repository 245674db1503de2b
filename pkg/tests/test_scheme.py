import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from scipy.sparse.linalg import spsolve

from gradflow import models as md
from gradflow.apps import GrainProblem, build_grain_model
from gradflow.grid import Grid
from gradflow.limits import energy_inequality_check
from gradflow.scheme import (Discretization, StepFailure, StepParams, interpolant, run,
                             solve_step, step_residual)

from conftest import coupled_spec, heat_spec


def ghost_laplacian(n, h):
    L = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).tolil()
    L[0, 1] = L[n - 1, n - 2] = 2.0
    return L.tocsr() / h ** 2


def test_constant_state_residual_vanishes():
    g = Grid.unit(6, 6)
    spec = heat_spec(g, m=2)
    u = np.tile([0.4, -1.0], (g.num_nodes, 1))
    r = step_residual(spec, g, u, u, StepParams(tau=0.1, nu=0.5, mu=0.5))
    assert np.abs(r).max() <= 1e-12     # roundoff in assembled stiffness row sums


def test_heat_residual_matches_dense_operator(rng):
    g = Grid((12,), (1.0,))
    kappa, tau = 0.7, 0.03
    u, v = rng.standard_normal((2, 12, 1))
    r = step_residual(heat_spec(g, kappa), g, v, u, StepParams(tau=tau))
    L = ghost_laplacian(12, 1 / 11).toarray()
    ref = (v[:, 0] - u[:, 0]) / tau - kappa * L @ v[:, 0]
    np.testing.assert_allclose(r[:, 0], ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_implicit_jacobian_symmetric_for_constant_coefficients(rng):
    g = Grid.unit(5, 4)
    spec = md.ModelSpec(m=2, n=2, kappa=0.5, mobility=md.ConstantMobility.identity(2),
                        weight=md.ConstantWeight(2, 0.8), operator=md.IdentityOperator(2, 2),
                        anisotropy=md.FrobeniusFamily(2, 2),
                        potential=md.HuberFidelity(g, rng.standard_normal((g.num_nodes, 2)),
                                                   (1.0, 0.5)))
    p = StepParams(tau=0.1, nu=0.2, eps=0.1, mu=0.1)
    disc = Discretization(spec, g)
    u = rng.standard_normal((g.num_nodes, 2))
    v = u + 0.3 * rng.standard_normal(u.shape)
    h = 1e-6
    cols = []
    for j in range(v.size):
        e = np.zeros(v.size)
        e[j] = h
        e = e.reshape(v.shape)
        cols.append(((disc.implicit_vector(v + e, u, p.tau, p)
                      - disc.implicit_vector(v - e, u, p.tau, p)) / (2 * h)).ravel())
    J = np.column_stack(cols)
    assert np.max(np.abs(J - J.T)) <= 1e-6 * np.max(np.abs(J))
    Ja = disc.jacobian(v, u, p.tau, p).toarray()
    assert np.max(np.abs(Ja - Ja.T)) <= 1e-12 * np.max(np.abs(Ja))


def test_jacobian_matches_directional_differences(rng):
    g = Grid.unit(5, 5)
    spec = coupled_spec(g)
    p = StepParams(tau=0.05, nu=0.1, eps=0.1, mu=0.1)
    disc = Discretization(spec, g)
    for _ in range(20):
        u = rng.standard_normal((g.num_nodes, 2))
        v = u + 0.3 * rng.standard_normal(u.shape)
        d = rng.standard_normal(u.shape)
        Jd = disc.jacobian(v, u, p.tau, p) @ d.ravel()
        fd = (disc.implicit_vector(v + 1e-6 * d, u, p.tau, p)
              - disc.implicit_vector(v - 1e-6 * d, u, p.tau, p)).ravel() / 2e-6
        assert np.linalg.norm(Jd - fd) <= 1e-6 * np.linalg.norm(Jd)


def test_residual_errors():
    g = Grid.unit(4, 4)
    spec = coupled_spec(g)
    u = np.zeros((16, 2))
    with pytest.raises(ValueError):
        step_residual(spec, g, np.full((16, 2), np.inf), u, StepParams(tau=0.1))
    with pytest.raises(ValueError):
        step_residual(spec, g, np.zeros((15, 2)), u, StepParams(tau=0.1))


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(tau=0.1, eps=0.0), dict(tau=0.1, nu=1.0),
                                dict(tau=0.1, mu=-0.1), dict(tau=0.1, max_iter=0)])
def test_step_params_validation(kw):
    with pytest.raises(ValueError):
        StepParams(**kw)


def test_heat_step_matches_sparse_backward_euler():
    g = Grid((32,), (1.0,))
    x = g.coords[:, 0]
    u0 = (np.cos(np.pi * x) + 0.3 * np.cos(3 * np.pi * x))[:, None]
    tau, kappa = 1e-2, 1.0
    u1, diag = solve_step(heat_spec(g, kappa), g, u0, StepParams(tau=tau))
    A = sp.identity(32) - tau * kappa * ghost_laplacian(32, 1 / 31)
    ref = spsolve(A.tocsc(), u0[:, 0])
    assert np.linalg.norm(u1[:, 0] - ref) <= 1e-10 * np.linalg.norm(ref)
    assert diag.halvings == 0 and diag.dissipation_ok


def test_constant_state_is_fixed_point():
    prob = GrainProblem(shape=(8, 8), seeds=1)
    u0 = prob.initial_state()
    u1, diag = solve_step(build_grain_model(prob), prob.grid, u0, prob.step_params())
    assert np.array_equal(u1, u0) and diag.iterations == 0


def test_kwc_dissipation_every_step():
    prob = GrainProblem(shape=(12, 12), T=2e-3, tau=1e-4)
    spec = build_grain_model(prob)
    traj = run(spec, prob.grid, prob.initial_state(), prob.T, prob.step_params())
    assert traj.steps == 20
    for d in traj.diagnostics:
        assert d.lhs <= d.rhs + 1e-10 * (1 + d.rhs)
    E = traj.energies()
    assert np.all(np.diff(E) <= 1e-10 * (1 + E[:-1]))
    assert energy_inequality_check(traj, regularized=True).passed


def test_single_step_run_and_bookkeeping(tmp_path):
    g = Grid.unit(6)
    u0 = np.cos(np.pi * g.coords)
    traj = run(heat_spec(g), g, u0, 0.01, StepParams(tau=0.01))
    assert traj.steps == 1 and traj.times == [0.0, 0.01]
    assert len(traj.diagnostics) == len(traj.states) - 1
    traj.write_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0].startswith("i,t,lhs,rhs,dirichlet") and len(lines) == 2
    with pytest.raises(ValueError):
        run(heat_spec(g), g, u0, 0.0, StepParams(tau=0.01))


def test_failure_keeps_partial_trajectory():
    prob = GrainProblem(shape=(10, 10), T=1e-2, tau=1e-2)
    params = StepParams(tau=1e-2, nu=1e-3, eps=0.05, mu=1e-3, tol=1e-14, max_iter=1,
                        max_halvings=0)
    with pytest.raises(StepFailure) as info:
        run(build_grain_model(prob), prob.grid, prob.initial_state(), prob.T, params)
    assert info.value.trajectory is not None
    assert info.value.trajectory.steps == 0


@pytest.fixture(scope="module")
def heat_traj():
    g = Grid.unit(16)
    u0 = np.cos(np.pi * g.coords)
    return run(heat_spec(g), g, u0, 0.1, StepParams(tau=0.01))


def test_interpolants_at_nodes(heat_traj):
    tr = heat_traj
    for i in range(1, tr.steps + 1):
        t = tr.times[i]
        assert np.array_equal(interpolant(tr, t, "linear"), tr.states[i])
        assert np.array_equal(interpolant(tr, t, "backward"), tr.states[i])
        assert np.array_equal(interpolant(tr, t, "forward"), tr.states[i - 1])
    for kind in ("linear", "backward", "forward"):
        assert np.array_equal(interpolant(tr, 0.0, kind), tr.states[0])


@given(i=st.integers(1, 10), s=st.floats(0.01, 0.99))
def test_interpolant_affine_between_nodes(heat_traj, i, s):
    tr = heat_traj
    t = tr.times[i - 1] + s * (tr.times[i] - tr.times[i - 1])
    lin = interpolant(tr, t)
    np.testing.assert_allclose(lin, (1 - s) * tr.states[i - 1] + s * tr.states[i], atol=1e-12)
    assert np.array_equal(interpolant(tr, t, "backward"), tr.states[i])
    assert np.array_equal(interpolant(tr, t, "forward"), tr.states[i - 1])
    # |backward - linear|_H <= sqrt(tau) * |d_t u|_{L^2} over the step
    g, tau = tr.grid, tr.times[i] - tr.times[i - 1]
    dtu = g.norm_h(tr.states[i] - tr.states[i - 1]) / tau
    gap = g.norm_h(interpolant(tr, t, "backward") - lin)
    assert gap <= np.sqrt(tau) * dtu * np.sqrt(tau) + 1e-14


def test_interpolant_errors(heat_traj):
    with pytest.raises(ValueError):
        interpolant(heat_traj, -0.1)
    with pytest.raises(ValueError):
        interpolant(heat_traj, 0.2)
    with pytest.raises(ValueError):
        interpolant(heat_traj, 0.05, "central")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gradflow import models as md
from gradflow.grid import Grid

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def heat_spec(grid: Grid, kappa: float = 1.0, m: int = 1) -> md.ModelSpec:
    """alpha = 0, A = I, G = 0: the scheme reduces to backward Euler for the heat system."""
    n = grid.dim
    return md.ModelSpec(m=m, n=n, kappa=kappa, mobility=md.ConstantMobility.identity(m),
                        weight=md.ConstantWeight(m, 0.0), operator=md.IdentityOperator(m, n),
                        anisotropy=md.FrobeniusFamily(m, n))


def coupled_spec(grid: Grid, seed: int = 0) -> md.ModelSpec:
    """Every nonlinearity switched on: rotation B, saturating alpha and mobility, fidelity."""
    rng = np.random.default_rng(seed)
    return md.ModelSpec(
        m=2, n=2, kappa=0.3,
        mobility=md.ScalarMobility(2, 1.0, 0.5, 0),
        weight=md.SaturatingWeight(2, 0.2, 1.0, 0),
        operator=md.RotationOperator(2),
        anisotropy=md.FrobeniusFamily(2, 2, weights=(1.0, 0.5)),
        potential=md.HuberFidelity(grid, rng.standard_normal((grid.num_nodes, 2)), (1.0, 0.3)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest

from osmfg.dynamics import TimeGrid, simulate_paths
from osmfg.measures import SpaceGrid
from osmfg.model import InitialLaw, ModelSpec


def constant_model(f=0.0, g=0.0, *, drift=0.0, vol=0.0, law=None, horizon=1.0, name="const"):
    """Model with state-only rewards; ``f`` and ``g`` may be numbers or callables of x."""

    def as_fn(v):
        if callable(v):
            return v
        return lambda x: np.full(np.shape(x), float(v))

    f_fn, g_fn = as_fn(f), as_fn(g)
    return ModelSpec(
        name=name, horizon=horizon,
        drift=lambda t, x: np.full(np.shape(x), float(drift)),
        vol=lambda t, x: np.full(np.shape(x), float(vol)),
        running_reward=lambda t, x, m: f_fn(np.asarray(x, dtype=float)),
        terminal_reward=lambda t, x, mu: g_fn(np.asarray(x, dtype=float)),
        terminal_generator=lambda t, x, mu: np.zeros(np.shape(x)),
        initial_law=law or InitialLaw.normal(0.0, 1.0),
    )


@pytest.fixture
def small_setup():
    """Ten-step ensemble of a diffusing constant model with a fixed space grid."""
    model = constant_model(f=lambda x: x, g=lambda x: 0.5 * x, vol=1.0)
    grid = TimeGrid(1.0, 10)
    ens = simulate_paths(model, grid, 2000, seed=7)
    space = SpaceGrid(-4.0, 4.0, 40)
    return model, ens, space


# one line per acceptance criterion, filled by test_acceptance and echoed at the end
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])

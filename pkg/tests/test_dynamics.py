import numpy as np
import pytest

from osmfg.dynamics import (SimulationError, TimeGrid, auto_space, check_control,
                            immediate_stop, moment_check, never_stop, read_noise_panel,
                            simulate_paths, write_noise_panel)
from osmfg.model import InitialLaw, make_gbm_model

from conftest import constant_model


def test_time_grid():
    g = TimeGrid(0.7, 7)
    assert g.nodes[-1] == 0.7 and g.nodes.size == 8
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1)


def test_constant_paths():
    model = constant_model(law=InitialLaw.point(1.0))
    ens = simulate_paths(model, TimeGrid(1.0, 5), 10, seed=0)
    assert np.all(ens.X == 1.0)
    assert np.array_equal(ens.xi, never_stop(10, 5))


def test_euler_step():
    model = constant_model(drift=1.0, law=InitialLaw.point(0.0))
    ens = simulate_paths(model, TimeGrid(1.0, 10), 3, seed=0)
    assert ens.X[:, 1] == pytest.approx(0.1)


def test_brownian_variance():
    model = constant_model(vol=1.0, law=InitialLaw.point(0.0))
    ens = simulate_paths(model, TimeGrid(1.0, 10), 100000, seed=11)
    x = ens.X[:, -1]
    var = x.var(ddof=1)
    # standard error of the sample variance of a Gaussian
    se = np.sqrt(2.0 / (x.size - 1))
    assert abs(var - 1.0) <= 3 * se


def test_reproducible_and_seed_sensitive():
    model = constant_model(vol=1.0)
    a = simulate_paths(model, TimeGrid(1.0, 10), 50, seed=4)
    b = simulate_paths(model, TimeGrid(1.0, 10), 50, seed=4)
    c = simulate_paths(model, TimeGrid(1.0, 10), 50, seed=5)
    assert np.array_equal(a.X, b.X) and not np.array_equal(a.X, c.X)


def test_nonfinite_coefficient_aborts():
    model = constant_model(law=InitialLaw.point(0.0))
    bad = type(model)(**{**model.__dict__, "drift": lambda t, x: np.full(np.shape(x), np.nan)})
    with pytest.raises(SimulationError, match="t=0.0"):
        simulate_paths(bad, TimeGrid(1.0, 4), 3, seed=0)


def test_moment_check_examples():
    model = constant_model(law=InitialLaw.point(1.0))
    assert moment_check(simulate_paths(model, TimeGrid(1.0, 4), 5, 0), 3) == 1.0
    model = constant_model(law=InitialLaw.atoms([-1.0, 1.0], [0.5, 0.5]))
    assert moment_check(simulate_paths(model, TimeGrid(1.0, 4), 100, 0), 2) == 1.0
    gbm = make_gbm_model()
    assert np.isfinite(moment_check(simulate_paths(gbm, TimeGrid(1.0, 20), 1000, 0), 1))


def test_gbm_weak_order_one():
    # E[Z_T] = z0 exp(b0 T) and Euler gives z0 (1 + b0 dt)^M exactly in mean
    b0 = 0.8
    model = make_gbm_model(b0, 0.2, 1.0)
    exact = np.exp(b0)
    errs = []
    for steps in (5, 10, 20):
        ens = simulate_paths(model, TimeGrid(1.0, steps), 200000, seed=2)
        errs.append(abs(ens.X[:, -1].mean() - exact))
        assert (1 + b0 / steps) ** steps == pytest.approx(exact, abs=b0 ** 2 * np.e / steps)
    # halving dt roughly halves the bias (Monte Carlo noise is ~1e-3)
    assert errs[1] < 0.7 * errs[0] and errs[2] < 0.7 * errs[1]


def test_check_control():
    check_control(immediate_stop(3, 4))
    bad = never_stop(2, 3)
    bad[0, 1] = 0.5
    with pytest.raises(ValueError):
        check_control(bad)
    bad = never_stop(2, 3)
    bad[:, -1] = 0.9
    with pytest.raises(ValueError):
        check_control(bad)


def test_noise_panel_round_trip(tmp_path):
    model = constant_model(vol=1.0)
    ens = simulate_paths(model, TimeGrid(1.0, 6), 9, seed=1)
    write_noise_panel(ens, tmp_path / "dw.bin")
    raw = (tmp_path / "dw.bin").read_bytes()
    assert len(raw) == 9 * 6 * 8
    dw = read_noise_panel(tmp_path / "dw.bin", 9, 6)
    again = simulate_paths(model, ens.grid, 9, seed=99, noise=dw, x0=ens.X[:, 0])
    assert np.array_equal(again.X, ens.X)


def test_auto_space_respects_lower_bound():
    gbm = make_gbm_model(0.0, 0.5, 1.0)
    ens = simulate_paths(gbm, TimeGrid(1.0, 10), 2000, 0)
    space = auto_space(gbm, ens, 50)
    assert space.lo >= 0.0 and space.hi > 1.0

import itertools

import numpy as np
import pytest

from osmfg.bestresponse import (BestResponseError, brute_force_oracle, pointwise_maximizer,
                                pointwise_reflection_check, solve_best_response,
                                transition_kernel)
from osmfg.consistency import gamma
from osmfg.dynamics import TimeGrid, simulate_paths
from osmfg.fictplay import prepare
from osmfg.measures import SpaceGrid
from osmfg.model import InitialLaw, build_model
from osmfg.payoff import SolverConfig
from osmfg.policy import policy_order, policy_paths, random_policy
from osmfg.suites import oracle_instance

from conftest import constant_model


def frozen(model, steps=4, bins=5, n=50, lo=-2.0, hi=2.0):
    ens = simulate_paths(model, TimeGrid(model.horizon, steps), n, 0)
    space = SpaceGrid(lo, hi, bins)
    m, mu = gamma(ens, space)
    return ens, space, m, mu


def test_kernel_is_stochastic():
    model = constant_model(drift=0.3, vol=0.8)
    K = transition_kernel(model, 0.0, 0.1, SpaceGrid(-2, 2, 17))
    assert np.allclose(K.sum(axis=1), 1.0) and np.all(K >= 0)
    K0 = transition_kernel(constant_model(), 0.0, 0.1, SpaceGrid(-2, 2, 17))
    assert np.array_equal(K0, np.eye(17))


def test_constant_terminal_reward_stops_at_once():
    model = constant_model(f=0.0, g=1.0, vol=1.0)
    _, _, m, mu = frozen(model)
    pol, table = solve_best_response(model, m, mu, SolverConfig(lam=0.0, steps=4, bins=5,
                                                                levels=5))
    assert np.all(pol.table[0, :, 0] == 4)
    assert np.allclose(table.V[0, :, 0], 1.0)


def test_running_reward_only_never_stops():
    model = constant_model(f=1.0, g=0.0, vol=1.0, horizon=2.0)
    _, _, m, mu = frozen(model)
    pol, table = solve_best_response(model, m, mu, SolverConfig(lam=0.0, steps=4, bins=5,
                                                                levels=5))
    assert np.all(pol.table[:-1, :, 0] == 0)
    assert np.allclose(table.V[0, :, 0], 2.0)


def test_terminal_row_and_monotone_value(small_setup):
    model, ens, space = small_setup
    m, mu = gamma(ens, space)
    cfg = SolverConfig(lam=0.5, steps=10, bins=40, levels=9)
    _, table = solve_best_response(model, m, mu, cfg)
    q = np.linspace(0, 1, 9)
    g_T = 0.5 * space.centers
    assert np.allclose(table.V[-1], g_T[:, None] * (1 - q[None, :]))
    g_max = np.abs(0.5 * space.centers).max()
    for k in range(8):
        for kk in range(k + 1, 9):
            assert np.all(table.V[:, :, k] - table.V[:, :, kk] >= -g_max * (q[kk] - q[k]) - 1e-12)


@pytest.mark.parametrize("name", ["free", "monotone", "bank_run", "gbm"])
def test_oracle_equivalence(name):
    model = build_model(name)
    rng = np.random.default_rng(42)
    for _ in range(5):
        cfg, m, mu = oracle_instance(model, rng)
        pol, table = solve_best_response(model, m, mu, cfg)
        opol, vals = brute_force_oracle(model, m, mu, cfg)
        assert np.max(np.abs(table.V[0, :, 0] - vals)) <= 1e-12
        if cfg.lam > 0:
            assert np.array_equal(pol.table, opol.table)


def test_oracle_budget():
    model = constant_model(vol=1.0)
    _, _, m, mu = frozen(model, steps=6)
    with pytest.raises(BestResponseError):
        brute_force_oracle(model, m, mu, SolverConfig(steps=6, bins=5, levels=33), budget=1e6)


def test_oracle_deterministic_kernel_is_path_scan():
    # sd = 0: each bin has one successor, so the optimum is a scan over level sequences
    model = constant_model(f=lambda x: x, g=lambda x: 0.3 - x ** 2, drift=0.5,
                           law=InitialLaw.point(0.0))
    _, space, m, mu = frozen(model, steps=3, bins=6)
    cfg = SolverConfig(lam=0.4, steps=3, bins=6, levels=4)
    _, vals = brute_force_oracle(model, m, mu, cfg)
    q = np.linspace(0, 1, 4)
    dt = 1 / 3
    c = space.centers
    for j in range(6):
        path = [j]
        for i in range(3):
            x = c[path[-1]] + 0.5 * dt
            path.append(int(space.locate(x)))
        best = -np.inf
        for seq in itertools.product(range(4), repeat=3):
            if any(b < a for a, b in zip(seq, seq[1:])):
                continue
            lv = [q[k] for k in seq] + [1.0]
            prev, tot = 0.0, 0.0
            for i in range(4):
                x = c[path[i]]
                tot += (0.3 - x ** 2) * (lv[i] - prev)
                if i < 3:
                    tot += (x * (1 - lv[i]) - 0.4 * (lv[i] * np.log(lv[i]) if lv[i] else 0)) * dt
                prev = lv[i]
            best = max(best, tot)
        assert vals[j] == pytest.approx(best, abs=1e-12)


def test_value_nondecreasing_in_lambda(small_setup):
    model, ens, space = small_setup
    m, mu = gamma(ens, space)
    prev = -np.inf
    for lam in (0.0, 0.1, 0.5, 1.0):
        _, table = solve_best_response(model, m, mu, SolverConfig(lam=lam, steps=10, bins=40,
                                                                  levels=9))
        v = table.V[0, :, 0]
        assert np.all(v >= prev - 1e-12)
        prev = v


def test_policy_unique_under_tie_tolerance(small_setup):
    model, ens, space = small_setup
    m, mu = gamma(ens, space)
    cfg = SolverConfig(lam=0.5, steps=10, bins=40, levels=9)
    a, _ = solve_best_response(model, m, mu, cfg, tie_tol=0.0)
    b, _ = solve_best_response(model, m, mu, cfg, tie_tol=1e-10)
    assert np.array_equal(a.table, b.table)


def test_lambda_zero_ties_go_early():
    model = constant_model(f=0.0, g=0.0, vol=1.0)
    _, _, m, mu = frozen(model)
    pol, _ = solve_best_response(model, m, mu, SolverConfig(lam=0.0, steps=4, bins=5, levels=5))
    assert np.all(pol.table[0, :, 0] == 4)


def test_pointwise_maximizer_examples():
    assert pointwise_maximizer(0.0, 1.0) == pytest.approx(np.exp(-1))
    assert pointwise_maximizer(-2.0, 1.0) == 1.0
    assert pointwise_maximizer(50.0, 0.01) < 1e-100
    with pytest.raises(ValueError):
        pointwise_maximizer(0.0, 0.0)


def test_reflection_report():
    model = build_model("bank_run")
    cfg = SolverConfig(lam=0.5, particles=2000, bins=80)
    ens, space = prepare(model, cfg)
    m, mu = gamma(ens, space)
    rep = pointwise_reflection_check(model, m, mu, cfg, ens)
    assert 0.0 <= rep.agreement <= 1.0 and rep.pairs == ens.n * cfg.steps
    with pytest.raises(BestResponseError):
        pointwise_reflection_check(model, m, mu, SolverConfig(lam=0.0), ens)


def test_best_reply_anti_monotone_on_bank_run():
    model = build_model("bank_run")
    cfg = SolverConfig(particles=3000, bins=80)
    ens, space = prepare(model, cfg)
    rng = np.random.default_rng(5)
    for _ in range(3):
        a = policy_paths(ens.X, random_policy(ens.grid, space, cfg.levels, rng))
        b = policy_paths(ens.X, random_policy(ens.grid, space, cfg.levels, rng))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        br_lo = policy_paths(ens.X, solve_best_response(model, *gamma(ens, space, lo), cfg)[0])
        br_hi = policy_paths(ens.X, solve_best_response(model, *gamma(ens, space, hi), cfg)[0])
        order = policy_order(br_lo, br_hi)
        assert order.relation == "later" or order.tie


def test_value_table_csv(tmp_path, small_setup):
    model, ens, space = small_setup
    m, mu = gamma(ens, space)
    _, table = solve_best_response(model, m, mu, SolverConfig(steps=10, bins=40, levels=3))
    table.write_csv(tmp_path / "v.csv")
    rows = np.loadtxt(tmp_path / "v.csv", delimiter=",", skiprows=1)
    assert rows.shape == (11 * 40 * 3, 5)

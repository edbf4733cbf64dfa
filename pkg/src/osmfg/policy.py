"""Feedback policies on the (t, x, q) grid and the randomized-stopping bridge."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import ParticleEnsemble, TimeGrid, check_control
from .measures import SpaceGrid

ORDER_TOL = 1e-12


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class FeedbackPolicy:
    """``table[i, j, k]`` is the index of the level chosen at ``(t_i, x_j)`` from level ``k``.

    Levels are ``linspace(0, 1, Q)``. The last time row is forced to the top
    level, which books the terminal jump to 1.
    """

    grid: TimeGrid
    space: SpaceGrid
    table: np.ndarray

    def __post_init__(self):
        tab = np.asarray(self.table)
        if tab.ndim != 3 or tab.shape[:2] != (self.grid.steps + 1, self.space.bins):
            raise PolicyError(f"policy table shape {tab.shape} does not match the grids")
        if tab.shape[2] < 2:
            raise PolicyError("need at least two q-levels")
        tab = tab.astype(np.intp)
        q = tab.shape[2]
        if np.any(tab < np.arange(q)) or np.any(tab > q - 1):
            i, j, k = np.argwhere((tab < np.arange(q)) | (tab > q - 1))[0]
            raise PolicyError(f"policy lowers the control at t-index {i}, bin {j}, level {k}")
        if np.any(tab[-1] != q - 1):
            raise PolicyError("policy must jump to 1 at the horizon")
        object.__setattr__(self, "table", tab)

    @property
    def q_levels(self) -> int:
        return self.table.shape[2]

    @property
    def levels(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.q_levels)

    def is_monotone_in_q(self) -> bool:
        return bool(np.all(np.diff(self.table, axis=2) >= 0))

    def same_grids(self, other: "FeedbackPolicy") -> bool:
        return self.grid == other.grid and self.space == other.space


def immediate_policy(grid: TimeGrid, space: SpaceGrid, q: int) -> FeedbackPolicy:
    return FeedbackPolicy(grid, space, np.full((grid.steps + 1, space.bins, q), q - 1))


def never_stop_policy(grid: TimeGrid, space: SpaceGrid, q: int) -> FeedbackPolicy:
    tab = np.broadcast_to(np.arange(q), (grid.steps + 1, space.bins, q)).copy()
    tab[-1] = q - 1
    return FeedbackPolicy(grid, space, tab)


def random_policy(grid: TimeGrid, space: SpaceGrid, q: int, rng: np.random.Generator,
                  floor: np.ndarray | None = None) -> FeedbackPolicy:
    """``q' = max(q, r(t, x))`` with a random target level ``r``; nondecreasing in ``q``.

    A ``floor`` array of target levels can be passed to build ordered pairs.
    """
    if floor is None:
        floor = rng.integers(0, q, size=(grid.steps + 1, space.bins))
    tab = np.maximum(np.arange(q)[None, None, :], np.asarray(floor)[:, :, None])
    tab[-1] = q - 1
    return FeedbackPolicy(grid, space, tab)


def apply_policy(ens: ParticleEnsemble, pol: FeedbackPolicy) -> ParticleEnsemble:
    """Run the policy along every path with nearest-bin state lookup."""
    if ens.grid != pol.grid:
        raise PolicyError("ensemble and policy use different time grids")
    return ens.with_control(policy_paths(ens.X, pol))


def policy_paths(X: np.ndarray, pol: FeedbackPolicy) -> np.ndarray:
    tab = pol.table
    if np.any(tab < np.arange(pol.q_levels)):
        raise PolicyError("policy violates q' >= q")
    bins = pol.space.locate(X)
    n, nodes = X.shape
    k = np.zeros(n, dtype=np.intp)
    idx = np.empty((n, nodes), dtype=np.intp)
    for i in range(nodes):
        k = tab[i, bins[:, i], k]
        idx[:, i] = k
    return pol.levels[idx]


@dataclass(frozen=True)
class RandomizedStops:
    """Per-particle uniform draw ``U``, stopping node ``tau_index`` and stopped state."""

    U: np.ndarray
    tau_index: np.ndarray
    tau: np.ndarray
    x_stop: np.ndarray


def draw_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.random(n)
    # resample exact zeros so log(U) stays finite
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.random(int(zero.sum()))
    return u


def randomize(ens: ParticleEnsemble, seed: int | None = None,
              xi: np.ndarray | None = None) -> RandomizedStops:
    """``tau = min{t_i : xi_{t_i} > U}`` with ``U`` independent of the noise panel."""
    xi = ens.xi if xi is None else xi
    u = draw_uniform(ens.u_rng(seed), ens.n)
    return stops_from_uniform(ens, xi, u)


def stops_from_uniform(ens: ParticleEnsemble, xi: np.ndarray, u: np.ndarray) -> RandomizedStops:
    above = xi > u[:, None]
    above[:, -1] = True  # inf of the empty set is T
    idx = np.argmax(above, axis=1)
    rows = np.arange(ens.n)
    return RandomizedStops(u, idx, ens.grid.nodes[idx], ens.X[rows, idx])


def generalized_inverse(xi_path: np.ndarray, u, times: np.ndarray | None = None):
    """``theta(u) = min{t_i : xi_{t_i} >= u}`` per path.

    ``xi_path`` is one path (1-d) or a stack of paths (2-d, one row per
    particle, ``u`` scalar or one level per row). Returns node indices when
    ``times`` is omitted, times otherwise.
    """
    xi_path = np.asarray(xi_path, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("level u must lie in [0, 1]")
    single = xi_path.ndim == 1
    paths = np.atleast_2d(xi_path)
    uu = np.broadcast_to(u, (paths.shape[0],)) if u.ndim <= 1 else u
    hit = paths >= uu[:, None]
    hit[:, -1] = True
    idx = np.argmax(hit, axis=1)
    out = idx if times is None else np.asarray(times)[idx]
    return out[0] if single else out


def reinvert(xi_path: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Recover ``xi_{t_i} = sup{u : theta(u) <= t_i}`` with ``u`` restricted to ``levels``."""
    levels = np.unique(np.concatenate([[0.0], np.asarray(levels, dtype=float)]))
    theta = np.array([generalized_inverse(xi_path, u) for u in levels])
    nodes = np.arange(np.asarray(xi_path).size)
    return np.array([levels[theta <= i].max() for i in nodes])


def lattice_meet_join(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paths live on different grids")
    meet, join = np.minimum(a, b), np.maximum(a, b)
    check_control(np.atleast_2d(meet))
    check_control(np.atleast_2d(join))
    return meet, join


@dataclass(frozen=True)
class PolicyOrder:
    relation: str  # earlier | later | incomparable
    tie: bool = False


def policy_order(a: np.ndarray, b: np.ndarray, tol: float = ORDER_TOL) -> PolicyOrder:
    """``earlier`` iff ``a >= b`` everywhere (``a`` stops no later than ``b``)."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    ge = bool(np.all(diff >= -tol))
    le = bool(np.all(diff <= tol))
    if ge:
        return PolicyOrder("earlier", tie=le)
    if le:
        return PolicyOrder("later")
    return PolicyOrder("incomparable")


def write_policy_csv(pol: FeedbackPolicy, path) -> None:
    t = pol.grid.nodes
    x = pol.space.centers
    lv = pol.levels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "q", "q_next"])
        for i in range(t.size):
            for j in range(x.size):
                for k in range(lv.size):
                    w.writerow([repr(float(t[i])), repr(float(x[j])), repr(float(lv[k])),
                                repr(float(lv[pol.table[i, j, k]]))])


def read_policy_csv(path) -> FeedbackPolicy:
    rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 4 or not np.all(np.isfinite(rows)):
        raise PolicyError("policy CSV needs finite columns t, x, q, q_next")
    t = np.unique(rows[:, 0])
    x = np.unique(rows[:, 1])
    lv = np.unique(rows[:, 2])
    if rows.shape[0] != t.size * x.size * lv.size:
        raise PolicyError("policy CSV does not cover the full grid")
    if not np.allclose(lv, np.linspace(0, 1, lv.size), atol=1e-12):
        raise PolicyError("q-levels must be uniform on [0, 1]")
    grid = TimeGrid(float(t[-1]), t.size - 1)
    if not np.allclose(t, grid.nodes, atol=1e-12):
        raise PolicyError("policy times are not a uniform grid from 0")
    space = SpaceGrid.from_centers(x)
    q_next = rows[:, 3]
    k_next = np.rint(q_next * (lv.size - 1)).astype(np.intp)
    if np.any(np.abs(k_next / (lv.size - 1) - q_next) > 1e-9):
        raise PolicyError("q_next values must be grid levels")
    tab = np.empty((t.size, x.size, lv.size), dtype=np.intp)
    tab[np.searchsorted(t, rows[:, 0]), np.searchsorted(x, rows[:, 1]),
        np.searchsorted(lv, rows[:, 2])] = k_next
    return FeedbackPolicy(grid, space, tab)

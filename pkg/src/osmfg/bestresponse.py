"""Best response to a frozen population by backward induction on the (t, x, q) grid.

The post-decision level ``q'`` is chosen from the q-grid at every node. The
one-step transition of ``X`` is the Euler-Maruyama Gaussian projected onto
the space bins, so the DP and the particle layer share one discretization.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .dynamics import TimeGrid
from .measures import JointMeasure, MeasureFlow, SpaceGrid
from .payoff import SolverConfig
from .policy import FeedbackPolicy


class BestResponseError(RuntimeError):
    pass


@dataclass(frozen=True)
class ValueTable:
    """``V[i, j, k]``: value at ``(t_i, x_j)`` holding level ``q_k``, with the argmax policy."""

    V: np.ndarray
    policy: FeedbackPolicy

    @property
    def grid(self) -> TimeGrid:
        return self.policy.grid

    @property
    def space(self) -> SpaceGrid:
        return self.policy.space

    def initial_value(self, weights: np.ndarray) -> float:
        """Expected ``V(0, x_0, 0)`` under bin weights of ``x_0``."""
        return float(np.dot(weights, self.V[0, :, 0]))

    def write_csv(self, path) -> None:
        t = self.grid.nodes
        x = self.space.centers
        lv = self.policy.levels
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "q", "V", "q_next"])
            for i in range(t.size):
                for j in range(x.size):
                    for k in range(lv.size):
                        w.writerow([repr(float(t[i])), repr(float(x[j])), repr(float(lv[k])),
                                    repr(float(self.V[i, j, k])),
                                    repr(float(lv[self.policy.table[i, j, k]]))])


def transition_kernel(model, t: float, dt: float, space: SpaceGrid) -> np.ndarray:
    """Row-stochastic ``K[j, j']`` = P(Euler step from center ``j`` lands in bin ``j'``).

    The outer bins collect the tails; a zero volatility gives the bin of the mean.
    """
    c = space.centers
    mean = c + model.drift(t, c) * dt
    sd = np.broadcast_to(np.abs(model.vol(t, c)) * math.sqrt(dt), c.shape)
    inner = space.edges[1:-1]
    cdf = np.empty((c.size, inner.size))
    pos = sd > 0
    if np.any(pos):
        cdf[pos] = ndtr((inner[None, :] - mean[pos, None]) / sd[pos, None])
    if np.any(~pos):
        cdf[~pos] = (mean[~pos, None] < inner[None, :]).astype(float)
    cdf = np.concatenate([np.zeros((c.size, 1)), cdf, np.ones((c.size, 1))], axis=1)
    K = np.diff(cdf, axis=1)
    K = np.clip(K, 0.0, None)
    return K / K.sum(axis=1, keepdims=True)


def grid_rewards(model, grid: TimeGrid, m: MeasureFlow, mu: JointMeasure):
    """``f`` on ``(t_i, centers, m_i)`` for ``i < M`` and ``g`` on ``(t_i, centers, mu)``."""
    c = m.space.centers
    t = grid.nodes
    f = np.stack([np.broadcast_to(model.running_reward(t[i], c, m.slice(i)), c.shape)
                  for i in range(grid.steps)])
    g = np.stack([np.broadcast_to(model.terminal_reward(t[i], c, mu), c.shape)
                  for i in range(grid.steps + 1)])
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise BestResponseError("non-finite reward on the grid")
    return f.astype(float), g.astype(float)


def _check_inputs(m: MeasureFlow, cfg: SolverConfig) -> TimeGrid:
    if cfg.levels < 2:
        raise BestResponseError("empty q-grid")
    steps = m.times.size - 1
    grid = TimeGrid(float(m.times[-1]), steps)
    if not np.allclose(grid.nodes, m.times, atol=1e-12):
        raise BestResponseError("flow time grid is not uniform")
    return grid


def solve_best_response(model, m: MeasureFlow, mu: JointMeasure, cfg: SolverConfig,
                        tie_tol: float | None = None):
    """Backward induction; returns ``(FeedbackPolicy, ValueTable)``.

    Among near-maximizers (within ``tie_tol``) the largest level wins, i.e.
    the earliest stop.
    """
    grid = _check_inputs(m, cfg)
    tol = cfg.tie_tol if tie_tol is None else tie_tol
    space = m.space
    Q = cfg.levels
    q = np.linspace(0.0, 1.0, Q)
    lam = cfg.lam
    dt = grid.dt
    ent = lam * model.entropy.value(q) if lam else np.zeros(Q)
    f, g = grid_rewards(model, grid, m, mu)
    J = space.bins

    V = np.empty((grid.steps + 1, J, Q))
    table = np.empty((grid.steps + 1, J, Q), dtype=np.intp)
    V[-1] = g[-1][:, None] * (1.0 - q[None, :])
    table[-1] = Q - 1
    t = grid.nodes
    for i in range(grid.steps - 1, -1, -1):
        K = transition_kernel(model, t[i], dt, space)
        A = (g[i][:, None] * q[None, :]
             + (f[i][:, None] * (1.0 - q[None, :]) + ent[None, :]) * dt
             + K @ V[i + 1])
        best = A[:, Q - 1].copy()
        arg = np.full(J, Q - 1, dtype=np.intp)
        tab_i = table[i]
        val_i = V[i]
        tab_i[:, Q - 1] = arg
        val_i[:, Q - 1] = best
        for k in range(Q - 2, -1, -1):
            better = A[:, k] > best + tol
            best = np.where(better, A[:, k], best)
            arg = np.where(better, k, arg)
            tab_i[:, k] = arg
            val_i[:, k] = best
        val_i -= g[i][:, None] * q[None, :]
        if not np.all(np.isfinite(val_i)):
            raise BestResponseError(f"non-finite value at time index {i}")
    pol = FeedbackPolicy(grid, space, table)
    return pol, ValueTable(V, pol)


# --------------------------------------------------------------------------
# exhaustive oracle


def _oracle_kernel(model, t, dt, space):
    # scalar re-derivation of the projected Gaussian step
    edges = list(space.edges)
    centers = list(space.centers)
    J = len(centers)
    rows = []
    for c in centers:
        mean = c + float(model.drift(t, np.array([c]))[0]) * dt
        sd = abs(float(model.vol(t, np.array([c]))[0])) * math.sqrt(dt)

        def cdf(e):
            if e == -math.inf:
                return 0.0
            if e == math.inf:
                return 1.0
            if sd == 0:
                return 1.0 if mean < e else 0.0
            return 0.5 * math.erfc(-(e - mean) / (sd * math.sqrt(2.0)))

        bounds = [-math.inf] + edges[1:-1] + [math.inf]
        row = [max(cdf(bounds[k + 1]) - cdf(bounds[k]), 0.0) for k in range(J)]
        s = sum(row)
        rows.append([r / s for r in row])
    return rows


def brute_force_oracle(model, m: MeasureFlow, mu: JointMeasure, cfg: SolverConfig,
                       budget: float = 1e6):
    """Exhaustive search over monotone level sequences along the scenario tree.

    Every branch of the tree (one per reachable bin sequence) carries its own
    sequence of levels, so the optimum is taken over all adapted choices
    without reusing any stored value. Returns ``(FeedbackPolicy, values)``
    with ``values[j] = V(0, x_j, 0)``.
    """
    grid = _check_inputs(m, cfg)
    Q = cfg.levels
    M = grid.steps
    if M * Q ** M > budget:
        raise BestResponseError(f"enumeration budget exceeded: {M} * {Q}^{M} > {budget:g}")
    space = m.space
    J = space.bins
    q = [k / (Q - 1) for k in range(Q)]
    lam = cfg.lam
    dt = grid.dt
    tol = cfg.tie_tol
    ent = [lam * float(model.entropy.value(z)) if lam else 0.0 for z in q]
    f, g = grid_rewards(model, grid, m, mu)
    t = grid.nodes
    kernels = [_oracle_kernel(model, t[i], dt, space) for i in range(M)]
    table = np.empty((M + 1, J, Q), dtype=np.intp)
    table[-1] = Q - 1

    def value(i, j, k, record):
        # expected reward-to-go from (t_i, x_j) holding q_k, maximized by enumeration
        if i == M:
            return float(g[M][j]) * (1.0 - q[k])
        best, arg = None, None
        for kk in range(Q - 1, k - 1, -1):
            cont = 0.0
            for jj in range(J):
                p = kernels[i][j][jj]
                if p > 0.0:
                    cont += p * value(i + 1, jj, kk, False)
            a = (float(g[i][j]) * q[kk]
                 + (float(f[i][j]) * (1.0 - q[kk]) + ent[kk]) * dt + cont)
            if best is None or a > best + tol:
                best, arg = a, kk
        if record:
            table[i, j, k] = arg
        return best - float(g[i][j]) * q[k]

    values = np.empty(J)
    for i in range(M):
        for j in range(J):
            for k in range(Q):
                v = value(i, j, k, True)
                if i == 0 and k == 0:
                    values[j] = v
    return FeedbackPolicy(grid, space, table), values


# --------------------------------------------------------------------------
# reflection structure


def pointwise_maximizer(f_hat, lam: float) -> np.ndarray:
    """Unconstrained maximizer of ``-f_hat z - lam z log z`` over ``[0, 1]``."""
    if lam <= 0:
        raise ValueError("pointwise maximizer needs a positive temperature")
    with np.errstate(over="ignore"):
        return np.clip(np.exp(-1.0 - np.asarray(f_hat, dtype=float) / lam), 0.0, 1.0)


@dataclass(frozen=True)
class ReflectionReport:
    agreement: float
    max_gap: float
    pairs: int


def pointwise_reflection_check(model, m: MeasureFlow, mu: JointMeasure, cfg: SolverConfig,
                               ens, pol: FeedbackPolicy | None = None) -> ReflectionReport:
    """Compare the DP control with the running maximum of the pointwise maximizer.

    Returns the fraction of (particle, node < M) pairs where the two agree
    within one q-level.
    """
    if model.terminal_generator is None:
        raise BestResponseError("reflection check needs the terminal generator")
    if cfg.lam <= 0:
        raise BestResponseError("reflection check needs a positive temperature")
    from .policy import policy_paths

    if pol is None:
        pol, _ = solve_best_response(model, m, mu, cfg)
    xi = policy_paths(ens.X, pol)[:, :-1]
    t = ens.grid.nodes
    zstar = np.empty_like(xi)
    for i in range(ens.grid.steps):
        x = ens.X[:, i]
        f_hat = model.running_reward(t[i], x, m.slice(i)) + model.terminal_generator(t[i], x, mu)
        zstar[:, i] = pointwise_maximizer(f_hat, cfg.lam)
    reflected = np.maximum.accumulate(zstar, axis=1)
    gap = np.abs(xi - reflected)
    step = 1.0 / (cfg.levels - 1)
    return ReflectionReport(float(np.mean(gap <= step + 1e-12)), float(gap.max()), int(gap.size))

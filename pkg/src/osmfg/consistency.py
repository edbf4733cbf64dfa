"""Consistency map: the population measures generated by a control."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bestresponse import solve_best_response
from .dynamics import ParticleEnsemble
from .measures import (CemeteryConfig, JointMeasure, MeasureFlow, SpaceGrid, flow_distance,
                       pth_moment, wasserstein1)
from .payoff import RewardFields, SolverConfig
from .policy import FeedbackPolicy, apply_policy, policy_paths


_CELLS = 4_000_000


def binned_sum(index: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    """Weighted ``bincount`` with a two-level reduction.

    Entries are split into contiguous blocks, binned per block and the block
    partials summed pairwise, so the rounding of a bin grows with the block
    length rather than with the number of entries.
    """
    index = np.asarray(index).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    n = index.size
    blocks = int(np.clip(-(-n // 64), 1, max(1, _CELLS // size)))
    block = np.arange(n) * blocks // max(n, 1)
    out = np.bincount(block * size + index, weights=weights, minlength=blocks * size)
    return np.ascontiguousarray(out.reshape(blocks, size).T).sum(axis=1)


def gamma(ens: ParticleEnsemble, space: SpaceGrid, xi: np.ndarray | None = None):
    """``m_t(bin) = E[1_bin(X_t)(1 - xi_t)]`` and ``mu`` with atoms ``(t_i, X_i, dxi_i / N)``.

    Zero-weight atoms are kept so that measures of different controls on the
    same ensemble share one support.
    """
    xi = ens.xi if xi is None else np.asarray(xi, dtype=float)
    n, nodes = ens.X.shape
    bins = space.locate(ens.X)
    flat = (bins + space.bins * np.arange(nodes)[None, :]).ravel()
    mass = binned_sum(flat, 1.0 - xi, nodes * space.bins)
    flow = MeasureFlow(ens.grid.nodes, space, mass.reshape(nodes, space.bins) / n)
    dxi = np.diff(xi, axis=1, prepend=0.0)
    mu = JointMeasure(np.broadcast_to(ens.grid.nodes, (n, nodes)).ravel(), ens.X.ravel(),
                      dxi.ravel() / n)
    return flow, mu


def mass_defect(flow: MeasureFlow, mu: JointMeasure) -> float:
    """``max_i |m_{t_i}(R) + mu([0, t_i] x R) - 1|``."""
    # atoms between nodes count from the next node on
    node = np.searchsorted(flow.times, mu.times, side="left")
    inside = node < flow.times.size
    per_node = binned_sum(node[inside], mu.weights[inside], flow.times.size)
    stopped = np.cumsum(per_node)
    return float(np.max(np.abs(flow.total_mass() + stopped - 1.0)))


@dataclass(frozen=True)
class Residual:
    gap: float
    flow: float
    mu: float

    def as_tuple(self):
        return (self.gap, self.flow, self.mu)


def equilibrium_residual(model, pol: FeedbackPolicy, ens: ParticleEnsemble, cfg: SolverConfig,
                         cemetery: CemeteryConfig = CemeteryConfig()) -> Residual:
    """Optimality gap and measure distances between a control and its own best reply."""
    space = pol.space
    ens = apply_policy(ens, pol)
    m, mu = gamma(ens, space)
    br, _ = solve_best_response(model, m, mu, cfg)
    xi_br = policy_paths(ens.X, br)
    m_br, mu_br = gamma(ens, space, xi_br)
    fields = RewardFields(model, ens, m, mu)
    gap = float(np.mean(fields.singular_samples(xi_br, cfg.lam))
                - np.mean(fields.singular_samples(ens.xi, cfg.lam)))
    return Residual(gap, flow_distance(m, m_br, cemetery), wasserstein1(mu, mu_br))


def moment_bound_check(m: MeasureFlow, mu: JointMeasure, p: float,
                       ens: ParticleEnsemble) -> tuple[bool, dict]:
    """Check both moments against ``T^p + E[sup_t |X_t|^p]`` from the same ensemble."""
    bound = ens.grid.horizon ** p + float(np.mean(np.max(np.abs(ens.X) ** p, axis=1)))
    # bin centers can sit up to half a bin from the particles they represent
    slack = p * (np.abs(m.space.centers).max() + m.space.width) ** (p - 1) * m.space.width / 2
    m_mom = max(pth_moment(m.slice(i), p) for i in range(m.times.size))
    mu_mom = pth_moment(mu, p)
    ok = m_mom <= bound + slack and mu_mom <= bound + 1e-12
    return ok, {"bound": bound, "flow_moment": m_mom, "mu_moment": mu_mom, "slack": slack}

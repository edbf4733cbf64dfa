"""Monte Carlo evaluation of the entropy-regularized objective in its equivalent forms."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import ParticleEnsemble
from .measures import JointMeasure, MeasureFlow
from .policy import RandomizedStops


class PayoffError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.5
    steps: int = 50
    bins: int = 200
    levels: int = 33
    particles: int = 20000
    seed: int = 1
    fp_tol: float = 1e-2
    mc_tol: float = 2e-3
    n_max: int = 200
    tie_tol: float = 1e-12
    space_lo: float | None = None
    space_hi: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("temperature must be nonnegative")
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if min(self.fp_tol, self.mc_tol) <= 0 or self.tie_tol < 0:
            raise ValueError("tolerances must be positive")
        if self.levels < 2 or self.bins < 1 or self.steps < 2:
            raise ValueError("grids too small")
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def entropy_value(z, spec) -> np.ndarray:
    return spec.value(z)


class RewardFields:
    """Rewards along the ensemble paths for frozen ``(m, mu)``.

    ``F[:, i] = f(t_i, X_i, m_i)`` for ``i < M`` and ``G[:, i] = g(t_i, X_i, mu)``
    for ``i <= M``; ``LG`` holds the generator of ``g`` when the model has one.
    """

    def __init__(self, model, ens: ParticleEnsemble, m: MeasureFlow, mu: JointMeasure,
                 with_generator: bool = False):
        grid = ens.grid
        if m.times.size != grid.steps + 1 or not np.allclose(m.times, grid.nodes, atol=1e-12):
            raise PayoffError("flow and ensemble use different time grids")
        t = grid.nodes
        X = ens.X
        n, nodes = X.shape
        F = np.empty((n, nodes - 1))
        G = np.empty((n, nodes))
        for i in range(nodes):
            G[:, i] = model.terminal_reward(t[i], X[:, i], mu)
            if i < nodes - 1:
                F[:, i] = model.running_reward(t[i], X[:, i], m.slice(i))
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G))):
            raise PayoffError("non-finite reward along the paths")
        self.F = F
        self.G = G
        self.LG = None
        if with_generator:
            if model.terminal_generator is None:
                raise PayoffError("model has no terminal generator")
            self.LG = np.stack([model.terminal_generator(t[i], X[:, i], mu)
                                for i in range(nodes - 1)], axis=1)
        self.dt = grid.dt
        self.horizon = grid.horizon
        self.entropy = model.entropy

    def singular_samples(self, xi: np.ndarray, lam: float) -> np.ndarray:
        dxi = np.diff(xi, axis=1, prepend=0.0)
        run = self.F * (1.0 - xi[:, :-1])
        if lam:
            run = run + lam * self.entropy.value(np.clip(xi[:, :-1], 0.0, 1.0))
        return run.sum(axis=1) * self.dt + (self.G * dxi).sum(axis=1)

    def stopping_samples(self, stops: RandomizedStops, lam: float) -> np.ndarray:
        k = stops.tau_index
        alive = np.arange(self.F.shape[1])[None, :] < k[:, None]
        run = (self.F * alive).sum(axis=1)
        out = run * self.dt + self.G[np.arange(k.size), k]
        if lam:
            bonus = self.entropy.stopping_penalty(stops.U)
            out = out + lam * (bonus * k * self.dt + float(self.entropy.value(1.0)) * self.horizon)
        return out

    def ibp_samples(self, xi: np.ndarray, lam: float) -> np.ndarray:
        if self.LG is None:
            raise PayoffError("integration-by-parts form needs the terminal generator")
        f_hat = self.F + self.LG
        run = -f_hat * xi[:, :-1] + self.F
        if lam:
            run = run + lam * self.entropy.value(np.clip(xi[:, :-1], 0.0, 1.0))
        return run.sum(axis=1) * self.dt + self.G[:, -1]


def _mean(samples: np.ndarray) -> float:
    val = float(np.mean(samples))
    if not np.isfinite(val):
        raise PayoffError("payoff is not finite")
    return val


def eval_singular(model, ens: ParticleEnsemble, m: MeasureFlow, mu: JointMeasure,
                  cfg: SolverConfig, xi: np.ndarray | None = None) -> float:
    xi = ens.xi if xi is None else xi
    return _mean(RewardFields(model, ens, m, mu).singular_samples(xi, cfg.lam))


def eval_stopping(model, ens: ParticleEnsemble, stops: RandomizedStops, m: MeasureFlow,
                  mu: JointMeasure, cfg: SolverConfig) -> float:
    """Average of ``sum_{t_i < tau} [f + lam * h(U)] dt + g(X_tau)`` with ``h = -E'``.

    The constant ``lam * E(1) * T`` is added so that the value matches the
    singular form for any entropy; it vanishes for the default one.
    """
    return _mean(RewardFields(model, ens, m, mu).stopping_samples(stops, cfg.lam))


def eval_ibp(model, ens: ParticleEnsemble, m: MeasureFlow, mu: JointMeasure,
             cfg: SolverConfig, xi: np.ndarray | None = None) -> float:
    xi = ens.xi if xi is None else xi
    fields = RewardFields(model, ens, m, mu, with_generator=True)
    return _mean(fields.ibp_samples(xi, cfg.lam))


def paired_gap(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of ``a - b`` for per-particle samples."""
    d = np.asarray(a) - np.asarray(b)
    se = float(np.std(d, ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    return float(np.mean(d)), se

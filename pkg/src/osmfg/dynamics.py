"""Euler-Maruyama particle simulation on a uniform time grid."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .measures import SpaceGrid

# stream tags for SeedSequence spawning; fixed so runs are reproducible
_X0_STREAM = 0
_NOISE_STREAM = 1
_U_STREAM = 2


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("time grid needs at least two steps")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t


@dataclass(frozen=True)
class ParticleEnsemble:
    """``n`` paths sampled once and reused by every solver iteration.

    ``X`` has shape ``(n, M + 1)``, ``dW`` has shape ``(n, M)``. ``xi`` and
    ``xi_bar`` are cumulative controls on the nodes, shape ``(n, M + 1)``.
    """

    grid: TimeGrid
    X: np.ndarray
    dW: np.ndarray
    xi: np.ndarray
    xi_bar: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def with_control(self, xi: np.ndarray, xi_bar: np.ndarray | None = None) -> "ParticleEnsemble":
        xi = np.asarray(xi, dtype=float)
        check_control(xi)
        if xi_bar is None:
            xi_bar = self.xi_bar
        return replace(self, xi=xi, xi_bar=xi_bar)

    def u_rng(self, seed: int | None = None) -> np.random.Generator:
        """Generator for randomization draws, independent of the noise panel."""
        s = self.seed if seed is None else seed
        return np.random.default_rng(np.random.SeedSequence(s).spawn(_U_STREAM + 1)[_U_STREAM])


def never_stop(n: int, steps: int) -> np.ndarray:
    xi = np.zeros((n, steps + 1))
    xi[:, -1] = 1.0
    return xi


def immediate_stop(n: int, steps: int) -> np.ndarray:
    return np.ones((n, steps + 1))


def check_control(xi: np.ndarray, tol: float = 1e-12) -> None:
    """Raise unless every row is nondecreasing in ``[0, 1]`` and ends at 1."""
    if xi.ndim != 2:
        raise ValueError("controls are stored as (particles, nodes)")
    if np.any(xi < -tol) or np.any(xi > 1 + tol):
        raise ValueError("control leaves [0, 1]")
    if np.any(np.diff(xi, axis=1) < -tol):
        bad = np.argwhere(np.diff(xi, axis=1) < -tol)[0]
        raise ValueError(f"control decreases for particle {bad[0]} at node {bad[1] + 1}")
    if np.any(np.abs(xi[:, -1] - 1.0) > tol):
        raise ValueError("control must reach 1 at the horizon")


def simulate_paths(model, grid: TimeGrid, n: int, seed: int, *,
                   noise: np.ndarray | None = None, x0: np.ndarray | None = None
                   ) -> ParticleEnsemble:
    """Sample ``x0`` and Brownian increments, then run Euler-Maruyama.

    ``noise`` (shape ``(n, M)``, Brownian increments) and ``x0`` may be
    supplied to replay an external panel.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    streams = np.random.SeedSequence(seed).spawn(_U_STREAM + 1)
    if x0 is None:
        x0 = model.initial_law.sample(np.random.default_rng(streams[_X0_STREAM]), n)
    x0 = np.asarray(x0, dtype=float)
    if noise is None:
        rng = np.random.default_rng(streams[_NOISE_STREAM])
        noise = np.sqrt(grid.dt) * rng.standard_normal((n, grid.steps))
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (n, grid.steps) or x0.shape != (n,):
        raise ValueError("noise panel or x0 has the wrong shape")

    t = grid.nodes
    X = np.empty((n, grid.steps + 1))
    X[:, 0] = x0
    for i in range(grid.steps):
        x = X[:, i]
        b = model.drift(t[i], x)
        s = model.vol(t[i], x)
        ok = np.isfinite(b) & np.isfinite(s)
        if not np.all(ok):
            j = int(np.argmin(ok))
            raise SimulationError(f"non-finite coefficient at t={float(t[i])!r}, x={float(x[j])!r}")
        X[:, i + 1] = x + b * grid.dt + s * noise[:, i]
        if not np.all(np.isfinite(X[:, i + 1])):
            j = int(np.argmin(np.isfinite(X[:, i + 1])))
            raise SimulationError(f"path blew up at t={float(t[i + 1])!r}, from x={float(x[j])!r}")
    xi = never_stop(n, grid.steps)
    return ParticleEnsemble(grid, X, noise, xi, xi.copy(), seed)


def moment_check(ens: ParticleEnsemble, p: float) -> float:
    """``max_i mean |X_{t_i}|^p``."""
    val = float(np.max(np.mean(np.abs(ens.X) ** p, axis=0)))
    if not np.isfinite(val):
        raise SimulationError("moment is not finite")
    return val


def auto_space(model, ens: ParticleEnsemble, bins: int, width: float = 6.0,
               min_half: float = 0.5) -> SpaceGrid:
    """Truncated domain ``mean(x0) +- width * sd(X_T)`` clipped to the model's bounds."""
    center = float(np.mean(ens.X[:, 0]))
    half = max(width * float(np.std(ens.X[:, -1])), min_half)
    lo = max(center - half, model.lower_bound)
    return SpaceGrid(lo, center + half, bins)


def write_noise_panel(ens: ParticleEnsemble, path) -> None:
    np.ascontiguousarray(ens.dW, dtype="<f8").tofile(Path(path))


def read_noise_panel(path, n: int, steps: int) -> np.ndarray:
    data = np.fromfile(Path(path), dtype="<f8")
    if data.size != n * steps:
        raise ValueError(f"noise panel holds {data.size} values, expected {n * steps}")
    return data.reshape(n, steps).astype(float)

"""Discrete subprobability measures and the distances used for convergence checks.

Two kinds of objects live here:

* :class:`MeasureFlow` -- time-indexed histograms on a fixed space grid
  (the pre-stopping population ``m_t``);
* :class:`JointMeasure` -- atoms ``(s, x, w)`` on ``[0, T] x R`` (the
  stopping distribution ``mu``).

Distances are the Wasserstein-1 distance on probabilities, its cemetery
extension to subprobabilities, and the convergence-in-measure metric on
flows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

MASS_TOL = 1e-9


@dataclass(frozen=True)
class SubMeasure:
    """Finite atomic measure on the real line with total mass <= 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if p.shape != w.shape:
            raise ValueError("points and weights must have the same length")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def integrate(self, fn) -> float:
        if self.points.size == 0:
            return 0.0
        return float(np.dot(fn(self.points), self.weights))

    @classmethod
    def dirac(cls, x: float, mass: float = 1.0) -> "SubMeasure":
        return cls(np.array([x]), np.array([mass]))

    @classmethod
    def empty(cls) -> "SubMeasure":
        return cls(np.empty(0), np.empty(0))


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform bins on a truncated domain ``[lo, hi]``."""

    lo: float
    hi: float
    bins: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty domain [{self.lo}, {self.hi}]")
        if self.bins < 1:
            raise ValueError("need at least one bin")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.bins) + 0.5) * self.width

    def locate(self, x) -> np.ndarray:
        """Index of the bin containing ``x``; out-of-domain points are clamped."""
        idx = np.floor((np.asarray(x, dtype=float) - self.lo) / self.width)
        return np.clip(idx, 0, self.bins - 1).astype(np.intp)

    def spill(self, x) -> int:
        """Number of points outside ``[lo, hi]`` (clamped by :meth:`locate`)."""
        x = np.asarray(x, dtype=float)
        return int(np.count_nonzero((x < self.lo) | (x > self.hi)))

    @classmethod
    def from_centers(cls, centers) -> "SpaceGrid":
        c = np.asarray(centers, dtype=float)
        if c.size < 2:
            raise ValueError("need at least two bin centers to recover a grid")
        w = (c[-1] - c[0]) / (c.size - 1)
        if not np.allclose(np.diff(c), w, rtol=1e-9, atol=1e-12):
            raise ValueError("bin centers are not uniformly spaced")
        return cls(float(c[0] - w / 2), float(c[-1] + w / 2), int(c.size))


@dataclass(frozen=True)
class MeasureFlow:
    """Subprobability histograms ``m_{t_i}`` on a shared space grid.

    ``mass[i, j]`` is the mass of bin ``j`` at time ``times[i]``.
    """

    times: np.ndarray
    space: SpaceGrid
    mass: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if mass.shape != (t.size, self.space.bins):
            raise ValueError(
                f"mass has shape {mass.shape}, expected {(t.size, self.space.bins)}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "mass", mass)

    def slice(self, i: int) -> SubMeasure:
        return SubMeasure(self.space.centers, self.mass[i])

    def total_mass(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def mix(self, other: "MeasureFlow", weight: float) -> "MeasureFlow":
        """Return ``(1 - weight) * self + weight * other``."""
        _check_same_flow_grid(self, other)
        return MeasureFlow(self.times, self.space,
                           (1.0 - weight) * self.mass + weight * other.mass)

    def check(self, tol: float = 1e-12) -> None:
        total = self.total_mass()
        if np.any(self.mass < -tol) or np.any(total > 1 + tol):
            raise ValueError("flow slices must be subprobabilities")
        if np.any(np.diff(total) > tol):
            raise ValueError("flow mass must be nonincreasing in time")


@dataclass(frozen=True)
class JointMeasure:
    """Atoms ``(s, x, w)`` of a measure on ``[0, T] x R``.

    Atoms with zero weight are allowed so that measures produced from the
    same particle ensemble share one support and can be mixed exactly.
    """

    times: np.ndarray
    locs: np.ndarray
    weights: np.ndarray
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        x = np.asarray(self.locs, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (t.shape == x.shape == w.shape):
            raise ValueError("times, locs and weights must have equal length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "locs", x)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def cumulative_mass(self, t: float) -> float:
        """``mu([0, t] x R)``."""
        return float(self.weights[self.times <= t].sum())

    def integrate(self, fn) -> float:
        """``int fn(s, x) mu(ds, dx)``."""
        if self.weights.size == 0:
            return 0.0
        return float(np.dot(fn(self.times, self.locs), self.weights))

    def cached(self, key, compute):
        # summaries such as <psi, mu> are requested once per reward evaluation
        if key not in self._cache:
            self._cache[key] = compute(self)
        return self._cache[key]

    def compact(self) -> "JointMeasure":
        keep = self.weights != 0
        return JointMeasure(self.times[keep], self.locs[keep], self.weights[keep])

    def mix(self, other: "JointMeasure", weight: float) -> "JointMeasure":
        """Return ``(1 - weight) * self + weight * other`` on a shared support."""
        if not (np.array_equal(self.times, other.times)
                and np.array_equal(self.locs, other.locs)):
            raise ValueError("mixing requires measures on the same atom support")
        return JointMeasure(self.times, self.locs,
                            (1.0 - weight) * self.weights + weight * other.weights)

    @classmethod
    def empty(cls) -> "JointMeasure":
        return cls(np.empty(0), np.empty(0), np.empty(0))


@dataclass(frozen=True)
class CemeteryConfig:
    """Cemetery point used to metrize subprobabilities: ``d(z, ∂) = |z - z0| + 1``."""

    base_point: float = 0.0


# --------------------------------------------------------------------------
# optimal transport kernels


def _transport_lp(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    """Exact discrete optimal transport between weight vectors ``a`` and ``b``."""
    n, m = cost.shape
    b = b * (a.sum() / b.sum())
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    a_eq = sparse.vstack([rows, cols]).tocsr()[:-1]
    b_eq = np.concatenate([a, b])[:-1]
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _grid_flow_lp(supply: np.ndarray, t_nodes: np.ndarray, x_nodes: np.ndarray) -> float:
    """W1 under the l1 ground metric for measures living on a product grid.

    On a rectilinear grid the l1 distance equals the graph distance, so the
    transport problem reduces to a min-cost flow over nearest-neighbour edges.
    ``supply`` has shape ``(len(t_nodes), len(x_nodes))`` and sums to zero.
    """
    nt, nx = supply.shape
    node = np.arange(nt * nx).reshape(nt, nx)
    tails, heads, costs = [], [], []
    if nx > 1:
        tails.append(node[:, :-1].ravel())
        heads.append(node[:, 1:].ravel())
        costs.append(np.broadcast_to(np.diff(x_nodes), (nt, nx - 1)).ravel())
    if nt > 1:
        tails.append(node[:-1, :].ravel())
        heads.append(node[1:, :].ravel())
        costs.append(np.broadcast_to(np.diff(t_nodes)[:, None], (nt - 1, nx)).ravel())
    if not tails:
        return 0.0
    tail = np.concatenate(tails)
    head = np.concatenate(heads)
    cost = np.concatenate(costs)
    ne = tail.size
    edge = np.arange(ne)
    inc = sparse.csr_matrix(
        (np.concatenate([np.ones(ne), -np.ones(ne)]),
         (np.concatenate([tail, head]), np.concatenate([edge, edge]))),
        shape=(nt * nx, ne))
    a_eq = sparse.hstack([inc, -inc]).tocsr()[:-1]
    b_eq = supply.ravel()[:-1]
    res = linprog(np.concatenate([cost, cost]), A_eq=a_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"grid flow LP failed: {res.message}")
    return float(res.fun)


def _snap(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(nodes, values)
    idx = np.clip(idx, 1, nodes.size - 1)
    left = nodes[idx - 1]
    right = nodes[idx]
    return np.where(values - left <= right - values, idx - 1, idx)


def _weighted_nodes(x: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
    """Up to ``k`` support points placed at weighted quantiles, extremes included."""
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    cum = np.cumsum(ws)
    cum /= cum[-1]
    probs = np.linspace(0.0, 1.0, k)[1:-1]
    inner = xs[np.minimum(np.searchsorted(cum, probs), xs.size - 1)]
    return np.unique(np.concatenate([[xs[0]], inner, [xs[-1]]]))


def _joint_w1(mu: JointMeasure, nu: JointMeasure, max_atoms: int, snap_bins: int):
    """Return the transport cost and a bound on the error introduced by snapping."""
    mu = mu.compact()
    nu = nu.compact()
    if mu.weights.size == 0 and nu.weights.size == 0:
        return 0.0, 0.0
    if mu.weights.size <= max_atoms and nu.weights.size <= max_atoms:
        cost = (np.abs(mu.times[:, None] - nu.times[None, :])
                + np.abs(mu.locs[:, None] - nu.locs[None, :]))
        return _transport_lp(mu.weights, nu.weights, cost), 0.0

    # coarsen onto a product grid and solve the equivalent flow problem;
    # space nodes follow the combined mass so resolution sits where mass is
    all_t = np.concatenate([mu.times, nu.times])
    all_x = np.concatenate([mu.locs, nu.locs])
    all_w = np.concatenate([mu.weights, nu.weights])
    t_nodes = np.unique(all_t)
    if t_nodes.size > snap_bins:
        t_nodes = _weighted_nodes(all_t, all_w, snap_bins)
    x_nodes = _weighted_nodes(all_x, all_w, snap_bins)
    nt, nx = t_nodes.size, x_nodes.size
    supply = np.zeros((nt, nx))
    err = 0.0
    for meas, scale in ((mu, 1.0), (nu, -mu.mass / nu.mass)):
        ti = _snap(meas.times, t_nodes) if nt > 1 else np.zeros(meas.times.size, int)
        xi = _snap(meas.locs, x_nodes) if nx > 1 else np.zeros(meas.locs.size, int)
        np.add.at(supply, (ti, xi), meas.weights * scale)
        moved = np.abs(meas.times - t_nodes[ti]) + np.abs(meas.locs - x_nodes[xi])
        err += abs(scale) * float(np.dot(moved, meas.weights))
    return _grid_flow_lp(supply, t_nodes, x_nodes), err


def _line_w1(a: SubMeasure, b: SubMeasure) -> float:
    # integral of |F_a - F_b| over the merged support
    xs = np.concatenate([a.points, b.points])
    if xs.size == 0:
        return 0.0
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    dw = np.concatenate([a.weights, -b.weights])[order]
    cdf_gap = np.cumsum(dw)[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(xs)))


def _as_line_measure(obj) -> SubMeasure:
    if isinstance(obj, SubMeasure):
        return obj
    if isinstance(obj, tuple) and len(obj) == 2:
        return SubMeasure(*obj)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a measure on R")


def wasserstein1(mu, nu, *, max_atoms: int = 512, snap_bins: int = 64) -> float:
    """Wasserstein-1 distance between two measures of equal total mass.

    On the line the value is exact (integral of the CDF gap). On
    ``[0, T] x R`` with the l1 ground metric the value is exact by linear
    programming when both sides have at most ``max_atoms`` atoms; larger
    inputs are snapped to a product grid with at most ``snap_bins`` nodes per
    axis first (see :func:`wasserstein1_bound` for the snapping error).
    """
    return wasserstein1_bound(mu, nu, max_atoms=max_atoms, snap_bins=snap_bins)[0]


def wasserstein1_bound(mu, nu, *, max_atoms: int = 512, snap_bins: int = 64):
    """``(value, err)`` where the exact distance lies within ``value +- err``."""
    if isinstance(mu, JointMeasure) != isinstance(nu, JointMeasure):
        raise TypeError("both arguments must live on the same space")
    if abs(mu.mass - nu.mass) > MASS_TOL:
        raise ValueError(f"mass mismatch: {mu.mass!r} vs {nu.mass!r}")
    if isinstance(mu, JointMeasure):
        return _joint_w1(mu, nu, max_atoms, snap_bins)
    return _line_w1(_as_line_measure(mu), _as_line_measure(nu)), 0.0


def wasserstein1_sub(mu, nu, cfg: CemeteryConfig = CemeteryConfig()) -> float:
    """Cemetery-extended Wasserstein-1 distance between subprobabilities on R.

    The augmented space ``R ∪ {∂}`` with ``d(z, ∂) = |z - z0| + 1`` is a tree
    (the line with a unit-length leaf hanging at ``z0``), so the distance is
    the sum over edges of edge length times the mass imbalance across it.
    """
    mu = _as_line_measure(mu)
    nu = _as_line_measure(nu)
    for meas in (mu, nu):
        if meas.mass < -MASS_TOL or meas.mass > 1 + MASS_TOL or np.any(meas.weights < -MASS_TOL):
            raise ValueError(f"subprobability mass out of [0, 1]: {meas.mass!r}")
    z0 = cfg.base_point
    xs = np.concatenate([mu.points, nu.points, [z0]])
    dw = np.concatenate([mu.weights, -nu.weights, [0.0]])
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    dw = dw[order]
    below = np.cumsum(dw)[:-1]          # F_mu - F_nu on each gap
    above = (mu.mass - nu.mass) - below  # S_mu - S_nu on each gap
    gaps = np.diff(xs)
    left = xs[1:] <= z0
    line = np.where(left, np.abs(below), np.abs(above))
    return float(np.sum(line * gaps) + abs(mu.mass - nu.mass))


def flow_distance(m1: MeasureFlow, m2: MeasureFlow,
                  cfg: CemeteryConfig = CemeteryConfig()) -> float:
    """Left Riemann sum of ``min(1, d'_1(m1_t, m2_t))`` over the time grid."""
    _check_same_flow_grid(m1, m2)
    dt = np.diff(m1.times)
    total = 0.0
    for i in range(dt.size):
        if np.array_equal(m1.mass[i], m2.mass[i]):
            continue
        total += min(1.0, wasserstein1_sub(m1.slice(i), m2.slice(i), cfg)) * dt[i]
    return float(total)


def pth_moment(obj, p: float) -> float:
    """``int |z|^p dm`` for a line measure, ``int (t^p + |z|^p) dmu`` for a joint one."""
    if p < 1:
        raise ValueError("moment order must be >= 1")
    if isinstance(obj, JointMeasure):
        return float(np.dot(obj.times ** p + np.abs(obj.locs) ** p, obj.weights))
    obj = _as_line_measure(obj)
    return float(np.dot(np.abs(obj.points) ** p, obj.weights))


def _check_same_flow_grid(a: MeasureFlow, b: MeasureFlow) -> None:
    if not np.array_equal(a.times, b.times) or a.space != b.space:
        raise ValueError("flows live on different grids")


# --------------------------------------------------------------------------
# CSV round trip


def write_flow_csv(flow: MeasureFlow, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bin_center", "mass"])
        centers = flow.space.centers
        for i, t in enumerate(flow.times):
            for c, v in zip(centers, flow.mass[i]):
                w.writerow([repr(float(t)), repr(float(c)), repr(float(v))])


def read_flow_csv(path) -> MeasureFlow:
    rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    times = np.unique(rows[:, 0])
    centers = np.unique(rows[:, 1])
    space = SpaceGrid.from_centers(centers)
    mass = np.zeros((times.size, centers.size))
    ti = np.searchsorted(times, rows[:, 0])
    ci = np.searchsorted(centers, rows[:, 1])
    mass[ti, ci] = rows[:, 2]
    flow = MeasureFlow(times, space, mass)
    flow.check(tol=1e-9)
    return flow


def write_joint_csv(mu: JointMeasure, path) -> None:
    mu = mu.compact()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "x", "w"])
        for row in zip(mu.times, mu.locs, mu.weights):
            w.writerow([repr(float(v)) for v in row])


def read_joint_csv(path) -> JointMeasure:
    rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if rows.size == 0:
        return JointMeasure.empty()
    if np.any(rows[:, 2] < 0) or rows[:, 2].sum() > 1 + MASS_TOL:
        raise ValueError("joint measure weights must be nonnegative with mass <= 1")
    return JointMeasure(rows[:, 0], rows[:, 1], rows[:, 2])

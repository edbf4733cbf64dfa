"""Game instances: coefficients, rewards, entropy, initial law and shipped benchmarks.

Reward callables are vectorized over the state argument:

* ``running_reward(t, x, m)`` with ``m`` a :class:`~osmfg.measures.SubMeasure`;
* ``terminal_reward(t, x, mu)`` with ``mu`` a :class:`~osmfg.measures.JointMeasure`.
  Time is passed so that time-dependent lump rewards can treat ``(t, x)`` as
  the state;
* ``terminal_generator(t, x, mu)``, the generator of ``g`` along ``X``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measures import JointMeasure, SubMeasure

MONO_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model fails its construction checks."""


# --------------------------------------------------------------------------
# entropy


def _xlogx(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = z[pos] * np.log(z[pos])
    return out


@dataclass(frozen=True)
class EntropySpec:
    """Strictly concave entropy on ``[0, 1]`` with an interior maximum.

    ``kind='cumulative_residual'`` is ``E(z) = -z log z``. ``kind='user_table'``
    interpolates ``table = (z_nodes, values)`` linearly; concavity is then only
    as good as the table.
    """

    kind: str = "cumulative_residual"
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("cumulative_residual", "user_table"):
            raise ModelError(f"unknown entropy kind {self.kind!r}")
        if self.kind == "user_table":
            if self.table is None:
                raise ModelError("user_table entropy needs (z_nodes, values)")
            z, v = (np.asarray(a, dtype=float) for a in self.table)
            if z.ndim != 1 or z.shape != v.shape or z[0] != 0.0 or z[-1] != 1.0:
                raise ModelError("entropy table must span [0, 1] with matching values")
            if np.any(np.diff(z) <= 0):
                raise ModelError("entropy table nodes must increase")
            object.__setattr__(self, "table", (z, v))

    def value(self, z):
        z = np.asarray(z, dtype=float)
        if np.any((z < 0) | (z > 1)):
            raise ValueError("entropy argument outside [0, 1]")
        if self.kind == "cumulative_residual":
            return -_xlogx(z)
        return np.interp(z, *self.table)

    def derivative(self, z):
        """``E'(z)`` on ``(0, 1]``; ``-inf``-free only away from 0 for the default."""
        z = np.asarray(z, dtype=float)
        if self.kind == "cumulative_residual":
            with np.errstate(divide="ignore"):
                return -(1.0 + np.log(z))
        zn, vn = self.table
        slopes = np.diff(vn) / np.diff(zn)
        idx = np.clip(np.searchsorted(zn, z, side="right") - 1, 0, slopes.size - 1)
        return slopes[idx]

    def stopping_penalty(self, u):
        """Per-unit-time bonus ``-E'(u)`` attached to a uniform draw ``u``.

        Integrating it over ``{u >= z}`` returns ``E(z) - E(1)``.
        """
        return -self.derivative(u)

    @property
    def argmax_hint(self) -> float:
        if self.kind == "cumulative_residual":
            return float(np.exp(-1.0))
        zn, vn = self.table
        return float(zn[np.argmax(vn)])

    def concavity_floor(self, lo: float = 0.0, hi: float = 1.0, n: int = 2001) -> float:
        """Sampled ``min -E''`` on ``[lo, hi]`` (the strict concavity constant)."""
        if self.kind == "cumulative_residual":
            return 1.0 / max(hi, 1e-300)
        z = np.linspace(lo, hi, n)
        h = z[1] - z[0]
        v = self.value(z)
        return float(np.min(-(v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2))

    def check(self, n: int = 1001) -> dict:
        z = np.linspace(0.0, 1.0, n)
        v = self.value(z)
        second = v[2:] - 2 * v[1:-1] + v[:-2]
        zmax = z[np.argmax(v)]
        return {
            "nonnegative": bool(np.all(v >= -1e-15)),
            "strictly_concave": bool(np.all(second < 0)),
            "interior_argmax": bool(0.0 < zmax < 1.0),
        }


# --------------------------------------------------------------------------
# initial law


@dataclass(frozen=True)
class InitialLaw:
    """Law of ``x_0``: ``normal`` (loc, scale), ``atoms`` (points, probs) or ``point``."""

    kind: str
    loc: float = 0.0
    scale: float = 0.0
    points: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.kind == "normal" and not self.scale > 0:
            raise ModelError("normal initial law needs scale > 0")
        if self.kind == "atoms":
            p = np.asarray(self.probs, dtype=float)
            if len(self.points) != p.size or p.size == 0 or np.any(p < 0) \
                    or abs(p.sum() - 1) > 1e-12:
                raise ModelError("atoms initial law needs matching points and probs summing to 1")
        if self.kind not in ("normal", "atoms", "point"):
            raise ModelError(f"unknown initial law {self.kind!r}")

    @classmethod
    def normal(cls, loc, scale):
        return cls("normal", loc=float(loc), scale=float(scale))

    @classmethod
    def point(cls, x):
        return cls("point", loc=float(x))

    @classmethod
    def atoms(cls, points, probs):
        return cls("atoms", points=tuple(float(p) for p in points),
                   probs=tuple(float(p) for p in probs))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return self.loc + self.scale * rng.standard_normal(n)
        if self.kind == "point":
            return np.full(n, self.loc)
        idx = rng.choice(len(self.points), size=n, p=np.asarray(self.probs))
        return np.asarray(self.points)[idx]

    @property
    def mean(self) -> float:
        if self.kind == "atoms":
            return float(np.dot(self.points, self.probs))
        return self.loc

    @property
    def std(self) -> float:
        if self.kind == "normal":
            return self.scale
        if self.kind == "point":
            return 0.0
        pts = np.asarray(self.points)
        return float(np.sqrt(np.dot((pts - self.mean) ** 2, self.probs)))

    def histogram(self, edges: np.ndarray) -> np.ndarray:
        """Bin probabilities on ``edges``; outer bins absorb the tails."""
        from scipy.stats import norm

        edges = np.asarray(edges, dtype=float)
        if self.kind == "normal":
            cdf = norm.cdf(edges[1:-1], self.loc, self.scale)
            cdf = np.concatenate([[0.0], cdf, [1.0]])
            return np.diff(cdf)
        pts = np.array([self.loc]) if self.kind == "point" else np.asarray(self.points)
        pr = np.array([1.0]) if self.kind == "point" else np.asarray(self.probs)
        width = edges[1] - edges[0]
        idx = np.clip(np.floor((pts - edges[0]) / width), 0, edges.size - 2).astype(int)
        out = np.zeros(edges.size - 1)
        np.add.at(out, idx, pr)
        return out


# --------------------------------------------------------------------------
# model container


@dataclass(frozen=True)
class SupermodularData:
    """Auxiliary ``psi`` with ``(d/dt + L) psi >= 0`` and ``g(x, mu) = g_tilde(x, <psi, mu>)``.

    ``lg_tilde(t, x, y)`` is the generator of ``g_tilde`` in ``x`` at fixed ``y``.
    """

    psi: Callable
    psi_generator: Callable
    g_tilde: Callable
    lg_tilde: Callable

    def pairing(self, mu: JointMeasure) -> float:
        return mu.cached(("psi", id(self.psi)), lambda m: m.integrate(self.psi))


@dataclass(frozen=True)
class StructureFlags:
    lasry_lions: bool = False
    supermodular: bool = False


@dataclass(frozen=True)
class ModelSpec:
    name: str
    horizon: float
    drift: Callable
    vol: Callable
    running_reward: Callable
    terminal_reward: Callable
    initial_law: InitialLaw
    terminal_generator: Optional[Callable] = None
    entropy: EntropySpec = field(default_factory=EntropySpec)
    moment_order: float = 1.0
    flags: StructureFlags = field(default_factory=StructureFlags)
    supermodular: Optional[SupermodularData] = None
    lower_bound: float = -np.inf
    dim: int = 1
    # extra sampled checks, each (name, fn(t_grid, x_grid) -> bool)
    checks: tuple = ()
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        if self.moment_order < 1:
            raise ModelError("moment order must be >= 1")
        if self.dim != 1:
            raise ModelError("only one-dimensional states are supported")
        if self.flags.supermodular and (self.supermodular is None
                                        or self.terminal_generator is None):
            raise ModelError("supermodular models need SupermodularData and a terminal generator")


def check_structure(model: ModelSpec, lo: float, hi: float, n: int = 50) -> dict:
    """Run the sampled structural checks on an ``n x n`` grid of ``[0, T] x [lo, hi]``."""
    t = np.linspace(0.0, model.horizon, n)
    x = np.linspace(lo, hi, n)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    out = {}
    b = model.drift(tt, xx)
    s = model.vol(tt, xx)
    out["finite_coefficients"] = bool(np.all(np.isfinite(b)) and np.all(np.isfinite(s)))
    if model.flags.supermodular:
        sm = model.supermodular
        out["psi_generator_nonnegative"] = bool(np.all(sm.psi_generator(tt, xx) >= -MONO_TOL))
        ys = np.linspace(0.0, max(1.0, abs(model.horizon)), 11)
        lg = np.stack([sm.lg_tilde(tt, xx, y) for y in ys])
        out["lg_tilde_nondecreasing"] = bool(np.all(np.diff(lg, axis=0) >= -MONO_TOL))
    for name, fn in model.checks:
        out[name] = bool(fn(t, x))
    return out


def _mass_family(x: np.ndarray, k: int = 11) -> list:
    """Nested family of subprobabilities on ``x`` with growing mass."""
    w = np.full(x.size, 1.0 / x.size)
    return [SubMeasure(x, w * a) for a in np.linspace(0.0, 1.0, k)]


def _f_setwise_check(f):
    # f nondecreasing under setwise growth of m
    def check(t, x):
        fam = _mass_family(x)
        for ti in t:
            vals = np.stack([f(ti, x, m) for m in fam])
            if np.any(np.diff(vals, axis=0) < -MONO_TOL):
                return False
        return True
    return check


def _as_arr(v, like):
    return np.broadcast_to(np.asarray(v, dtype=float), np.shape(like)).astype(float)


# --------------------------------------------------------------------------
# benchmarks


def make_bank_run_model(f0: Callable | None = None, g: Callable | None = None, *,
                        form: str = "additive", offset: float = 0.1, run_penalty: float = 1.0,
                        x0_mean: float = 0.2, x0_std: float = 0.3, drift: float = 0.0,
                        sigma: float = 0.5, horizon: float = 1.0,
                        entropy: EntropySpec | None = None) -> ModelSpec:
    """Timing game where the reward for staying depends on the fraction already gone.

    ``f(t, x, m) = f0(t, x, 1 - m(R))`` with ``f0`` nonincreasing in its last
    argument and ``g = g(x)`` state-only (with its first two derivatives for
    the generator, supplied as ``g = (g, g', g'')``).

    Without an explicit ``f0`` the ``form`` picks
    ``x + offset - run_penalty * y`` (additive) or
    ``-exp(x) * (offset + run_penalty * y)`` (multiplicative).
    """
    if f0 is None:
        if form == "additive":
            def f0(t, x, y):
                return x + offset - run_penalty * y
        elif form == "multiplicative":
            def f0(t, x, y):
                return -np.exp(x) * (offset + run_penalty * y)
        else:
            raise ModelError(f"unknown bank-run form {form!r}")
    if g is None:
        g = (lambda x: np.zeros_like(x), lambda x: np.zeros_like(x),
             lambda x: np.zeros_like(x))
    g_fn, g_d1, g_d2 = g

    y_probe = np.linspace(0.0, 1.0, 21)
    t_probe = np.linspace(0.0, horizon, 11)
    x_probe = np.linspace(x0_mean - 6 * x0_std - 3 * sigma, x0_mean + 6 * x0_std + 3 * sigma, 25)
    for ti in t_probe:
        vals = np.stack([_as_arr(f0(ti, x_probe, y), x_probe) for y in y_probe])
        if np.any(np.diff(vals, axis=0) > MONO_TOL):
            raise ModelError("bank-run f0 must be nonincreasing in the stopped fraction")

    def running(t, x, m):
        return _as_arr(f0(t, x, 1.0 - m.mass), x)

    def terminal(t, x, mu):
        return _as_arr(g_fn(x), x)

    def lg(t, x):
        return drift * g_d1(x) + 0.5 * sigma ** 2 * g_d2(x)

    def generator(t, x, mu):
        return _as_arr(lg(t, x), x)

    sm = SupermodularData(
        psi=lambda t, x: np.asarray(t, dtype=float),
        psi_generator=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
        g_tilde=lambda x, y: g_fn(x),
        lg_tilde=lambda t, x, y: _as_arr(lg(t, x), x),
    )
    return ModelSpec(
        name="bank_run", horizon=horizon,
        drift=lambda t, x: _as_arr(drift, x),
        vol=lambda t, x: _as_arr(sigma, x),
        running_reward=running, terminal_reward=terminal, terminal_generator=generator,
        initial_law=InitialLaw.normal(x0_mean, x0_std),
        entropy=entropy or EntropySpec(),
        flags=StructureFlags(supermodular=True), supermodular=sm,
        checks=(("f_nondecreasing_setwise", _f_setwise_check(running)),),
        params=dict(form=form, offset=offset, run_penalty=run_penalty, x0_mean=x0_mean,
                    x0_std=x0_std, drift=drift, sigma=sigma, horizon=horizon),
    )


def make_gbm_model(b0: float = 0.0, sigma0: float = 0.3, z0: float = 1.0, *,
                   horizon: float = 1.0, entropy: EntropySpec | None = None) -> ModelSpec:
    """Geometric Brownian motion with ``f = int (z + y) m(dy)`` and ``g = int (t + s) mu(ds, dy)``.

    The lump reward depends on the stopping time, so ``g`` reads ``t`` as a
    state coordinate. Its generator along ``(t, Z_t)`` is ``mu`` total mass.
    """
    if not sigma0 > 0:
        raise ModelError("sigma0 must be positive")
    if not z0 > 0:
        raise ModelError("z0 must be positive")

    def running(t, x, m):
        x = np.asarray(x, dtype=float)
        return x * m.mass + m.integrate(lambda y: y)

    def stopped_time_moment(mu):
        return mu.cached("time_moment", lambda v: v.integrate(lambda s, y: s))

    def terminal(t, x, mu):
        t = _as_arr(t, x)
        return t * mu.mass + stopped_time_moment(mu)

    def generator(t, x, mu):
        return _as_arr(mu.mass, x)

    sm = SupermodularData(
        psi=lambda t, x: np.asarray(t, dtype=float) + 0.0 * np.asarray(x, dtype=float),
        psi_generator=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
        g_tilde=lambda x, y: y,
        lg_tilde=lambda t, x, y: np.ones_like(np.asarray(x, dtype=float)),
    )

    def f_check(t, x):
        # growth of m raises f only where the integrand z + y is nonnegative
        xs = np.abs(x) + 1e-3
        return _f_setwise_check(running)(t, xs)

    return ModelSpec(
        name="gbm", horizon=horizon,
        drift=lambda t, x: b0 * np.asarray(x, dtype=float),
        vol=lambda t, x: sigma0 * np.asarray(x, dtype=float),
        running_reward=running, terminal_reward=terminal, terminal_generator=generator,
        initial_law=InitialLaw.point(z0),
        entropy=entropy or EntropySpec(),
        flags=StructureFlags(supermodular=True), supermodular=sm,
        lower_bound=0.0,
        checks=(("f_nondecreasing_setwise", f_check),),
        params=dict(b0=b0, sigma0=sigma0, z0=z0, horizon=horizon),
    )


def make_monotone_separable_model(kbar: Callable | None = None, fbar: Callable | None = None,
                                  lbar: Callable | None = None, hbar: Callable | None = None, *,
                                  x0_mean: float = 0.0, x0_std: float = 0.5, drift: float = 0.0,
                                  reversion: float = 1.0, sigma: float = 1.0, horizon: float = 1.0,
                                  entropy: EntropySpec | None = None) -> ModelSpec:
    """Separable payoffs ``f = kbar(x) fbar(t, <kbar, m>)``, ``g = lbar(x) hbar(<lbar, mu>)``.

    The state follows ``dX = (drift - reversion * X) dt + sigma dW``.

    ``fbar(t, .)`` and ``hbar`` must be nonincreasing on the range they are
    evaluated on; both make the interaction crowd-averse, which is what the
    monotonicity condition needs.
    """
    kbar = kbar or (lambda x: np.ones_like(np.asarray(x, dtype=float)))
    fbar = fbar or (lambda t, y: 0.2 - 1.0 * y)
    lbar = lbar or (lambda x: np.asarray(x, dtype=float))
    hbar = hbar or (lambda y: 1.0 - 0.5 * y)

    spread = 6 * x0_std + 6 * sigma * np.sqrt(horizon) + abs(drift) * horizon
    x_probe = np.linspace(x0_mean - spread, x0_mean + spread, 201)
    k_vals = np.asarray(kbar(x_probe), dtype=float) * np.ones_like(x_probe)
    l_vals = np.asarray(lbar(x_probe), dtype=float) * np.ones_like(x_probe)
    ky = np.linspace(min(0.0, k_vals.min()), max(0.0, k_vals.max()), 41)
    # consistent mu are probabilities, so <lbar, mu> ranges over the hull of lbar
    ly = np.linspace(l_vals.min(), l_vals.max(), 41)
    for ti in np.linspace(0.0, horizon, 11):
        fv = np.array([float(fbar(ti, y)) for y in ky])
        if np.any(np.diff(fv) > MONO_TOL):
            raise ModelError("fbar(t, .) must be nonincreasing")
    hv = np.array([float(hbar(y)) for y in ly])
    if np.any(np.diff(hv) > MONO_TOL):
        raise ModelError("hbar must be nonincreasing on the range of lbar")

    def l_moment(mu):
        return mu.cached(("lbar", id(lbar)), lambda v: v.integrate(lambda s, x: lbar(x)))

    def running(t, x, m):
        x = np.asarray(x, dtype=float)
        return _as_arr(kbar(x), x) * float(fbar(t, m.integrate(kbar)))

    def terminal(t, x, mu):
        x = np.asarray(x, dtype=float)
        return _as_arr(lbar(x), x) * float(hbar(l_moment(mu)))

    def generator(t, x, mu):
        # finite-difference generator of lbar; exact for affine and quadratic lbar
        x = np.asarray(x, dtype=float)
        h = 1e-4
        d1 = (lbar(x + h) - lbar(x - h)) / (2 * h)
        d2 = (lbar(x + h) - 2 * lbar(x) + lbar(x - h)) / h ** 2
        b = drift - reversion * x
        return _as_arr((b * d1 + 0.5 * sigma ** 2 * d2) * float(hbar(l_moment(mu))), x)

    return ModelSpec(
        name="monotone", horizon=horizon,
        drift=lambda t, x: drift - reversion * np.asarray(x, dtype=float),
        vol=lambda t, x: _as_arr(sigma, x),
        running_reward=running, terminal_reward=terminal, terminal_generator=generator,
        initial_law=InitialLaw.normal(x0_mean, x0_std),
        entropy=entropy or EntropySpec(),
        flags=StructureFlags(lasry_lions=True),
        params=dict(x0_mean=x0_mean, x0_std=x0_std, drift=drift, reversion=reversion,
                    sigma=sigma, horizon=horizon),
    )


def make_free_model(*, x0_mean: float = 0.0, x0_std: float = 0.5, sigma: float = 0.5,
                    horizon: float = 1.0, stop_bonus: float = 0.0,
                    entropy: EntropySpec | None = None) -> ModelSpec:
    """Interaction-free control problem: ``f = x``, ``g = stop_bonus``.

    Rewards ignore the population, so every structural condition holds trivially.
    """
    def running(t, x, m):
        return np.asarray(x, dtype=float) + 0.0

    def terminal(t, x, mu):
        return _as_arr(stop_bonus, x)

    def generator(t, x, mu):
        return np.zeros_like(np.asarray(x, dtype=float))

    sm = SupermodularData(
        psi=lambda t, x: np.asarray(t, dtype=float),
        psi_generator=lambda t, x: np.ones_like(np.asarray(x, dtype=float)),
        g_tilde=lambda x, y: _as_arr(stop_bonus, x),
        lg_tilde=lambda t, x, y: np.zeros_like(np.asarray(x, dtype=float)),
    )
    return ModelSpec(
        name="free", horizon=horizon,
        drift=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)),
        vol=lambda t, x: _as_arr(sigma, x),
        running_reward=running, terminal_reward=terminal, terminal_generator=generator,
        initial_law=InitialLaw.normal(x0_mean, x0_std),
        entropy=entropy or EntropySpec(),
        flags=StructureFlags(lasry_lions=True, supermodular=True), supermodular=sm,
        params=dict(x0_mean=x0_mean, x0_std=x0_std, sigma=sigma, horizon=horizon,
                    stop_bonus=stop_bonus),
    )


BENCHMARKS = {
    "bank_run": make_bank_run_model,
    "gbm": make_gbm_model,
    "monotone": make_monotone_separable_model,
    "free": make_free_model,
}


def build_model(name: str, **params) -> ModelSpec:
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return factory(**params)

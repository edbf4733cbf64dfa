"""Fictitious play, its monotone variant for supermodular games, and the temperature sweep."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bestresponse import solve_best_response
from .consistency import gamma
from .dynamics import ParticleEnsemble, TimeGrid, auto_space, immediate_stop, never_stop, \
    simulate_paths
from .measures import CemeteryConfig, JointMeasure, MeasureFlow, SpaceGrid, flow_distance, \
    wasserstein1
from .payoff import RewardFields, SolverConfig
from .policy import FeedbackPolicy, policy_order, policy_paths, random_policy

log = logging.getLogger(__name__)

DIAG_COLUMNS = ("iter", "epsilon", "d1_mu_step", "dM_m_step", "payoff", "residual_gap",
                "residual_m", "residual_mu", "seconds")
MONO_SLACK = 1e-10


class FictitiousPlayError(RuntimeError):
    pass


class MonotonicityError(FictitiousPlayError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class FPDiagnostics:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({c: row[c] for c in DIAG_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path, include_time: bool = True) -> None:
        cols = DIAG_COLUMNS if include_time else DIAG_COLUMNS[:-1]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(str(r["iter"]) if c == "iter" else repr(float(r[c]))
                                  for c in cols) + "\n")


@dataclass
class EquilibriumResult:
    policy: FeedbackPolicy
    xi_bar: np.ndarray
    m: MeasureFlow
    mu: JointMeasure
    diagnostics: FPDiagnostics
    converged: bool
    stop_reason: str
    config: SolverConfig
    seed: int
    ensemble: ParticleEnsemble = field(repr=False, default=None)

    @property
    def iterations(self) -> int:
        """Averaging steps taken; row 0 scores the initial control."""
        return max(len(self.diagnostics) - 1, 0)

    @property
    def mean_control(self) -> np.ndarray:
        return self.xi_bar.mean(axis=0)

    @property
    def final_epsilon(self) -> float:
        return float(self.diagnostics.rows[-1]["epsilon"]) if self.diagnostics.rows else np.nan


def prepare(model, cfg: SolverConfig, ens: ParticleEnsemble | None = None,
            space: SpaceGrid | None = None):
    """Common noise panel and truncated space grid for a run."""
    grid = TimeGrid(model.horizon, cfg.steps)
    if ens is None:
        ens = simulate_paths(model, grid, cfg.particles, cfg.seed)
    if space is None:
        if cfg.space_lo is not None and cfg.space_hi is not None:
            space = SpaceGrid(cfg.space_lo, cfg.space_hi, cfg.bins)
        else:
            space = auto_space(model, ens, cfg.bins)
    return ens, space


def noise_floor(cfg: SolverConfig, ens: ParticleEnsemble, space: SpaceGrid) -> float:
    """``max(mc_tol, dt + dx)``: below this, distances are not resolved by the grids."""
    return max(cfg.mc_tol, ens.grid.dt + space.width)


def _initial_paths(init, ens: ParticleEnsemble) -> np.ndarray:
    n, steps = ens.n, ens.grid.steps
    if init is None or (isinstance(init, str) and init == "never"):
        return never_stop(n, steps)
    if isinstance(init, str):
        if init == "immediate":
            return immediate_stop(n, steps)
        raise FictitiousPlayError(f"unknown initialization {init!r}")
    if isinstance(init, FeedbackPolicy):
        return policy_paths(ens.X, init)
    xi = np.array(init, dtype=float)
    if xi.shape != ens.X.shape:
        raise FictitiousPlayError("initial control paths do not match the ensemble")
    return xi


def exploitability(model, ens: ParticleEnsemble, xi_br: np.ndarray, xi_bar: np.ndarray,
                   m_bar: MeasureFlow, mu_bar: JointMeasure, cfg: SolverConfig,
                   fields: RewardFields | None = None) -> float:
    """Payoff gain of the best reply over the averaged control at frozen measures."""
    fields = fields or RewardFields(model, ens, m_bar, mu_bar)
    if xi_br is xi_bar:
        return 0.0
    return float(np.mean(fields.singular_samples(xi_br, cfg.lam))
                 - np.mean(fields.singular_samples(xi_bar, cfg.lam)))


def _check_monotone(new: np.ndarray, old: np.ndarray, direction: str, it: int) -> None:
    diff = new - old if direction == "earliest" else old - new
    worst = np.unravel_index(np.argmax(diff), diff.shape)
    if diff[worst] > MONO_SLACK:
        dump = {"iteration": it, "particle": int(worst[0]), "node": int(worst[1]),
                "previous": float(old[worst]), "current": float(new[worst])}
        raise MonotonicityError(
            f"{direction} iterates lost monotonicity at iteration {it}: {dump}", dump)


def fictitious_play(model, cfg: SolverConfig, init=None, *, ens: ParticleEnsemble | None = None,
                    space: SpaceGrid | None = None, monotone: str | None = None,
                    cemetery: CemeteryConfig = CemeteryConfig(), warm_weight: float = 0.0,
                    check_linearity: bool = False, on_iterate=None) -> EquilibriumResult:
    """Average best replies pathwise on one noise panel until exploitability drops below ``fp_tol``.

    ``init`` is a policy, a path array, ``"immediate"`` or ``"never"`` (default).
    ``warm_weight`` counts the initial control as that many past iterates.
    ``monotone`` (``"earliest"`` / ``"latest"``) asserts the iterates move one way.
    ``on_iterate(k, xi_bar)`` sees every averaged control, starting with the initial one.
    """
    ens, space = prepare(model, cfg, ens, space)
    xi_bar = _initial_paths(init, ens)
    m_bar, mu_bar = gamma(ens, space, xi_bar)
    if on_iterate is not None:
        on_iterate(0, xi_bar)
    diags = FPDiagnostics()
    prev_m = prev_mu = None
    pol = None
    converged = False
    reason = "n_max"
    for k in range(cfg.n_max + 1):
        tic = time.perf_counter()
        pol, _ = solve_best_response(model, m_bar, mu_bar, cfg)
        xi_br = policy_paths(ens.X, pol)
        fields = RewardFields(model, ens, m_bar, mu_bar)
        j_br = float(np.mean(fields.singular_samples(xi_br, cfg.lam)))
        j_bar = float(np.mean(fields.singular_samples(xi_bar, cfg.lam)))
        eps = j_br - j_bar
        if not np.isfinite(eps):
            raise FictitiousPlayError(f"payoff diverged at iteration {k}")
        m_br, mu_br = gamma(ens, space, xi_br)
        res_m = flow_distance(m_bar, m_br, cemetery)
        res_mu = wasserstein1(mu_bar, mu_br)
        d1_step = np.nan if prev_mu is None else wasserstein1(prev_mu, mu_br)
        dm_step = np.nan if prev_m is None else flow_distance(prev_m, m_br, cemetery)
        prev_m, prev_mu = m_br, mu_br
        diags.append(iter=k, epsilon=eps, d1_mu_step=d1_step, dM_m_step=dm_step, payoff=j_bar,
                     residual_gap=eps, residual_m=res_m, residual_mu=res_mu,
                     seconds=time.perf_counter() - tic)
        log.info("iter %d  eps=%.3e  J=%.5f  d1(mu)=%.3e", k, eps, j_bar, res_mu)
        if eps < cfg.fp_tol:
            converged, reason = True, "fp_tol"
            break
        if k == cfg.n_max:
            break
        w = 1.0 / (k + 1 + warm_weight)
        new_bar = (1.0 - w) * xi_bar + w * xi_br
        if monotone is not None:
            _check_monotone(new_bar, xi_bar, monotone, k + 1)
        xi_bar = new_bar
        if on_iterate is not None:
            on_iterate(k + 1, xi_bar)
        m_bar = m_bar.mix(m_br, w)
        mu_bar = mu_bar.mix(mu_br, w)
        if check_linearity:
            m_chk, mu_chk = gamma(ens, space, xi_bar)
            gap = max(np.max(np.abs(m_chk.mass - m_bar.mass)),
                      np.max(np.abs(mu_chk.weights - mu_bar.weights)))
            if gap > 1e-10:
                raise FictitiousPlayError(f"running averages drifted from gamma by {gap:.3e}")
    return EquilibriumResult(pol, xi_bar, m_bar, mu_bar, diags, converged, reason, cfg,
                             cfg.seed, ens)


def supermodular_play(model, cfg: SolverConfig, direction: str = "earliest", **kw
                      ) -> EquilibriumResult:
    """Fictitious play from the top (immediate stop) or bottom (never stop) of the lattice."""
    if not model.flags.supermodular or model.supermodular is None:
        raise FictitiousPlayError("model is not flagged supermodular")
    if direction not in ("earliest", "latest"):
        raise FictitiousPlayError(f"unknown direction {direction!r}")
    init = "immediate" if direction == "earliest" else "never"
    return fictitious_play(model, cfg, init, monotone=direction, **kw)


def supermodular_bracket(model, cfg: SolverConfig, **kw):
    """Run both monotone iterations on one panel and check that they bracket correctly."""
    ens, space = prepare(model, cfg, kw.pop("ens", None), kw.pop("space", None))
    early = supermodular_play(model, cfg, "earliest", ens=ens, space=space, **kw)
    late = supermodular_play(model, cfg, "latest", ens=ens, space=space, **kw)
    order = policy_order(early.xi_bar, late.xi_bar, tol=MONO_SLACK)
    if order.relation != "earlier":
        raise MonotonicityError("earliest-direction limit stops later than the latest one",
                                {"relation": order.relation})
    return early, late, order


@dataclass
class SweepPoint:
    lam: float
    d1_mu: float
    dM_m: float
    residual0: float
    epsilon: float
    iterations: int
    converged: bool


def lambda_sweep(model, cfg: SolverConfig, lambdas, *, init=None, ens=None, space=None,
                 cemetery: CemeteryConfig = CemeteryConfig(), warm_weight: float = 0.0):
    """Solve along a decreasing temperature list ending at 0, warm-starting each solve.

    A one-element list is accepted as a degenerate sweep whose reference is itself.

    Returns ``(points, results)`` where each point holds the distances of that
    equilibrium to the zero-temperature one and its zero-temperature residual.
    """
    lambdas = [float(v) for v in lambdas]
    if not valid_temperatures(lambdas):
        raise FictitiousPlayError("temperatures must strictly decrease and end at 0")
    ens, space = prepare(model, cfg, ens, space)
    results = []
    start = init
    for lam in lambdas:
        c = _replace(cfg, lam=lam)
        res = fictitious_play(model, c, start, ens=ens, space=space, cemetery=cemetery,
                              warm_weight=warm_weight if results else 0.0)
        results.append(res)
        start = res.xi_bar
    ref = results[-1]
    zero = _replace(cfg, lam=0.0)
    points = []
    for lam, res in zip(lambdas, results):
        br, _ = solve_best_response(model, res.m, res.mu, zero)
        fields = RewardFields(model, ens, res.m, res.mu)
        r0 = float(np.mean(fields.singular_samples(policy_paths(ens.X, br), 0.0))
                   - np.mean(fields.singular_samples(res.xi_bar, 0.0)))
        points.append(SweepPoint(lam, wasserstein1(res.mu, ref.mu),
                                 flow_distance(res.m, ref.m, cemetery), r0,
                                 res.final_epsilon, res.iterations, res.converged))
    return points, results


def valid_temperatures(lambdas) -> bool:
    # a single temperature is its own reference point
    if len(lambdas) <= 1:
        return len(lambdas) == 1 and lambdas[0] >= 0.0
    return lambdas[-1] == 0.0 and all(a > b for a, b in zip(lambdas, lambdas[1:]))


def _replace(cfg: SolverConfig, **kw) -> SolverConfig:
    from dataclasses import replace
    return replace(cfg, **kw)


@dataclass
class ProbeReport:
    max_value: float
    values: np.ndarray
    passed: bool


def ll_monotonicity_probe(model, cfg: SolverConfig, trials: int, *, ens=None, space=None,
                          seed: int = 0) -> ProbeReport:
    """Sample random policy pairs and evaluate the cross difference of payoffs.

    Under the monotonicity condition the cross difference is never positive.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    ens, space = prepare(model, cfg, ens, space)
    rng = np.random.default_rng(seed)
    vals = np.empty(trials)
    for n in range(trials):
        a = policy_paths(ens.X, random_policy(ens.grid, space, cfg.levels, rng))
        b = policy_paths(ens.X, random_policy(ens.grid, space, cfg.levels, rng))
        ma, mua = gamma(ens, space, a)
        mb, mub = gamma(ens, space, b)
        fa = RewardFields(model, ens, ma, mua)
        fb = RewardFields(model, ens, mb, mub)

        def J(fields, xi):
            return float(np.mean(fields.singular_samples(xi, cfg.lam)))

        vals[n] = (J(fa, a) - J(fa, b)) - (J(fb, a) - J(fb, b))
    mx = float(vals.max())
    passed = mx <= cfg.mc_tol if model.flags.lasry_lions else True
    return ProbeReport(mx, vals, passed)

"""Statistical checks that randomized stopping reproduces the singular-control objects."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .bestresponse import solve_best_response
from .consistency import gamma
from .dynamics import ParticleEnsemble
from .measures import JointMeasure, MeasureFlow, SpaceGrid
from .payoff import RewardFields, SolverConfig, paired_gap
from .policy import RandomizedStops, draw_uniform, generalized_inverse, policy_paths


@dataclass
class Report:
    name: str
    passed: bool
    summary: dict = field(default_factory=dict)
    offenders: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=_jsonable)

    def to_text(self) -> str:
        lines = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  {k}: {v}" for k, v in self.summary.items()]
        for off in self.offenders[:5]:
            lines.append(f"  offender: {off}")
        return "\n".join(lines)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def verify_conditional_cdf(ens: ParticleEnsemble, stops: RandomizedStops, tol_sigma: float = 4.0,
                           xi: np.ndarray | None = None) -> Report:
    """Empirical ``P(tau <= t_i)`` against ``mean xi_{t_i}`` with binomial error bars."""
    xi = ens.xi if xi is None else xi
    n, nodes = xi.shape
    p = xi.mean(axis=0)
    emp = np.array([(stops.tau_index <= i).mean() for i in range(nodes)])
    se = np.sqrt(np.clip(p * (1 - p), 0, None) / n)
    dev = np.abs(emp - p)
    allowed = tol_sigma * se + 1e-12
    z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev > 1e-12, np.inf, 0.0))
    worst = int(np.argmax(z))
    passed = bool(np.all(dev <= allowed))
    return Report("conditional_cdf", passed,
                  {"nodes": nodes, "particles": n, "worst_node": worst,
                   "worst_z": float(z[worst]), "worst_gap": float(dev[worst]),
                   "tol_sigma": tol_sigma},
                  [{"node": int(i), "empirical": float(emp[i]), "mean_xi": float(p[i]),
                    "se": float(se[i])} for i in np.argsort(-z)[:5] if z[i] > tol_sigma])


def _bin_check(emp: np.ndarray, ref: np.ndarray, n: int, tol_sigma: float, label: str):
    nonempty = (emp > 0) | (ref > 0)
    se = np.sqrt(np.clip(ref * (1 - ref), 0, None) / n)
    dev = np.abs(emp - ref)
    bad = nonempty & (dev > tol_sigma * se + 1e-12)
    offenders = []
    for idx in np.argwhere(bad)[:5]:
        i, j = idx
        offenders.append({"form": label, "node": int(i), "bin": int(j),
                          "strict": float(emp[i, j]), "singular": float(ref[i, j]),
                          "se": float(se[i, j])})
    return int(nonempty.sum()), int(bad.sum()), offenders


def verify_consistency_identities(ens: ParticleEnsemble, stops: RandomizedStops, space: SpaceGrid,
                                  xi: np.ndarray | None = None, tol_sigma: float = 4.0,
                                  budget: float = 0.01) -> Report:
    """Bin-by-bin comparison of strict-stopping and singular-control measures.

    Checks ``P(X_t in A, t < tau)`` against ``m_t(A)`` and
    ``P(X_tau in B, tau <= t)`` against ``mu([0, t] x B)``. Passes when at
    most ``budget`` of the nonempty bins fall outside ``tol_sigma`` binomial
    standard errors.
    """
    xi = ens.xi if xi is None else xi
    n, nodes = xi.shape
    J = space.bins
    bins = space.locate(ens.X)
    node = np.arange(nodes)[None, :]
    flat = (bins + J * node).ravel()

    alive = (node < stops.tau_index[:, None]).astype(float)
    m_strict = np.bincount(flat, weights=alive.ravel(), minlength=nodes * J).reshape(nodes, J) / n
    m_sing, _ = gamma(ens, space, xi)

    stop_flat = stops.tau_index * J + bins[np.arange(n), stops.tau_index]
    mu_strict = np.bincount(stop_flat, minlength=nodes * J).reshape(nodes, J).cumsum(axis=0) / n
    dxi = np.diff(xi, axis=1, prepend=0.0)
    mu_sing = np.bincount(flat, weights=dxi.ravel(), minlength=nodes * J).reshape(nodes, J)
    mu_sing = mu_sing.cumsum(axis=0) / n

    c1, b1, o1 = _bin_check(m_strict, m_sing.mass, n, tol_sigma, "m")
    c2, b2, o2 = _bin_check(mu_strict, mu_sing, n, tol_sigma, "mu")
    total, bad = c1 + c2, b1 + b2
    frac = bad / total if total else 0.0
    return Report("consistency_identities", frac <= budget,
                  {"bins_checked": total, "bins_outside": bad, "fraction_outside": frac,
                   "m_outside": b1, "mu_outside": b2, "budget": budget},
                  o1 + o2)


def _stop_payoffs(fields: RewardFields, ens: ParticleEnsemble, tau_index: np.ndarray,
                  level: np.ndarray, lam: float) -> np.ndarray:
    rows = np.arange(ens.n)
    stops = RandomizedStops(level, tau_index, ens.grid.nodes[tau_index], ens.X[rows, tau_index])
    return fields.stopping_samples(stops, lam)


def verify_os_equivalence(model, ens: ParticleEnsemble, m: MeasureFlow, mu: JointMeasure,
                          cfg: SolverConfig, xi: np.ndarray | None = None, seed: int | None = None,
                          tol_sigma: float = 4.0) -> Report:
    """Randomized-stopping payoff against the singular one, and optimality of the inverse stop.

    (a) the randomized form of the objective matches the singular form on
    ``xi`` within ``tol_sigma`` paired standard errors;
    (b) stopping at ``theta(1 - U)`` for the best-reply control beats a panel
    of deterministic times, threshold rules and perturbed inverses up to
    Monte Carlo error plus ``mc_tol``.
    """
    if cfg.lam <= 0:
        raise ValueError("the randomized-stopping equivalence check needs a positive temperature")
    xi = ens.xi if xi is None else xi
    fields = RewardFields(model, ens, m, mu)
    rng = ens.u_rng(seed)
    u = draw_uniform(rng, ens.n)

    # (a) tau = first node with xi > U
    above = xi > u[:, None]
    above[:, -1] = True
    tau = np.argmax(above, axis=1)
    stop_s = _stop_payoffs(fields, ens, tau, u, cfg.lam)
    sing_s = fields.singular_samples(xi, cfg.lam)
    gap_a, se_a = paired_gap(stop_s, sing_s)
    ok_a = abs(gap_a) <= tol_sigma * se_a + 1e-12

    # (b) theta(1 - U) of the best reply against alternatives on the same draws
    level = 1.0 - u
    level = np.where(level > 0, level, np.nextafter(0.0, 1.0))
    pol, _ = solve_best_response(model, m, mu, cfg)
    xi_hat = policy_paths(ens.X, pol)
    best = _stop_payoffs(fields, ens, generalized_inverse(xi_hat, level), level, cfg.lam)

    # the panel stays inside the best reply's class: bin-measurable thresholds and
    # controls on the q-level grid, so grid resolution cannot masquerade as suboptimality
    M = ens.grid.steps
    bins = m.space.locate(ens.X)
    snap = lambda v: np.round(v * (cfg.levels - 1)) / (cfg.levels - 1)  # noqa: E731
    panel = {}
    for k in sorted({0, M // 4, M // 2, 3 * M // 4, M}):
        panel[f"deterministic_t{k}"] = np.full(ens.n, k)
    for qtl in (0.25, 0.5, 0.75):
        c = m.space.locate(np.quantile(ens.X[:, 0], qtl))
        hit = bins >= c
        hit[:, -1] = True
        panel[f"threshold_up_{qtl}"] = np.argmax(hit, axis=1)
        low = bins <= c
        low[:, -1] = True
        panel[f"threshold_down_{qtl}"] = np.argmax(low, axis=1)
    for name, alt in (("scaled_up", np.minimum(1.0, 1.25 * xi_hat)),
                      ("scaled_down", 0.75 * xi_hat),
                      ("power_up", np.sqrt(xi_hat)),
                      ("power_down", xi_hat ** 2),
                      ("delayed", np.concatenate([np.zeros((ens.n, 1)), xi_hat[:, :-1]], axis=1)),
                      ("advanced", np.concatenate([xi_hat[:, 1:], xi_hat[:, -1:]], axis=1))):
        alt = snap(alt)
        alt[:, -1] = 1.0
        panel[name] = generalized_inverse(alt, level)

    results = {}
    offenders = []
    ok_b = True
    for name, tau_alt in panel.items():
        alt = _stop_payoffs(fields, ens, np.asarray(tau_alt, dtype=np.intp), level, cfg.lam)
        gap, se = paired_gap(best, alt)
        results[name] = {"advantage": gap, "se": se}
        if gap < -(tol_sigma * se + cfg.mc_tol):
            ok_b = False
            offenders.append({"rule": name, "advantage": gap, "se": se})
    summary = {"form_gap": gap_a, "form_se": se_a, "form_ok": ok_a,
               "inverse_payoff": float(np.mean(best)), "panel_ok": ok_b,
               "worst_rule": min(results, key=lambda k: results[k]["advantage"]),
               "worst_advantage": min(r["advantage"] for r in results.values())}
    return Report("os_equivalence", bool(ok_a and ok_b), summary, offenders)

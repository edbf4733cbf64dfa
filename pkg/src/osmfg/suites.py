"""Property suites run by ``osmfg verify`` and the acceptance tests."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .bestresponse import brute_force_oracle, solve_best_response
from .consistency import gamma, mass_defect
from .dynamics import TimeGrid, simulate_paths
from .fictplay import prepare
from .measures import SpaceGrid
from .payoff import RewardFields, SolverConfig, paired_gap
from .policy import policy_order, policy_paths, random_policy, randomize
from .verify import (Report, verify_conditional_cdf, verify_consistency_identities,
                     verify_os_equivalence)

EXACT_TOL = 1e-12
LINEAR_TOL = 1e-10


def ramp_control(ens) -> np.ndarray:
    """Deterministic ``xi(t) = t / T`` on every path."""
    t = ens.grid.nodes
    return np.broadcast_to(t / t[-1], ens.X.shape).copy()


def reference_controls(model, ens, space, cfg: SolverConfig, seed: int = 0) -> dict:
    """Linear ramp, the best reply to the ramp's measures and a random feedback policy."""
    ramp = ramp_control(ens)
    m, mu = gamma(ens, space, ramp)
    pol, _ = solve_best_response(model, m, mu, cfg)
    rng = np.random.default_rng(seed)
    rand = random_policy(ens.grid, space, cfg.levels, rng)
    return {"ramp": ramp, "best_reply": policy_paths(ens.X, pol),
            "random_policy": policy_paths(ens.X, rand)}


def suite_mass_linearity(model, ens, space, cfg: SolverConfig, seed: int = 0) -> Report:
    controls = reference_controls(model, ens, space, cfg, seed)
    defects = {}
    for name, xi in controls.items():
        m, mu = gamma(ens, space, xi)
        defects[name] = mass_defect(m, mu)
    names = list(controls)
    lin = 0.0
    for a, b in zip(names, names[1:] + names[:1]):
        xa, xb = controls[a], controls[b]
        ma, mua = gamma(ens, space, xa)
        mb, mub = gamma(ens, space, xb)
        mc, muc = gamma(ens, space, 0.5 * (xa + xb))
        lin = max(lin, float(np.max(np.abs(mc.mass - ma.mix(mb, 0.5).mass))),
                  float(np.max(np.abs(muc.weights - mua.mix(mub, 0.5).weights))))
    worst = max(defects.values())
    passed = worst <= EXACT_TOL and lin <= LINEAR_TOL
    return Report("mass_linearity", passed,
                  {"max_mass_defect": worst, "max_linearity_gap": lin, **defects},
                  [] if passed else [{"mass_defects": defects, "linearity": lin}])


def ordered_pair(ens, space, cfg: SolverConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Pathwise ``lo <= hi``: the meet and join of two random feedback controls."""
    a = policy_paths(ens.X, random_policy(ens.grid, space, cfg.levels, rng))
    b = policy_paths(ens.X, random_policy(ens.grid, space, cfg.levels, rng))
    return np.minimum(a, b), np.maximum(a, b)


def suite_anti_monotonicity(model, ens, space, cfg: SolverConfig, pairs: int = 10,
                            seed: int = 0) -> Report:
    """Later stopping leaves more mass alive and a larger psi-pairing; best replies reverse order."""
    if not model.flags.supermodular or model.supermodular is None:
        return Report("anti_monotonicity", True, {"skipped": "model not supermodular"})
    rng = np.random.default_rng(seed)
    pair_fn = model.supermodular.pairing
    offenders = []
    worst_flow = worst_psi = -np.inf
    for k in range(pairs):
        lo, hi = ordered_pair(ens, space, cfg, rng)
        m_lo, mu_lo = gamma(ens, space, lo)
        m_hi, mu_hi = gamma(ens, space, hi)
        flow_gap = float(np.max(m_hi.mass - m_lo.mass))
        psi_gap = pair_fn(mu_hi) - pair_fn(mu_lo)
        worst_flow, worst_psi = max(worst_flow, flow_gap), max(worst_psi, psi_gap)
        br_lo = policy_paths(ens.X, solve_best_response(model, m_lo, mu_lo, cfg)[0])
        br_hi = policy_paths(ens.X, solve_best_response(model, m_hi, mu_hi, cfg)[0])
        # measures of the later control are larger, so its best reply stops later
        order = policy_order(br_lo, br_hi)
        br_ok = order.relation == "later" or order.tie
        if flow_gap > 0 or psi_gap > EXACT_TOL or not br_ok:
            offenders.append({"pair": k, "flow_gap": flow_gap, "psi_gap": psi_gap,
                              "best_reply_relation": order.relation})
    return Report("anti_monotonicity", not offenders,
                  {"pairs": pairs, "max_flow_violation": worst_flow,
                   "max_psi_violation": worst_psi}, offenders)


def suite_payoff_forms(model, ens, space, cfg: SolverConfig, lambdas=(0.0, 0.5, 1.0),
                       tol_sigma: float = 4.0, seed: int = 0) -> Report:
    """Randomized-stopping payoff against the singular one on the reference controls."""
    offenders, rows = [], {}
    for name, xi in reference_controls(model, ens, space, cfg, seed).items():
        m, mu = gamma(ens, space, xi)
        fields = RewardFields(model, ens, m, mu)
        stops = randomize(ens, seed, xi)
        for lam in lambdas:
            gap, se = paired_gap(fields.stopping_samples(stops, lam),
                                 fields.singular_samples(xi, lam))
            rows[f"{name}@{lam:g}"] = {"gap": gap, "se": se}
            if abs(gap) > tol_sigma * se + EXACT_TOL:
                offenders.append({"control": name, "lam": lam, "gap": gap, "se": se})
    worst = max(rows, key=lambda k: abs(rows[k]["gap"]) / max(rows[k]["se"], 1e-300))
    return Report("payoff_forms", not offenders,
                  {"cases": len(rows), "worst_case": worst, **rows[worst]}, offenders)


def oracle_instance(model, rng, steps: int = 2, bins: int = 3, levels: int = 5,
                    particles: int = 200):
    """A tiny random instance: random temperature, domain and population control."""
    lam = float(rng.choice([0.0, rng.uniform(0.05, 1.0)], p=[0.2, 0.8]))
    cfg = SolverConfig(lam=lam, steps=steps, bins=bins, levels=levels, particles=particles,
                       seed=int(rng.integers(1 << 31)))
    grid = TimeGrid(model.horizon, steps)
    ens = simulate_paths(model, grid, particles, cfg.seed)
    lo, hi = np.quantile(ens.X, [0.05, 0.95])
    half = max(0.5 * (hi - lo), 0.25) * rng.uniform(0.8, 1.5)
    mid = 0.5 * (lo + hi)
    if model.lower_bound is not None:
        mid = max(mid, model.lower_bound + half)
    space = SpaceGrid(mid - half, mid + half, bins)
    xi = policy_paths(ens.X, random_policy(grid, space, levels, rng))
    m, mu = gamma(ens, space, xi)
    return cfg, m, mu


def suite_dp_oracle(model, instances: int = 20, seed: int = 0) -> Report:
    rng = np.random.default_rng(seed)
    offenders = []
    worst = 0.0
    for k in range(instances):
        cfg, m, mu = oracle_instance(model, rng)
        pol, table = solve_best_response(model, m, mu, cfg)
        opol, ovals = brute_force_oracle(model, m, mu, cfg)
        gap = float(np.max(np.abs(table.V[0, :, 0] - ovals)))
        worst = max(worst, gap)
        same = bool(np.array_equal(pol.table, opol.table))
        if gap > EXACT_TOL or (cfg.lam > 0 and not same):
            offenders.append({"instance": k, "lam": cfg.lam, "value_gap": gap,
                              "policies_equal": same})
    return Report("dp_oracle", not offenders,
                  {"instances": instances, "max_value_gap": worst}, offenders)


def suite_bridge(model, ens, space, cfg: SolverConfig, tol_sigma: float = 4.0,
                 seed: int = 0) -> list[Report]:
    """Conditional CDF and consistency identities on each reference control, and the
    randomized-stopping equivalence at the ramp's measures."""
    cdf_reports, id_reports = [], []
    controls = reference_controls(model, ens, space, cfg, seed)
    for name, xi in controls.items():
        stops = randomize(ens, seed, xi)
        r = verify_conditional_cdf(ens, stops, tol_sigma, xi)
        cdf_reports.append(replace(r, name=f"{r.name}[{name}]"))
        r = verify_consistency_identities(ens, stops, space, xi, tol_sigma)
        id_reports.append(replace(r, name=f"{r.name}[{name}]"))
    out = cdf_reports + id_reports
    if cfg.lam > 0:
        m, mu = gamma(ens, space, controls["ramp"])
        out.append(verify_os_equivalence(model, ens, m, mu, cfg, controls["ramp"], seed,
                                         tol_sigma))
    return out


def run_suites(model, run) -> list[Report]:
    """Every suite for one model at the ``[verify]`` sample size."""
    v = run.verify
    cfg = replace(run.solver, particles=int(v["particles"]))
    tol_sigma = float(v["tol_sigma"])
    seed = cfg.seed
    ens, space = prepare(model, cfg)
    reports = [suite_mass_linearity(model, ens, space, cfg, seed),
               suite_anti_monotonicity(model, ens, space, cfg, seed=seed),
               suite_payoff_forms(model, ens, space, cfg, tol_sigma=tol_sigma, seed=seed),
               suite_dp_oracle(model, int(v["oracle_instances"]), seed)]
    reports += suite_bridge(model, ens, space, cfg, tol_sigma, seed)
    return reports

"""Command line front end: ``osmfg solve|sweep|verify|benchmark``."""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .fictplay import (FictitiousPlayError, MonotonicityError, fictitious_play, lambda_sweep,
                       noise_floor, prepare, supermodular_play)
from .measures import write_flow_csv, write_joint_csv
from .plots import write_chart
from .policy import PolicyError, read_policy_csv, write_policy_csv

log = logging.getLogger("osmfg")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_INTERNAL = 0, 2, 3, 4
CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


class InternalCheckError(RuntimeError):
    pass


def _run_dir(out: Path, run: cfgmod.RunConfig, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = out / f"{command}-{run.model_name}-{stamp}"
    path.mkdir(parents=True, exist_ok=False)
    (path / "config.toml").write_text(cfgmod.dump_toml(run.raw))
    (path / "seed.txt").write_text(f"{run.solver.seed}\n")
    (path / "input_hash.txt").write_text(run.content_hash() + "\n")
    return path


def _solve(run: cfgmod.RunConfig, model):
    cfg = run.solver
    if run.mode == "fictitious":
        return fictitious_play(model, cfg, run.init)
    return supermodular_play(model, cfg, run.mode)


def write_result(path: Path, res) -> None:
    write_policy_csv(res.policy, path / "policy.csv")
    write_flow_csv(res.m, path / "m.csv")
    write_joint_csv(res.mu, path / "mu.csv")
    res.diagnostics.write_csv(path / "diagnostics.csv")
    eps = res.diagnostics.column("epsilon")
    it = res.diagnostics.column("iter")
    write_chart(path / "epsilon.svg", {"exploitability": (it, np.abs(eps))},
                "Exploitability", "iteration", "|epsilon|", logy=True)
    summary = {"converged": res.converged, "stop_reason": res.stop_reason,
               "iterations": res.iterations, "final_epsilon": res.final_epsilon,
               "seed": res.seed, "config": res.config.to_dict(),
               "mean_control": [float(v) for v in res.mean_control]}
    (path / "result.json").write_text(json.dumps(summary, indent=2) + "\n")


def cmd_solve(args) -> int:
    run = cfgmod.load(args.config, args.seed)
    model = run.build_model()
    path = _run_dir(Path(args.out), run, "solve")
    res = _solve(run, model)
    write_result(path, res)
    log.info("solve: %s after %d iterations, epsilon %.3e -> %s", res.stop_reason,
             res.iterations, res.final_epsilon, path)
    print(path)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_sweep(args) -> int:
    run = cfgmod.load(args.config, args.seed)
    model = run.build_model()
    path = _run_dir(Path(args.out), run, "sweep")
    cfg = replace(run.solver, fp_tol=float(run.sweep["fp_tol"]), n_max=int(run.sweep["n_max"]))
    ens, space = prepare(model, cfg)
    points, results = lambda_sweep(model, cfg, run.sweep["lambdas"], init=run.init, ens=ens,
                                   space=space)
    floor = noise_floor(cfg, ens, space)
    with open(path / "sweep.csv", "w") as fh:
        fh.write("lambda,d1_mu,dM_m,residual0,epsilon,iterations,converged\n")
        for p in points:
            fh.write(f"{p.lam!r},{p.d1_mu!r},{p.dM_m!r},{p.residual0!r},{p.epsilon!r},"
                     f"{p.iterations},{int(p.converged)}\n")
    lam = np.array([p.lam for p in points])
    write_chart(path / "sweep.svg",
                {"d1(mu, mu0)": (lam, [p.d1_mu for p in points]),
                 "dM(m, m0)": (lam, [p.dM_m for p in points])},
                "Distance to the zero-temperature equilibrium", "lambda", "distance")
    d = [p.d1_mu for p in points]
    monotone = all(b <= a + floor for a, b in zip(d, d[1:]))
    (path / "sweep.json").write_text(json.dumps(
        {"noise_floor": floor, "monotone_within_floor": monotone,
         "all_converged": all(p.converged for p in points)}, indent=2) + "\n")
    print(path)
    return EXIT_OK if all(p.converged for p in points) else EXIT_NONCONVERGED


def cmd_verify(args) -> int:
    from .suites import run_suites

    run = cfgmod.load(args.config, args.seed)
    model = run.build_model()
    path = _run_dir(Path(args.out), run, "verify")
    if run.verify.get("policy"):
        pol_path = Path(run.verify["policy"])
        if not pol_path.is_absolute():
            pol_path = Path(args.config).resolve().parent / pol_path
        try:
            read_policy_csv(pol_path)
        except (PolicyError, ValueError, OSError) as exc:
            (path / "verify.json").write_text(json.dumps(
                {"passed": False, "first_failure": "policy_file", "error": str(exc)}, indent=2))
            log.error("policy file failed validation: %s", exc)
            return EXIT_INTERNAL
    reports = run_suites(model, run)
    payload = {"passed": all(r.passed for r in reports),
               "suites": [json.loads(r.to_json()) for r in reports]}
    failing = [r.name for r in reports if not r.passed]
    payload["first_failure"] = failing[0] if failing else None
    (path / "verify.json").write_text(json.dumps(payload, indent=2) + "\n")
    (path / "verify.txt").write_text("\n".join(r.to_text() for r in reports) + "\n")
    for r in reports:
        print(r.to_text().splitlines()[0])
    print(path)
    if failing:
        log.error("first failing suite: %s", failing[0])
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_benchmark(args) -> int:
    configs = sorted(CONFIG_DIR.glob("*.toml"))
    if not configs:
        raise cfgmod.ConfigError(f"no reference configs under {CONFIG_DIR}")
    worst = EXIT_OK
    for c in configs:
        run = cfgmod.load(c, args.seed)
        if run.model_name not in ("monotone", "bank_run", "gbm", "free"):
            continue
        log.info("benchmark %s", c.name)
        ns = argparse.Namespace(config=str(c), out=args.out, seed=args.seed)
        code = cmd_solve(ns)
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="osmfg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (("solve", cmd_solve, True), ("sweep", cmd_sweep, True),
                                   ("verify", cmd_verify, True),
                                   ("benchmark", cmd_benchmark, False)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=needs_config, help="TOML run file")
        sp.add_argument("--out", default="runs", help="directory for run outputs")
        sp.add_argument("--seed", type=int, default=None, help="override [solver] seed")
        sp.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (default: all cores)")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    from threadpoolctl import threadpool_limits

    threads = args.threads or os.cpu_count() or 1
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except cfgmod.ConfigError as exc:
        log.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MonotonicityError, PolicyError, AssertionError, InternalCheckError,
            FictitiousPlayError) as exc:
        print(f"internal check failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

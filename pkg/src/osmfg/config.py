"""Run configuration: TOML file with [model], [grids], [solver], [sweep], [verify] sections."""
from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fictplay import valid_temperatures
from .model import BENCHMARKS, ModelError, build_model
from .payoff import SolverConfig


class ConfigError(ValueError):
    pass


# (section, key, default, description); the single source for validation and docs
OPTIONS = [
    ("model", "name", "monotone", "benchmark: " + ", ".join(sorted(BENCHMARKS))),
    ("model", "params", {}, "keyword parameters of the benchmark factory (numbers or strings)"),
    ("grids", "steps", 50, "time steps M on [0, T]"),
    ("grids", "bins", 200, "space bins J on the truncated domain"),
    ("grids", "levels", 33, "q-levels Q on [0, 1]"),
    ("grids", "space_lo", None, "lower end of the space domain (auto when omitted)"),
    ("grids", "space_hi", None, "upper end of the space domain (auto when omitted)"),
    ("solver", "lam", 0.5, "entropy temperature"),
    ("solver", "particles", 20000, "particles N in the common noise panel"),
    ("solver", "seed", 1, "seed of the noise panel and the uniform draws"),
    ("solver", "fp_tol", 1e-2, "stop once exploitability falls below this"),
    ("solver", "mc_tol", 2e-3, "Monte Carlo allowance for sign and cross-form checks"),
    ("solver", "n_max", 200, "maximum number of fictitious-play iterations"),
    ("solver", "tie_tol", 1e-12, "value tolerance for preferring the earlier stop"),
    ("solver", "mode", "fictitious", "fictitious | earliest | latest"),
    ("solver", "init", "never", "initial control for plain fictitious play: never | immediate"),
    ("sweep", "lambdas", [1.0, 0.5, 0.1, 0.02, 0.0], "strictly decreasing temperatures ending at 0 (or a single value)"),
    ("sweep", "fp_tol", 1e-3, "exploitability tolerance used at every temperature"),
    ("sweep", "n_max", 200, "iteration cap per temperature"),
    ("verify", "particles", 100000, "particles for the statistical checks"),
    ("verify", "tol_sigma", 4.0, "width of the error bars in standard errors"),
    ("verify", "oracle_instances", 20, "random tiny instances for the DP oracle check"),
    ("verify", "policy", None, "optional policy CSV whose invariants are checked"),
]
SECTIONS = ("model", "grids", "solver", "sweep", "verify")


@dataclass
class RunConfig:
    raw: dict
    model_name: str
    model_params: dict
    solver: SolverConfig
    mode: str
    init: str
    sweep: dict
    verify: dict
    source_bytes: bytes = field(default=b"", repr=False)

    def build_model(self):
        try:
            return build_model(self.model_name, **self.model_params)
        except (ModelError, TypeError) as exc:
            raise ConfigError(f"[model]: {exc}") from exc

    def content_hash(self) -> str:
        """Git-style blob hash of the config bytes."""
        data = self.source_bytes
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def defaults() -> dict:
    out = {s: {} for s in SECTIONS}
    for sec, key, val, _ in OPTIONS:
        out[sec][key] = val
    return out


def parse(data: dict, source: bytes = b"", seed: int | None = None) -> RunConfig:
    known = {(s, k) for s, k, _, _ in OPTIONS}
    for sec, body in data.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        for key in body:
            if (sec, key) not in known:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    merged = defaults()
    for sec, body in data.items():
        merged[sec].update(body)
    if seed is not None:
        merged["solver"]["seed"] = int(seed)
    g, s = merged["grids"], merged["solver"]
    if merged["model"]["name"] not in BENCHMARKS:
        raise ConfigError(f"unknown model {merged['model']['name']!r}")
    if s["mode"] not in ("fictitious", "earliest", "latest"):
        raise ConfigError(f"unknown solver mode {s['mode']!r}")
    if s["init"] not in ("never", "immediate"):
        raise ConfigError(f"unknown init {s['init']!r}")
    try:
        solver = SolverConfig(lam=float(s["lam"]), steps=int(g["steps"]), bins=int(g["bins"]),
                              levels=int(g["levels"]), particles=int(s["particles"]),
                              seed=int(s["seed"]), fp_tol=float(s["fp_tol"]),
                              mc_tol=float(s["mc_tol"]), n_max=int(s["n_max"]),
                              tie_tol=float(s["tie_tol"]),
                              space_lo=None if g["space_lo"] is None else float(g["space_lo"]),
                              space_hi=None if g["space_hi"] is None else float(g["space_hi"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    try:
        lam = [float(v) for v in merged["sweep"]["lambdas"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[sweep] lambdas: {exc}") from exc
    if not valid_temperatures(lam):
        raise ConfigError("[sweep] lambdas must strictly decrease and end at 0")
    return RunConfig(merged, merged["model"]["name"], dict(merged["model"]["params"]), solver,
                     s["mode"], s["init"], merged["sweep"], merged["verify"], source)


def load(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        source = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = tomllib.loads(source.decode())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse(data, source, seed)


def dump_toml(data: dict) -> str:
    """Minimal TOML writer for the echo of a merged config."""
    lines = []
    for sec in SECTIONS:
        body = data.get(sec, {})
        lines.append(f"[{sec}]")
        nested = []
        for key, val in body.items():
            if isinstance(val, dict):
                nested.append((key, val))
            elif val is not None:
                lines.append(f"{key} = {_toml_value(val)}")
        for key, val in nested:
            lines.append(f"[{sec}.{key}]")
            lines += [f"{k} = {_toml_value(v)}" for k, v in val.items()]
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r}")


def config_reference() -> str:
    out = ["# Configuration reference", "",
           "Run files are TOML. Every key is optional; omitted keys take the defaults below.",
           "Unknown sections or keys are rejected with exit code 2.", ""]
    for sec in SECTIONS:
        out += [f"## [{sec}]", "", "| key | default | meaning |", "|---|---|---|"]
        for s, key, val, doc in OPTIONS:
            if s == sec:
                shown = "unset" if val is None else (_toml_value(val) if val != {} else "{}")
                out.append(f"| `{key}` | `{shown}` | {doc} |")
        out.append("")
    return "\n".join(out)


if __name__ == "__main__":
    print(config_reference(), end="")

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from osmfg import config as cfgmod
from osmfg.cli import main
from osmfg.fictplay import fictitious_play

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden" / "monotone_diagnostics.csv"

SMALL = """
[model]
name = "{model}"
[grids]
steps = 10
bins = 40
levels = 9
[solver]
particles = 2000
seed = 3
{extra}
"""


def write_config(tmp_path, model="free", extra="", name="run.toml"):
    path = tmp_path / name
    path.write_text(SMALL.format(model=model, extra=extra))
    return path


def run_cli(*argv):
    return main(list(argv))


def only_run(out: Path) -> Path:
    (run,) = [p for p in out.iterdir() if p.is_dir()]
    return run


def test_parse_defaults_and_unknown_keys():
    run = cfgmod.parse({})
    assert run.model_name == "monotone" and run.solver.lam == 0.5
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse({"solver": {"lamda": 1.0}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse({"extra": {}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse({"solver": {"mode": "sideways"}})
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse({"sweep": {"lambdas": [0.5, 1.0, 0.0]}})
    assert cfgmod.parse({"sweep": {"lambdas": [0.3]}}).sweep["lambdas"] == [0.3]


def test_dump_round_trip():
    run = cfgmod.load(ROOT / "configs" / "bank_run.toml")
    again = cfgmod.parse(cfgmod.tomllib.loads(cfgmod.dump_toml(run.raw)))
    assert again.raw == run.raw and again.solver == run.solver


def test_seed_override_and_hash(tmp_path):
    path = write_config(tmp_path)
    a, b = cfgmod.load(path), cfgmod.load(path, seed=11)
    assert b.solver.seed == 11 and a.content_hash() == b.content_hash()
    assert len(a.content_hash()) == 40


def test_config_reference_lists_every_key():
    text = cfgmod.config_reference()
    for sec, key, _, _ in cfgmod.OPTIONS:
        assert f"`{key}`" in text and f"[{sec}]" in text


def test_reference_configs_parse():
    for path in sorted((ROOT / "configs").glob("*.toml")):
        cfgmod.load(path).build_model()


def test_solve_free_converges_in_one_step(tmp_path):
    out = tmp_path / "runs"
    assert run_cli("solve", "--config", str(write_config(tmp_path)), "--out", str(out)) == 0
    run = only_run(out)
    result = json.loads((run / "result.json").read_text())
    assert result["converged"] and result["iterations"] == 1
    for name in ("policy.csv", "m.csv", "mu.csv", "diagnostics.csv", "epsilon.svg",
                 "config.toml", "seed.txt", "input_hash.txt"):
        assert (run / name).stat().st_size > 0
    assert (run / "seed.txt").read_text().strip() == "3"


def test_iteration_cap_exits_3(tmp_path):
    path = write_config(tmp_path, "monotone", "n_max = 0")
    assert run_cli("solve", "--config", str(path), "--out", str(tmp_path / "o")) == 3


@pytest.mark.parametrize("body", ["[solver]\nlam = 'hot'\n", "[model]\nname = 'nope'\n",
                                  "[grids\n", "[solver]\nbogus = 1\n"])
def test_bad_config_exits_2(tmp_path, body):
    path = tmp_path / "bad.toml"
    path.write_text(body)
    assert run_cli("solve", "--config", str(path), "--out", str(tmp_path / "o")) == 2


def test_missing_config_exits_2(tmp_path):
    assert run_cli("solve", "--config", str(tmp_path / "none.toml")) == 2


def test_verify_tiny_oracle(tmp_path):
    out = tmp_path / "o"
    assert run_cli("verify", "--config", str(ROOT / "configs" / "tiny_oracle.toml"),
                   "--out", str(out)) == 0
    report = json.loads((only_run(out) / "verify.json").read_text())
    assert report["passed"] and report["first_failure"] is None
    names = [s["name"] for s in report["suites"]]
    assert "dp_oracle" in names and "mass_linearity" in names


def test_verify_rejects_corrupted_policy(tmp_path):
    bad = tmp_path / "policy.csv"
    bad.write_text("t,x_lo,x_hi,q_in,q_out\n0.0,0.0,1.0,0.5,0.2\n")
    path = write_config(tmp_path, extra='[verify]\npolicy = "policy.csv"')
    out = tmp_path / "o"
    assert run_cli("verify", "--config", str(path), "--out", str(out)) == 4
    report = json.loads((only_run(out) / "verify.json").read_text())
    assert report["first_failure"] == "policy_file"


@pytest.mark.parametrize("lams", ["[0.0]", "[0.4]"])
def test_degenerate_sweeps(tmp_path, lams):
    path = write_config(tmp_path, extra=f"[sweep]\nlambdas = {lams}")
    out = tmp_path / "o"
    assert run_cli("sweep", "--config", str(path), "--out", str(out)) == 0
    rows = list(csv.DictReader(open(only_run(out) / "sweep.csv")))
    assert len(rows) == 1 and float(rows[0]["d1_mu"]) == 0.0
    assert json.loads((only_run(out) / "sweep.json").read_text())["monotone_within_floor"]


def _strip_seconds(text: str) -> list[str]:
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


def test_runs_are_bit_identical(tmp_path):
    path = write_config(tmp_path, "monotone", "fp_tol = 1e-3")
    dirs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        run_cli("solve", "--config", str(path), "--out", str(out), "--threads", str(1 + k))
        dirs.append(only_run(out))
    a, b = dirs
    for name in ("policy.csv", "m.csv", "mu.csv", "result.json", "config.toml",
                 "input_hash.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert _strip_seconds((a / "diagnostics.csv").read_text()) == \
        _strip_seconds((b / "diagnostics.csv").read_text())


def test_golden_monotone_diagnostics(tmp_path):
    run = cfgmod.load(ROOT / "configs" / "monotone.toml")
    res = fictitious_play(run.build_model(), run.solver, run.init)
    res.diagnostics.write_csv(tmp_path / "d.csv", include_time=False)
    got = np.genfromtxt(tmp_path / "d.csv", delimiter=",", names=True)
    want = np.genfromtxt(GOLDEN, delimiter=",", names=True)
    assert got.dtype.names == want.dtype.names and got.shape == want.shape
    for col in want.dtype.names:
        np.testing.assert_allclose(got[col], want[col], rtol=1e-9, atol=1e-12,
                                   equal_nan=True, err_msg=col)

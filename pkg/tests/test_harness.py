import glob
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.cli import EXIT_CONFIG, EXIT_GUARD, EXIT_TABLE, main
from rwre.config import ConfigError, ExperimentConfig, parse_config
from rwre.harness import run_experiment, summarize, summarize_table
from rwre.results import ResultTable, TableError, fmt_value, read_table, replay_check

CONFIGS = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "..", "configs", "*.cfg")))

VELOCITY = """\
kind = velocity
seed = 3
law.kind = drift-perturbed
law.d = 2
law.delta = 0.2
run.n = 200
run.trials = 10
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.parametrize("path", CONFIGS, ids=os.path.basename)
def test_example_configs_round_trip(path):
    cfg = parse_config(open(path).read())
    again = parse_config(cfg.to_text())
    assert again == cfg and again.to_text() == cfg.to_text()


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=1e-6, max_value=0.2),
       st.integers(0, 2 ** 64 - 1), st.lists(st.integers(1, 10 ** 6), min_size=1, max_size=5))
def test_round_trip_is_lossless(delta, seed, Ls):
    cfg = ExperimentConfig("condt", seed, "", {"kind": "drift-perturbed", "d": 2, "delta": delta},
                           {"L": tuple(Ls), "trials": 5})
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,line,needle", [
    (VELOCITY + "run.bogus = 1\n", 8, "run.bogus"),
    (VELOCITY.replace("run.n = 200", "run.n = ten"), 6, "run.n"),
    (VELOCITY + "seed = 4\n", 8, "duplicate"),
    ("kind = velocity\nnot a pair\n", 2, "key = value"),
    ("kind = walkabout\n", 1, "walkabout"),
])
def test_config_errors_name_line_and_key(text, line, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == line and needle in str(exc.value)


def test_missing_keys_and_bad_laws():
    with pytest.raises(ConfigError, match="run.trials"):
        parse_config(VELOCITY.replace("run.trials = 10\n", ""))
    with pytest.raises(ConfigError, match="invalid law"):
        parse_config(VELOCITY.replace("0.2", "0.9"))
    with pytest.raises(ConfigError, match="law.alpha"):
        parse_config(VELOCITY + "law.alpha = 1, 1, 1, 1\n")


def test_velocity_smoke_and_determinism(tmp_path):
    cfg = parse_config(VELOCITY)
    a = run_experiment(cfg, out=str(tmp_path / "a.csv"))
    run_experiment(cfg, threads=4, out=str(tmp_path / "b.csv"))
    assert a.columns == ["trial", "t", "x1", "x2", "v1", "v2"] and len(a.rows) == 10
    assert replay_check(tmp_path / "a.csv", tmp_path / "b.csv")
    text = (tmp_path / "a.csv").read_text()
    assert text.startswith("# tool: rwre") and f"# config_sha1: {cfg.content_hash()}" in text
    back = read_table(tmp_path / "a.csv")
    assert np.allclose(back.column("v1"), a.column("v1"))


def test_cli_run_seed_override_and_stdout(tmp_path, capsys):
    cfg = write(tmp_path, "v.cfg", VELOCITY)
    out1, out2 = str(tmp_path / "1.csv"), str(tmp_path / "2.csv")
    assert main(["velocity", "--config", cfg, "--out", out1]) == 0
    assert main(["velocity", "--config", cfg, "--out", out2, "--seed", "4", "--threads", "3"]) == 0
    assert not replay_check(out1, out2)
    assert "# config: seed = 4" in open(out2).read()
    assert main(["replay-check", out1, out1]) == 0 and main(["replay-check", out1, out2]) == 1
    capsys.readouterr()
    assert main(["velocity", "--config", cfg]) == 0
    assert capsys.readouterr().out == open(out1).read()


def test_cli_errors(tmp_path, capsys):
    bad = write(tmp_path, "bad.cfg", VELOCITY + "run.unknown = 3\n")
    assert main(["velocity", "--config", bad]) == EXIT_CONFIG
    assert "line 8" in capsys.readouterr().err
    good = write(tmp_path, "v.cfg", VELOCITY)
    assert main(["condt", "--config", good]) == EXIT_CONFIG
    huge = write(tmp_path, "huge.cfg", "kind = fn_tail\nlaw.kind = uniform\nlaw.d = 2\n"
                 "run.n = 1000000\nrun.env_count = 1\n")
    assert main(["fn_tail", "--config", huge]) == EXIT_GUARD
    assert "memory_budget" in capsys.readouterr().err
    empty = write(tmp_path, "e.csv", "# kind: velocity\ntrial,v1\n")
    assert main(["summarize", empty]) == EXIT_TABLE
    with pytest.raises(SystemExit):
        main(["velocity"])


def test_summarize_recovers_synthetic_slope(tmp_path):
    x = np.linspace(0, 10, 50)
    path = str(tmp_path / "s.csv")
    covered = 0
    for seed in range(40):
        rng = np.random.default_rng(seed)
        ResultTable(["x", "y"], [[a, 2 * a + rng.normal(0, 0.3)] for a in x]).write(path)
        res = summarize(path)
        covered += res["fit_slope_lo"] <= 2 <= res["fit_slope_hi"]
        assert abs(res["fit_slope"] - 2) < 0.06 and res["fit_r2"] > 0.99
    # nominal 95% coverage; 33 of 40 is far in the binomial lower tail
    assert covered >= 33


def test_table_validation(tmp_path):
    with pytest.raises(TableError):
        ResultTable(["a", "a"], [])
    with pytest.raises(TableError):
        summarize_table(ResultTable(["x", "y"], []))
    bad = write(tmp_path, "bad.csv", "a,b\n1,2\n3\n")
    with pytest.raises(TableError):
        read_table(bad)
    with pytest.raises(TableError):
        read_table(write(tmp_path, "txt.csv", "a\nxyz\n"))


def test_float_format_is_shortest_round_trip():
    for v in (0.1, 1 / 3, 1e-300, 2.5e20, -0.0):
        assert float(fmt_value(v)) == v
    assert fmt_value(0.1) == "0.1" and fmt_value(np.int64(3)) == "3" and fmt_value(True) == "1"
    assert fmt_value(float("nan")) == "nan"


@pytest.mark.parametrize("kind_cfg", [
    "kind = torus\nlaw.kind = uniform\nlaw.d = 2\nrun.L = 3\nrun.n = 1, 5\n",
    "kind = regen\nlaw.kind = drift-perturbed\nlaw.d = 2\nlaw.delta = 0.2\nrun.n = 300\n"
    "run.trials = 3\nrun.oracle = true\n",
    "kind = exit_stats\nlaw.kind = drift-perturbed\nlaw.d = 2\nlaw.delta = 0.2\nrun.N = 4\n"
    "run.trials = 50\nrun.cell_size = 2\n",
    "kind = fn_tail\nlaw.kind = drift-perturbed\nlaw.d = 2\nlaw.delta = 0.2\nrun.n = 4\n"
    "run.env_count = 5\nrun.trap_L = 2\nrun.u_grid = 0.5, 1.0\n",
])
def test_every_kind_produces_a_summarizable_table(tmp_path, kind_cfg):
    cfg = parse_config(kind_cfg)
    path = str(tmp_path / "t.csv")
    run_experiment(cfg, out=path)
    assert summarize(path)

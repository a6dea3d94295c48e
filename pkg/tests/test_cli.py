import csv
import os

import pytest
from conftest import CONFIGS

from stockloan.cli import ConfigError, load_config, parse_overrides, run

QUICK = os.path.join(CONFIGS, "quick.ini")


def only_output(d):
    files = sorted(os.listdir(d))
    assert len(files) == 1
    return os.path.join(d, files[0])


def test_classify_case0(tmp_path, capsys):
    assert run(["classify", "-c", os.path.join(CONFIGS, "case0.ini"), "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("case=Case0")
    assert "case0-empty" in out
    path = only_output(tmp_path)
    assert os.path.basename(path).startswith("classify-")
    with open(path) as fh:
        header = fh.readline()
    assert header.startswith("# stockloan 0.1.0 classify config=")


@pytest.mark.parametrize("sub", ["simulate", "solve1d", "solve2d", "boundaries", "oracle"])
def test_subcommands_run_on_quick_config(tmp_path, sub):
    assert run([sub, "-c", QUICK, "--out-dir", str(tmp_path)]) == 0
    path = only_output(tmp_path)
    digest = os.path.basename(path)[len(sub) + 1:-4]
    with open(path) as fh:
        assert fh.readline().strip().endswith(f"config={digest}")


def test_check_passes_on_quick_config(tmp_path, capsys):
    assert run(["check", "-c", QUICK, "--out-dir", str(tmp_path)]) == 0
    with open(only_output(tmp_path)) as fh:
        fh.readline()
        rows = list(csv.DictReader(fh))
    assert rows and all(r["pass"] == "true" for r in rows)
    assert {"bounds", "monotone-convex", "lipschitz", "regions", "face-consistency", "oracle"} <= {
        r["check"] for r in rows}


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["simulate", "-c", QUICK, "--out-dir", str(d), "--seed", "3"]) == 0
        assert run(["solve2d", "-c", QUICK, "--out-dir", str(d)]) == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_hash_tracks_config_not_output_dir():
    base = load_config(QUICK)
    moved = load_config(QUICK, parse_overrides(["--output.dir", "elsewhere"]))
    other = load_config(QUICK, parse_overrides(["--seed", "9"]))
    assert base.digest == moved.digest
    assert base.digest != other.digest


def test_override_forms():
    cfg = load_config(QUICK, parse_overrides(["--nx", "64", "--mc.paths=123", "--solver.eps", "1e-2,1e-3"]))
    assert cfg.grid.nx == 64
    assert cfg.mc.paths == 123
    assert cfg.solver.eps == (1e-2, 1e-3)
    assert cfg.model.a == 0.15


def test_unknown_override_is_config_error(tmp_path, capsys):
    assert run(["classify", "--out-dir", str(tmp_path), "--bogus", "1"]) == 1
    assert "config error" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        parse_overrides(["--nx"])


def test_invalid_model_is_config_error(tmp_path):
    assert run(["classify", "-c", QUICK, "--out-dir", str(tmp_path), "--model.gamma", "0.01"]) == 1


def test_grid_error_is_config_error(tmp_path):
    assert run(["solve1d", "-c", QUICK, "--out-dir", str(tmp_path), "--grid.xmax", "150"]) == 1


def test_solver_error_exit_code(tmp_path, capsys):
    assert run(["oracle", "-c", QUICK, "--out-dir", str(tmp_path), "--mc.paths", "5"]) == 2
    assert "solver error" in capsys.readouterr().err


def test_check_failure_exit_code(tmp_path):
    # a negative tolerance cannot be met by any surface
    assert run(["check", "-c", QUICK, "--out-dir", str(tmp_path), "--tol", "-1"]) == 3


def test_emit_figure_case2_slab(tmp_path):
    cfg = os.path.join(CONFIGS, "case2.ini")
    assert run(["emit-figure", "-c", cfg, "--out-dir", str(tmp_path),
                "--grid.nx", "80", "--grid.npi", "21", "--grid.nt", "200"]) == 0
    with open(only_output(tmp_path)) as fh:
        fh.readline()
        rows = [r for r in csv.DictReader(fh) if r["section"] == "pi-section" and r["x1"]]
    assert rows
    for r in rows:
        assert 100.0 < float(r["x1"]) <= float(r["x2"]) < 200.0

import csv
import json
import pathlib
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdelab import io
from fdelab.cli import run_cli
from fdelab.errors import FieldFormatError, GridMismatchError
from fdelab.geometry import Field, build_grid


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 40), st.floats(-1e6, 1e6), st.integers(0, 2**32 - 1))
def test_field_roundtrip(n, t, seed):
    g = build_grid("radial", a=0.5, b=2.0, n=n, N=2)
    f = Field(g, np.random.default_rng(seed).standard_normal(g.size))
    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "f.fde"
        io.write_field(path, f, t)
        back, t2 = io.read_field(path)
    assert back.grid.spec == g.spec
    assert np.array_equal(back.values, f.values) and t2 == t


def test_field_errors(tmp_path):
    g = build_grid("interval", n=16)
    path = io.write_field(tmp_path / "a.fde", g.zeros() + 1.0)
    with pytest.raises(GridMismatchError):
        io.read_field(path, build_grid("interval", n=17))
    data = path.read_bytes()
    (tmp_path / "bad.fde").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FieldFormatError):
        io.read_field(tmp_path / "bad.fde")
    (tmp_path / "short.fde").write_bytes(data[:-8])
    with pytest.raises(FieldFormatError):
        io.read_field(tmp_path / "short.fde")


def test_json_nonfinite(tmp_path):
    io.write_json(tmp_path / "x.json", {"a": np.float64(np.inf), "b": np.arange(2)})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": "inf", "b": [0, 1]}


def test_cli_evolve(tmp_path):
    out = tmp_path / "run"
    assert run_cli(["evolve", "--m", "3", "--domain", "interval", "--n", "64", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["extinction"]["fit_exponent"] == pytest.approx(1.0, rel=0.05)
    manifest = json.loads((out / "manifest.json").read_text())
    assert "wall_time_s" in manifest and manifest["config"]["m"] == 3.0
    with open(out / "trajectory.csv") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == io.TRAJECTORY_COLUMNS
    u, _ = io.read_field(out / "initial.fde")
    assert u.grid.spec.n == 64


def test_cli_summary_deterministic(tmp_path):
    args = ["profile", "--m", "3", "--domain", "interval", "--n", "64"]
    assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
    assert run_cli(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_cli_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[params]\nm = 4\nN = 3\n[grid]\ndomain = ball\nn = 64\n")
    out = tmp_path / "o"
    assert run_cli(["profile", "--config", str(cfg), "--n", "48", "--method", "shooting",
                    "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["grid"]["n"] == 48 and s["params"] == {"m": 4.0, "N": 3}
    assert s["method"] == "shooting"


@pytest.mark.parametrize("argv", [
    ["evolve", "--domain", "interval"],
    ["evolve", "--m", "1.5", "--domain", "interval"],
    ["evolve", "--m", "3", "--domain", "interval", "--N", "2"],
    ["bogus"],
    ["evolve", "--m", "3", "--domain", "square"],
])
def test_cli_config_errors(argv, tmp_path, capsys):
    assert run_cli(argv + ["--out", str(tmp_path)]) == 2


def test_cli_bad_config_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[params]\nm = 3\nbogus = 1\n")
    assert run_cli(["evolve", "--config", str(cfg), "--domain", "interval"]) == 2
    assert run_cli(["evolve", "--config", str(tmp_path / "missing.ini")]) == 2


def test_cli_invariants(tmp_path):
    out = tmp_path / "inv"
    assert run_cli(["invariants", "--m", "3", "--domain", "interval", "--n", "48",
                    "--samples", "10", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["all_passed"] is True


def test_cli_rescaled(tmp_path):
    out = tmp_path / "r"
    assert run_cli(["rescaled", "--m", "3", "--domain", "interval", "--n", "48",
                    "--s-horizon", "3", "--out", str(out)]) == 0
    with open(out / "rescaled.csv") as fh:
        assert tuple(next(csv.reader(fh))) == io.RESCALED_COLUMNS

import re

import numpy as np
import pytest

from hyran.cli import main
from hyran.config import load_config, merge
from hyran.errors import InvalidArgument
from hyran.harness import CurveStats
from hyran.plotting import downsample_index, emit_plot


def curve(name, values, std=None, hyper=1.0):
    values = np.asarray(values, float)
    return CurveStats(name, "alpha", hyper, values, np.zeros_like(values) if std is None else np.asarray(std), 3)


# --- plotting ---


def test_plot_rejects_empty(tmp_path):
    with pytest.raises(InvalidArgument):
        emit_plot([], tmp_path / "x.svg")


def test_plot_is_byte_identical(tmp_path):
    cs = [curve("a", np.cumsum(np.ones(50)), np.ones(50)), curve("b", np.arange(50.0))]
    a = emit_plot(cs, tmp_path / "a.svg").read_bytes()
    b = emit_plot(cs, tmp_path / "b.svg").read_bytes()
    assert a == b
    assert a.startswith(b"<?xml")


def test_plot_two_curves_two_styles(tmp_path):
    svg = emit_plot([curve("first", np.arange(10.0)), curve("second", np.arange(10.0) * 2)], tmp_path / "p.svg")
    text = svg.read_text()
    assert "first (alpha=1)" in text and "second (alpha=1)" in text
    assert re.search(r"stroke-dasharray", text)  # the second line is dashed, the first solid


def test_flat_zero_curve(tmp_path):
    path = emit_plot([curve("z", np.zeros(20))], tmp_path / "z.svg")
    assert path.stat().st_size > 0


def test_downsample_bounds():
    idx = downsample_index(30000)
    assert len(idx) <= 1000 and idx[0] == 0 and idx[-1] == 29999
    np.testing.assert_array_equal(downsample_index(10), np.arange(10))


# --- config ---


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[experiment]\nT = 40\nreps = 2\nalgos = hyran, lints\n[environment]\nd = 3\nN = 4\n"
                   "[hyran]\np = 0.8\n[grid]\nhyran = 0.5, 0.8\n")
    values = load_config(cfg)
    assert values["T"] == 40 and values["algos"] == ["hyran", "lints"] and values["grid"]["hyran"] == [0.5, 0.8]
    merged = merge(values, {"T": 10, "d": None})
    assert merged["T"] == 10 and merged["d"] == 3


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nhorizon = 3\n")
    with pytest.raises(InvalidArgument):
        load_config(cfg)


# --- CLI ---


def test_run_writes_outputs(tmp_path, capsys):
    code = main(["run", "--algo", "hyran", "--algo", "lints", "--T", "50", "--reps", "2", "--d", "3", "--N", "4",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    for name in ("run_regret.csv", "run_aggregate.csv", "run_best.csv", "run_regret.svg"):
        assert (tmp_path / name).exists()
    assert "best:" in capsys.readouterr().out


def test_run_is_byte_deterministic(tmp_path):
    args = ["run", "--algo", "hyran", "--T", "40", "--reps", "2", "--d", "3", "--N", "4", "--seed", "5"]
    main(args + ["--out-dir", str(tmp_path / "a")])
    main(args + ["--out-dir", str(tmp_path / "b"), "--workers", "2"])
    for name in ("run_regret.csv", "run_aggregate.csv", "run_best.csv", "run_regret.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_flag_wins(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nT = 80\nreps = 2\n[environment]\nd = 3\nN = 4\n")
    assert main(["run", "--config", str(cfg), "--T", "20", "--out-dir", str(tmp_path), "--no-plot"]) == 0
    rows = (tmp_path / "run_regret.csv").read_text().splitlines()
    assert len(rows) - 1 == 20 * 2


def test_grid_command(tmp_path):
    code = main(["grid", "--grid", "hyran=0.5,0.8", "--grid", "linucb=0.1", "--T", "30", "--reps", "2",
                 "--d", "3", "--N", "4", "--out-dir", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "grid_best.svg").exists()
    rows = (tmp_path / "grid_regret.csv").read_text().splitlines()
    assert len(rows) - 1 == 3 * 2 * 30


def test_grid_needs_a_grid(tmp_path):
    assert main(["grid", "--out-dir", str(tmp_path)]) == 2


def test_diagnose_exit_codes(tmp_path):
    assert main(["diagnose", "--check", "psi_size", "--trials", "30", "--T", "300", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "psi_size_summary.txt").exists()
    # p = 0.99 is already nearly collapsed, so the spread ratio against p = 0.999 stays above 10%
    assert main(["diagnose", "--check", "estimator_cloud", "--p", "0.99", "--T", "200", "--M", "50", "--no-plot",
                 "--out-dir", str(tmp_path)]) == 1


def test_diagnose_is_byte_deterministic(tmp_path):
    args = ["diagnose", "--check", "estimator_cloud", "--T", "100", "--M", "30", "--seed", "2", "--no-plot"]
    main(args + ["--out-dir", str(tmp_path / "a")])
    main(args + ["--out-dir", str(tmp_path / "b")])
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_plot_command(tmp_path):
    main(["run", "--algo", "hyran", "--T", "30", "--reps", "2", "--d", "3", "--N", "4", "--out-dir", str(tmp_path),
          "--no-plot"])
    out = tmp_path / "fig.svg"
    assert main(["plot", "--in", str(tmp_path / "run_regret.csv"), str(tmp_path / "run_aggregate.csv"),
                 "--out", str(out)]) == 0
    assert out.exists()


def test_plot_missing_input(tmp_path):
    assert main(["plot", "--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "x.svg")]) == 2


@pytest.mark.parametrize("argv", [[], ["run", "--T", "abc"], ["diagnose"], ["frobnicate"], ["run", "--d", "0"]])
def test_usage_errors(argv, tmp_path):
    assert main(argv + (["--out-dir", str(tmp_path)] if argv[:1] == ["run"] else [])) == 2


def test_env_var_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("HYRAN_OUT_DIR", str(tmp_path / "envout"))
    assert main(["run", "--T", "10", "--reps", "1", "--d", "2", "--N", "3", "--no-plot"]) == 0
    assert (tmp_path / "envout" / "run_regret.csv").exists()

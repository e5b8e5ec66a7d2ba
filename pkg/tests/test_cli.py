"""End-to-end runs of the command-line workflows."""

import csv
import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from isdfilter.cli import load_config, main, read_csv_matrix
from isdfilter.errors import ConfigError

POISSON_ISD = """
seed = {seed}
[io]
out_dir = "{out}"
[model]
family = "poisson"
[statics]
omega = 0.0
phi = 0.97
penalty = {{ H = 0.1 }}
[dgp]
kind = "isd_dgp"
T = {T}
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_is_deterministic(tmp_path):
    cfg = _write(tmp_path, "sim.toml", POISSON_ISD.format(seed=1, out="a", T=100))
    assert main(["simulate", cfg]) == 0
    first = (tmp_path / "a" / "y.csv").read_bytes()
    assert main(["simulate", cfg, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "y.csv").read_bytes() == first
    rows = _rows(tmp_path / "a" / "y.csv")
    assert rows[0] == ["y"] and len(rows) == 101
    assert _rows(tmp_path / "a" / "theta0.csv")[0] == ["theta0"]
    resolved = json.loads((tmp_path / "a" / "resolved-config.json").read_text())
    assert resolved["seed"] == 1 and resolved["command"] == "simulate"
    assert main(["simulate", cfg, "--seed", "2", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "y.csv").read_bytes() != first


def test_square_wave_states(tmp_path):
    cfg = _write(tmp_path, "sq.toml", """
        seed = 4
        [io]
        out_dir = "sq"
        [dgp]
        kind = "square_wave_gamma"
        T = 2000
        """)
    assert main(["simulate", cfg]) == 0
    rows = _rows(tmp_path / "sq" / "theta0.csv")
    assert rows[0] == ["theta0_0", "theta0_1"]
    th = read_csv_matrix(tmp_path / "sq" / "theta0.csv")
    assert set(th[:, 0]) == {1.0, 3.0} and set(th[:, 1]) == {5.0, 11.0}


def test_malformed_config_reports_line_and_key(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.toml", """
        [model]
        family = "poisson"
        [dgp]
        kind = "isd_dgp"
        T = -5
        """)
    assert main(["simulate", cfg]) == 2
    err = capsys.readouterr().err
    assert "line 6" in err and "dgp.T" in err


def test_unknown_key_and_family_are_config_errors(tmp_path):
    cfg = _write(tmp_path, "x.toml", """
        [model]
        family = "poisson"
        colour = "blue"
        """)
    assert main(["simulate", cfg]) == 2
    with pytest.raises(ConfigError):
        load_config(cfg)
    cfg2 = _write(tmp_path, "y.toml", POISSON_ISD.format(seed=0, out="o", T=10).replace('"poisson"', '"nope"'))
    assert main(["simulate", cfg2]) == 2


def test_missing_data_is_io_error(tmp_path):
    cfg = _write(tmp_path, "f.toml", """
        [io]
        data = "nowhere.csv"
        [model]
        family = "poisson"
        """)
    assert main(["fit", cfg]) == 3
    assert main(["filter", str(tmp_path / "absent.toml")]) == 3


def test_all_starts_failed_exit_code(tmp_path):
    assert main(["simulate", _write(tmp_path, "s.toml", POISSON_ISD.format(seed=1, out="sim", T=300))]) == 0
    cfg = _write(tmp_path, "f.toml", """
        [io]
        data = "sim/y.csv"
        out_dir = "fit"
        [model]
        family = "poisson"
        [fit]
        max_iters = 1
        starts = 2
        """)
    assert main(["fit", cfg]) == 4


def test_fit_then_filter_round_trip(tmp_path):
    assert main(["simulate", _write(tmp_path, "s.toml", POISSON_ISD.format(seed=7, out="sim", T=4000))]) == 0
    fit_cfg = _write(tmp_path, "fit.toml", """
        seed = 3
        [io]
        data = "sim/y.csv"
        out_dir = "fit"
        [model]
        family = "poisson"
        """)
    assert main(["fit", fit_cfg]) == 0
    xi = json.loads((tmp_path / "fit" / "xi_hat.json").read_text())
    assert {"omega", "phi", "penalty", "summary", "seed"} <= set(xi)
    assert abs(xi["summary"]["phi"] - 0.97) <= 3 * 0.0074
    assert abs(xi["summary"]["H"] - 0.10) <= 3 * 0.0105
    assert abs(xi["summary"]["omega"]) <= 3 * 0.0020
    rep = json.loads((tmp_path / "fit" / "fit_report.json").read_text())
    assert {"objective", "loglik", "converged", "starts", "names", "seed"} <= set(rep)
    # filter with the true statics reproduces the simulated states
    true_cfg = _write(tmp_path, "filt.toml", """
        [io]
        data = "sim/y.csv"
        out_dir = "filt"
        [model]
        family = "poisson"
        [statics]
        omega = 0.0
        phi = 0.97
        penalty = { H = 0.1 }
        """)
    assert main(["filter", true_cfg]) == 0
    rows = _rows(tmp_path / "filt" / "path.csv")
    assert rows[0] == ["t", "theta_pred_0", "theta_upd_0", "loglik", "status", "iterations", "diverged"]
    pred = np.array([float(r[1]) for r in rows[1:]])
    th = read_csv_matrix(tmp_path / "sim" / "theta0.csv")[:, 0]
    np.testing.assert_allclose(pred, th, atol=1e-10, rtol=0)
    # and with the fitted statics file
    fitted_cfg = _write(tmp_path, "filt2.toml", """
        [io]
        data = "sim/y.csv"
        out_dir = "filt2"
        [model]
        family = "poisson"
        [filter]
        statics_file = "fit/xi_hat.json"
        """)
    assert main(["filter", fitted_cfg]) == 0
    assert len(_rows(tmp_path / "filt2" / "path.csv")) == 4001


def test_esd_filter_divergence_exits_zero(tmp_path):
    cfg = _write(tmp_path, "g.toml", """
        seed = 5
        [io]
        out_dir = "sim"
        [model]
        family = "ged"
        shape = { upsilon = 4.0 }
        [dgp]
        kind = "ar1_state"
        T = 2000
        omega0 = 0.0
        phi0 = 0.98
        sigma_eta = 1.0
        """)
    assert main(["simulate", cfg]) == 0
    fcfg = _write(tmp_path, "f.toml", """
        [io]
        data = "sim/y.csv"
        out_dir = "filt"
        [model]
        family = "ged"
        shape = { upsilon = 4.0 }
        [statics]
        omega = 0.0
        phi = 0.98
        penalty = { H = 1.0 }
        [filter]
        mode = "esd"
        """)
    assert main(["filter", fcfg]) == 0
    rows = _rows(tmp_path / "filt" / "path.csv")
    flags = {r[-1] for r in rows[1:]}
    assert flags <= {"True", "False"}
    assert "True" in flags


def test_replicate_aggregate_is_row_mean(tmp_path):
    cfg = _write(tmp_path, "r.toml", POISSON_ISD.format(seed=2, out="rep", T=600) + """
[study]
n_reps = 2
split_R = 300
truth = { omega = 0.0, phi = 0.97, H = 0.1 }
[[study.fits]]
label = "isd"
[study.fits.fit]
starts = 1
[[study.fits]]
label = "esd"
[study.fits.fit]
mode = "esd"
starts = 1
""")
    assert main(["replicate", cfg]) == 0
    rows = _rows(tmp_path / "rep" / "report.csv")
    head = rows[0]
    assert head[:8] == ["rep", "label", "in_mse", "out_mse", "diverged", "diverged_at", "fit_objective", "error"]
    assert len(rows) == 5
    agg = json.loads((tmp_path / "rep" / "aggregate.json").read_text())
    assert agg["seed"] == 2 and agg["n_reps"] == 2
    for lab in ("isd", "esd"):
        vals = [float(r[2]) for r in rows[1:] if r[1] == lab]
        assert len(vals) == 2
        assert agg["aggregate"][lab]["in_mse_mean"] == pytest.approx(np.mean(vals), rel=1e-12)


def test_diagnose_report(tmp_path):
    cfg = _write(tmp_path, "d.toml", """
        [io]
        out_dir = "diag"
        [model]
        family = "poisson"
        [diagnose]
        P = 10
        phi = 0.97
        test_points = [[0.0, 1.0]]
        n_draws = 5000
        """)
    assert main(["diagnose", cfg]) == 0
    rep = json.loads((tmp_path / "diag" / "diagnostics.json").read_text())
    assert {"coefficients", "invertibility", "mse_decomposition", "probe", "seed"} <= set(rep)
    assert rep["invertibility"]["holds"]


def test_console_script_runs(tmp_path):
    cfg = _write(tmp_path, "s.toml", POISSON_ISD.format(seed=1, out="o", T=20))
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "isdfilter.cli", "simulate", cfg], capture_output=True, text=True,
                       env=env, cwd=tmp_path)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "o" / "y.csv").exists()

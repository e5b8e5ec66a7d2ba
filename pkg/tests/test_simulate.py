"""Data-generating processes, MSE scoring and replication studies."""

import csv
import json
import math

import numpy as np
import pytest

from isdfilter.densities import make_model
from isdfilter.errors import ConfigError, LengthMismatch
from isdfilter.estimate import FitConfig
from isdfilter.filter import StaticParams, run_filter
from isdfilter.simulate import (
    DgpSpec,
    FitSpec,
    mse,
    run_replication_study,
    simulate,
    square_wave_states,
    statics_summary,
)
from isdfilter.update import PenaltySpec


def _poisson_isd(T=500, seed=3):
    m = make_model("poisson")
    st = StaticParams(PenaltySpec.from_learning_rate(0.10), [0.0], [[0.97]])
    return m, st, DgpSpec.isd(m, st, T, seed)


def test_seed_determinism():
    _, _, spec = _poisson_isd()
    y1, t1 = simulate(spec)
    y2, t2 = simulate(spec)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(t1, t2)
    y3, _ = simulate(spec, rep=1)
    assert not np.array_equal(y1, y3)
    np.testing.assert_array_equal(y3, simulate(spec, rep=1)[0])
    assert not np.array_equal(y1, simulate(spec.with_seed(4))[0])


def test_zero_state_noise_gives_constant_state():
    m = make_model("gaussian-vol")
    y, th = simulate(DgpSpec.ar1(m, 0.0, 0.9, 0.0, 2000, seed=1))
    assert np.all(th == 0.0)
    # i.i.d. standard normal draws
    assert abs(np.mean(y)) < 0.1 and abs(np.var(y) - 1) < 0.1
    assert abs(np.corrcoef(y[1:, 0], y[:-1, 0])[0, 1]) < 0.1


def test_ar1_starts_at_unconditional_level():
    m = make_model("poisson")
    _, th = simulate(DgpSpec.ar1(m, 0.02, 0.98, 1e-12, 50, seed=2))
    np.testing.assert_allclose(th, 1.0, atol=1e-9)


SELF_CONSISTENT = [
    ("poisson", {}, StaticParams(PenaltySpec.from_learning_rate(0.10), [0.0], [[0.97]])),
    ("gaussian-vol", {}, StaticParams(PenaltySpec.static(3.0), [-0.05], [[0.95]])),
    ("t-location", {"nu": 3.0, "sigma": 1.0}, StaticParams(PenaltySpec.static(2.0), [0.1], [[0.8]])),
    ("gaussian-corr", {}, StaticParams(PenaltySpec.static(2.0), [0.05], [[0.9]])),
    ("ged", {"upsilon": 1.5}, StaticParams(PenaltySpec.info_scaled(0.2), [0.0], [[0.9]])),
    ("gamma2", {}, StaticParams(PenaltySpec.static(np.diag([5.0, 2.0])), [0.3, 0.4], np.diag([0.9, 0.9]))),
    ("dirichlet", {"n_components": 3}, StaticParams(PenaltySpec.static(4.0), [0.1], [[0.95]])),
]


@pytest.mark.parametrize("mode", ["isd", "esd"])
@pytest.mark.parametrize("name,kw,st", SELF_CONSISTENT, ids=[c[0] for c in SELF_CONSISTENT])
def test_filter_with_true_statics_reproduces_states(name, kw, st, mode):
    m = make_model(name, **kw)
    y, th = simulate(DgpSpec.isd(m, st, 300, seed=8, mode=mode))
    path = run_filter(m, y, statics=st, mode=mode)
    assert not path.diverged
    np.testing.assert_allclose(path.predictions, th, atol=1e-10, rtol=0)


def test_dirichlet_state_moments():
    _, th = simulate(DgpSpec.dirichlet(3, 0.1, 0.95, 0.195, 1_000_000, seed=5))
    assert abs(np.mean(th) - 2) / 2 < 0.02
    assert abs(np.var(th) - 2) / 2 < 0.02


def test_dirichlet_draws_on_simplex():
    y, _ = simulate(DgpSpec.dirichlet(4, 0.1, 0.95, 0.195, 2000, seed=6))
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_square_wave_values():
    s = square_wave_states(1000)
    assert set(s[:, 0]) == {1.0, 3.0} and set(s[:, 1]) == {5.0, 11.0}
    # a_t: +1 on (0, 200], sin(pi) = 0 counts as +1
    assert s[0, 0] == 3 and s[199, 0] == 3 and s[200, 0] == 1 and s[399, 0] == 3
    # b_t: cos >= 0 on the first and last quarter of each period
    assert s[249, 1] == 11 and s[250, 1] == 5 and s[748, 1] == 5 and s[749, 1] == 11
    t = np.arange(1, 1001)
    inner_a = np.abs(np.sin(2 * np.pi * t / 400)) > 1e-9
    np.testing.assert_array_equal(s[inner_a, 0], 2 + np.sign(np.sin(2 * np.pi * t[inner_a] / 400)))
    inner_b = np.abs(np.cos(2 * np.pi * t / 1000)) > 1e-9
    np.testing.assert_array_equal(s[inner_b, 1], 8 + 3 * np.sign(np.cos(2 * np.pi * t[inner_b] / 1000)))


def test_square_wave_draws():
    y, th = simulate(DgpSpec.square_wave(4000, seed=1))
    assert y.shape == (4000, 1) and th.shape == (4000, 2)
    assert np.all(y > 0)
    mean_ratio = np.mean(y[:, 0] / (th[:, 0] / th[:, 1]))
    assert abs(mean_ratio - 1) < 0.05


def test_mse_examples():
    th = np.linspace(-1, 1, 20)
    assert mse(th, th, 10) == (0.0, 0.0)
    a, b = mse(th + 0.3, th, 10)
    assert a == pytest.approx(0.09) and b == pytest.approx(0.09)
    bad = th.copy()
    bad[15:] = np.nan
    assert mse(bad, th, 10) == (pytest.approx(0.0), math.inf)
    assert math.isnan(mse(th, th, 20)[1])
    with pytest.raises(LengthMismatch):
        mse(th[:5], th, 2)


def test_spec_validation():
    m = make_model("poisson")
    with pytest.raises(ConfigError):
        DgpSpec.ar1(m, 0.0, 1.0, 0.1, 10)
    with pytest.raises(ConfigError):
        DgpSpec.ar1(m, 0.0, 0.5, 0.1, -1)
    with pytest.raises(ConfigError):
        DgpSpec.ar1(m, 0.0, 0.5, 0.1, 10, innovation="student_t", nu0=2.0)
    with pytest.raises(ConfigError):
        DgpSpec("isd_dgp", 10)
    with pytest.raises(ConfigError):
        DgpSpec.square_wave(10, periods=(400,))


def test_statics_summary_names():
    st = StaticParams(PenaltySpec.from_learning_rate(0.1), [0.0], [[0.97]], psi={"kappa": 2.0})
    assert statics_summary(st) == {"omega": 0.0, "phi": 0.97, "H": pytest.approx(0.1, abs=1e-15), "kappa": 2.0}
    st2 = StaticParams(PenaltySpec.static(np.diag([2.0, 4.0])), [0.1, 0.2], np.diag([0.5, 0.6]))
    assert set(statics_summary(st2)) == {"omega[0]", "omega[1]", "phi[0,0]", "phi[1,1]", "H[0,0]", "H[0,1]",
                                         "H[1,1]"}


def test_single_replication_with_pinned_learning_rate():
    m, _, spec = _poisson_isd(T=4000, seed=17)
    fs = FitSpec("isd", m, FitConfig(pins={"penalty": 0.10}, starts=2))
    rep = run_replication_study(spec, [fs], 1, 2000)
    row = rep.rows[0]
    assert not row["error"]
    assert abs(row["in_mse"] - row["out_mse"]) / row["in_mse"] < 0.2
    assert row["xi_hat"]["H"] == pytest.approx(0.10)


def test_aggregate_is_row_mean_and_parallel_matches_serial(tmp_path):
    m, st, spec = _poisson_isd(T=400, seed=9)
    fits = [FitSpec("isd", m, FitConfig(starts=1)), FitSpec("esd", m, FitConfig(mode="esd", starts=1))]
    truth = {"omega": 0.0, "phi": 0.97, "H": 0.10}
    serial = run_replication_study(spec, fits, 3, 200, parallel=1, truth=truth)
    par = run_replication_study(spec, fits, 3, 200, parallel=2, truth=truth)
    assert serial.rows == par.rows
    agg = serial.aggregate()
    for lab in ("isd", "esd"):
        rows = serial.select(lab)
        assert agg[lab]["n_reps"] == 3
        assert agg[lab]["in_mse_mean"] == pytest.approx(np.mean([r["in_mse"] for r in rows]), rel=1e-14)
        phis = np.array([r["xi_hat"]["phi"] for r in rows])
        assert agg[lab]["rmse"]["phi"] == pytest.approx(np.sqrt(np.mean((phis - 0.97) ** 2)), rel=1e-14)
    serial.to_csv(tmp_path / "report.csv")
    with open(tmp_path / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:8] == ["rep", "label", "in_mse", "out_mse", "diverged", "diverged_at", "fit_objective", "error"]
    assert len(rows) == 7
    serial.to_json(tmp_path / "agg.json")
    assert json.loads((tmp_path / "agg.json").read_text())["aggregate"]["isd"]["n_reps"] == 3


def test_replication_failures_are_in_band():
    m, _, spec = _poisson_isd(T=200, seed=1)
    fits = [FitSpec("tiny", m, FitConfig(min_obs=150, starts=1)), FitSpec("ok", m, FitConfig(starts=1))]
    rep = run_replication_study(spec, fits, 2, 100)
    assert all(r["error"] for r in rep.select("tiny"))
    assert not any(r["error"] for r in rep.select("ok"))
    agg = rep.aggregate()
    assert agg["tiny"]["n_failed"] == 2 and agg["tiny"]["n_reps"] == 0
    with pytest.raises(ConfigError):
        run_replication_study(spec, fits, 1, 200)

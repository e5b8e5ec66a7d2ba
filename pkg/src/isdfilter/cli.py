"""Command-line interface: ``isdfilter {simulate,fit,filter,replicate,diagnose} CONFIG``.

Each run reads one TOML file, validates it against a strict schema (unknown
keys are rejected), writes its outputs plus ``resolved-config.json`` to the
output directory and exits with 0 on success, 2 on a configuration error, 3 on
an input/output error and 4 when every optimizer start failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from . import __version__
from .densities import DensityModel, make_model
from .diagnostics import run_diagnostics
from .errors import AllStartsFailed, ConfigError, ISDError
from .estimate import FitConfig, fit
from .filter import FilterOptions, StaticParams, run_filter
from .simulate import DgpSpec, FitSpec, default_workers, run_replication_study, simulate, statics_summary
from .update import SolverOptions

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NO_FIT = 0, 2, 3, 4

Number = Union[int, float]
Matrixish = Union[Number, list]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    family: str
    shape: dict[str, Any] = Field(default_factory=dict)

    def build(self) -> DensityModel:
        return make_model(self.family, **self.shape)


class PenaltySection(_Strict):
    kind: Optional[Literal["static_matrix", "lyapunov", "info_scaled"]] = None
    H: Optional[Matrixish] = None
    P: Optional[Matrixish] = None
    delta: Optional[Matrixish] = None
    h: Optional[float] = None


class StaticsSection(_Strict):
    omega: Matrixish
    phi: Matrixish
    penalty: PenaltySection
    psi: dict[str, float] = Field(default_factory=dict)
    init: Optional[Matrixish] = None
    gamma: float = 0.0
    scaling: Literal["raw", "literature"] = "raw"

    def build(self) -> StaticParams:
        d = self.model_dump()
        d["penalty"] = {k: v for k, v in d["penalty"].items() if v is not None}
        for k in ("H", "P", "delta"):
            if k in d["penalty"]:
                d["penalty"][k] = np.atleast_2d(np.asarray(d["penalty"][k], dtype=float))
        return StaticParams.from_dict(d)


class DgpSection(_Strict):
    kind: Literal["isd_dgp", "ar1_state", "square_wave_gamma", "dirichlet_ar1"]
    T: int = Field(ge=0)
    mode: Literal["isd", "esd"] = "isd"
    omega0: float = 0.0
    phi0: float = 0.98
    sigma_eta: Optional[float] = Field(default=None, ge=0)
    sigma_eta2: Optional[float] = Field(default=None, ge=0)
    innovation: Literal["gaussian", "student_t"] = "gaussian"
    nu0: float = 5.0
    periods: tuple[float, float] = (400.0, 1000.0)
    burn_in: Optional[int] = Field(default=None, ge=0)
    n_components: Optional[int] = Field(default=None, ge=2)


class FitSection(_Strict):
    mode: Literal["isd", "esd"] = "isd"
    penalty_kind: Literal["static", "lyapunov", "info_scaled"] = "static"
    starts: int = Field(default=5, ge=1)
    jitter: float = Field(default=0.5, ge=0)
    max_iters: int = Field(default=500, ge=1)
    grad_step: float = Field(default=1e-6, gt=0)
    tol: float = Field(default=1e-9, gt=0)
    pins: dict[str, Any] = Field(default_factory=dict)
    start: dict[str, Any] = Field(default_factory=dict)
    estimate_shapes: Optional[list[str]] = None
    target_levels: Optional[list[float]] = None
    estimate_gamma: bool = False
    scaling: Literal["raw", "literature"] = "raw"
    init: Optional[list[float]] = None
    min_obs: int = Field(default=50, ge=1)

    def build(self, seed: int, workers: int) -> FitConfig:
        return FitConfig(
            mode=self.mode, penalty_kind=self.penalty_kind, starts=self.starts, jitter=self.jitter,
            max_iters=self.max_iters, grad_step=self.grad_step, tol=self.tol, seed=seed, pins=dict(self.pins),
            start=dict(self.start),
            estimate_shapes=None if self.estimate_shapes is None else tuple(self.estimate_shapes),
            target_levels=None if self.target_levels is None else tuple(self.target_levels),
            estimate_gamma=self.estimate_gamma, scaling=self.scaling,
            init=None if self.init is None else tuple(self.init), workers=workers, min_obs=self.min_obs,
        )


class FilterSection(_Strict):
    mode: Literal["isd", "esd"] = "isd"
    fail_fast: bool = False
    overflow_guard: float = Field(default=1e12, gt=0)
    foc_tol: float = Field(default=1e-10, gt=0)
    statics_file: Optional[str] = None

    def options(self) -> FilterOptions:
        return FilterOptions(solver=SolverOptions(foc_tol=self.foc_tol), overflow_guard=self.overflow_guard,
                             fail_fast=self.fail_fast)


class StudyFit(_Strict):
    label: str
    model: Optional[ModelSection] = None
    fit: FitSection = Field(default_factory=FitSection)


class StudySection(_Strict):
    n_reps: int = Field(ge=1)
    split_R: int = Field(ge=1)
    fits: list[StudyFit] = Field(min_length=1)
    truth: dict[str, float] = Field(default_factory=dict)


class DiagnoseSection(_Strict):
    P: Matrixish
    phi: Matrixish
    alpha: Optional[float] = Field(default=None, ge=0)
    lipschitz: Optional[float] = Field(default=None, ge=0)
    test_points: list[tuple[Matrixish, Matrixish]] = Field(default_factory=list)
    n_draws: int = Field(default=100_000, ge=2)
    probe_T: int = Field(default=500, ge=0)


class IoSection(_Strict):
    out_dir: str = "."
    data: Optional[str] = None
    exo: Optional[str] = None


class RunConfig(_Strict):
    """Full configuration of one run; only the sections a command needs are required."""

    seed: int = Field(default=0, ge=0, lt=2**64)
    workers: Optional[int] = Field(default=None, ge=1)
    io: IoSection = Field(default_factory=IoSection)
    model: Optional[ModelSection] = None
    statics: Optional[StaticsSection] = None
    dgp: Optional[DgpSection] = None
    fit: Optional[FitSection] = None
    filter: Optional[FilterSection] = None
    study: Optional[StudySection] = None
    diagnose: Optional[DiagnoseSection] = None

    def resolved_workers(self) -> int:
        return self.workers if self.workers is not None else default_workers()


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------


def read_csv_matrix(path) -> np.ndarray:
    """Numeric CSV with a header row as a ``(T, columns)`` array.

    Raises
    ------
    OSError
        If the file cannot be read.
    ConfigError
        If a cell is empty or not a number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: missing header row")
    body = rows[1:]
    width = len(rows[0])
    out = np.empty((len(body), width))
    for i, r in enumerate(body):
        if len(r) != width:
            raise ConfigError(f"{path}: row {i + 2} has {len(r)} fields, expected {width}")
        for j, v in enumerate(r):
            try:
                out[i, j] = float(v)
            except ValueError:
                raise ConfigError(f"{path}: row {i + 2}, column {j + 1}: not a number: {v!r}") from None
    return out


def write_csv_matrix(path, header: list, data) -> None:
    data = np.asarray(data, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return _json_safe(v.item())
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    return v


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _key_line(text: str, loc: tuple) -> Optional[int]:
    # best-effort line of the last string key in a validation error location
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    key = keys[-1]
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith(key) and s[len(key):].lstrip().startswith("="):
            return i
        if s.startswith("[") and s.strip("[]").split(".")[-1].strip() == key:
            return i
    return None


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Raises
    ------
    OSError
        If the file cannot be read.
    ConfigError
        On TOML syntax errors or schema violations; the message names the key
        and, when it can be found, the line.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            key = ".".join(str(p) for p in err["loc"])
            line = _key_line(text, err["loc"])
            where = f"line {line}, " if line else ""
            msgs.append(f"{path}: {where}key '{key}': {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def _require(cfg: RunConfig, name: str):
    v = getattr(cfg, name)
    if v is None:
        raise ConfigError(f"missing [{name}] section")
    return v


def _out_dir(cfg: RunConfig, override: Optional[str], base: Path) -> Path:
    # --out is relative to the working directory, io.out_dir to the config file
    out = Path(override) if override else base / cfg.io.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_data(cfg: RunConfig, base: Path) -> tuple:
    if cfg.io.data is None:
        raise ConfigError("io.data must name the observation CSV")
    y = read_csv_matrix(base / cfg.io.data)
    x = None
    if cfg.io.exo is not None:
        x = read_csv_matrix(base / cfg.io.exo)
        if x.shape[0] != y.shape[0]:
            raise ConfigError("observation and exogenous CSVs differ in length")
    return y, x


def _dgp_spec(cfg: RunConfig) -> DgpSpec:
    d = _require(cfg, "dgp")
    if d.kind == "square_wave_gamma":
        return DgpSpec.square_wave(d.T, cfg.seed, tuple(d.periods))
    if d.kind == "isd_dgp":
        return DgpSpec.isd(_require(cfg, "model").build(), _require(cfg, "statics").build(), d.T, cfg.seed, d.mode)
    if d.kind == "dirichlet_ar1":
        if d.n_components is None or d.sigma_eta2 is None:
            raise ConfigError("dirichlet_ar1 needs dgp.n_components and dgp.sigma_eta2")
        return DgpSpec.dirichlet(d.n_components, d.omega0, d.phi0, d.sigma_eta2, d.T, cfg.seed, d.innovation,
                                 d.nu0, 100 if d.burn_in is None else d.burn_in)
    if d.sigma_eta is None:
        raise ConfigError("ar1_state needs dgp.sigma_eta")
    return DgpSpec.ar1(_require(cfg, "model").build(), d.omega0, d.phi0, d.sigma_eta, d.T, cfg.seed,
                       d.innovation, d.nu0, d.burn_in or 0)


def _state_header(prefix: str, k: int) -> list:
    return [prefix] if k == 1 else [f"{prefix}_{i}" for i in range(k)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path, base: Path) -> dict:
    spec = _dgp_spec(cfg)
    y, theta0 = simulate(spec)
    write_csv_matrix(out / "y.csv", _state_header("y", y.shape[1]), y)
    write_csv_matrix(out / "theta0.csv", _state_header("theta0", theta0.shape[1]), theta0)
    return {"T": int(y.shape[0])}


def cmd_fit(cfg: RunConfig, out: Path, base: Path) -> dict:
    model = _require(cfg, "model").build()
    y, x = _read_data(cfg, base)
    fc = (cfg.fit or FitSection()).build(cfg.seed, cfg.resolved_workers())
    statics, report = fit(model, y, x, fc)
    write_json(out / "xi_hat.json", {**statics.to_dict(), "summary": statics_summary(statics), "seed": cfg.seed})
    write_json(out / "fit_report.json", {**report.to_dict(), "seed": cfg.seed})
    return {"objective": report.objective, "loglik": report.loglik}


def cmd_filter(cfg: RunConfig, out: Path, base: Path) -> dict:
    model = _require(cfg, "model").build()
    fs = cfg.filter or FilterSection()
    y, x = _read_data(cfg, base)
    if fs.statics_file is not None:
        with open(base / fs.statics_file, encoding="utf-8") as fh:
            statics = StaticParams.from_dict(json.load(fh))
    else:
        statics = _require(cfg, "statics").build()
    path = run_filter(model, y, x, statics, mode=fs.mode, options=fs.options())
    path.to_csv(out / "path.csv")
    return {"diverged": path.diverged, "diverged_at": path.diverged_at, "total_loglik": path.total_loglik}


def cmd_replicate(cfg: RunConfig, out: Path, base: Path) -> dict:
    spec = _dgp_spec(cfg)
    st = _require(cfg, "study")
    workers = cfg.resolved_workers()
    fits = []
    for f in st.fits:
        msec = f.model or cfg.model
        if msec is None:
            if spec.model is None:
                raise ConfigError(f"fit {f.label!r} needs a model section")
            model = spec.model
        else:
            model = msec.build()
        fits.append(FitSpec(f.label, model, f.fit.build(cfg.seed, 1)))
    report = run_replication_study(spec, fits, st.n_reps, st.split_R, workers, st.truth)
    report.to_csv(out / "report.csv")
    write_json(out / "aggregate.json", {"aggregate": report.aggregate(), "split_R": st.split_R, "seed": cfg.seed,
                                        "n_reps": st.n_reps, "truth": st.truth})
    return {"rows": len(report.rows)}


def cmd_diagnose(cfg: RunConfig, out: Path, base: Path) -> dict:
    model = _require(cfg, "model").build()
    d = _require(cfg, "diagnose")
    res = run_diagnostics(model, np.atleast_2d(np.asarray(d.P, dtype=float)),
                          np.atleast_2d(np.asarray(d.phi, dtype=float)), d.alpha, d.lipschitz,
                          [(np.atleast_1d(a), np.atleast_1d(b)) for a, b in d.test_points], d.n_draws, cfg.seed,
                          d.probe_T)
    write_json(out / "diagnostics.json", res)
    return {"coefficients": len(res["coefficients"])}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "filter": cmd_filter,
    "replicate": cmd_replicate,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isdfilter", description="Implicit score-driven filtering workflows.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} workflow")
        s.add_argument("config", help="TOML configuration file")
        s.add_argument("--out", help="output directory (overrides io.out_dir)")
        s.add_argument("--workers", type=int, help="worker processes (overrides config and ISDFILTER_WORKERS)")
        s.add_argument("--seed", type=int, help="master seed (overrides config)")
    return p


def main(argv: Optional[list] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        updates = {}
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            updates["workers"] = args.workers
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be a 64-bit nonnegative integer")
            updates["seed"] = args.seed
        if updates:
            cfg = cfg.model_copy(update=updates)
        base = Path(args.config).resolve().parent
        out = _out_dir(cfg, args.out, base)
        resolved = cfg.model_dump(mode="json")
        resolved["command"] = args.command
        resolved["workers"] = cfg.resolved_workers()
        resolved["version"] = __version__
        write_json(out / "resolved-config.json", resolved)
        summary = COMMANDS[args.command](cfg, out, base)
    except AllStartsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_FIT
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ISDError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(_json_safe(summary), sort_keys=True), file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

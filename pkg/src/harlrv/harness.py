"""Monte Carlo experiment runner: size, power and ERP-versus-T studies.

Every replication is a pure function of ``(spec, T, rep)``: the data use the
seed ``SeedSequence([seed, T, rep])`` and the plug-in critical values
``SeedSequence([seed, T, rep, 1])``.  Replications are distributed over a
process pool in contiguous chunks and written back by index, so tables do
not depend on the number of workers.
"""
from __future__ import annotations

import csv
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import estimators as est
from . import har
from .dgp import DgpSpec, simulate
from .errors import DataError, ExperimentError, HarError, InvalidSpec
from .kernels import get_lag_kernel, get_time_kernel
from .limitdist import GridSpec, critical_values, plug_in_limit_distribution, stationary_limit_draws

__all__ = [
    "TestConfig",
    "ExperimentSpec",
    "RejectionTable",
    "ErpCurve",
    "run_size_experiment",
    "run_power_experiment",
    "run_erp_study",
    "write_outputs",
    "read_rejection_csv",
    "read_erp_csv",
]

SCHEMA_VERSION = 1
MAX_FAILURE_SHARE = 0.01
_FMT = ".12g"


@dataclass(frozen=True)
class TestConfig:
    """One test to run in every replication.

    ``kind`` is ``t_fixed_b``, ``F_fixed_b`` or ``t_HAC``.  Fixed-b tests use
    ``b``; HAC tests use ``b_T = bT_c * T^(-bT_exp)``.
    """

    __test__ = False

    name: str
    kind: str
    kernel: str = "bartlett"
    cv_source: str = "standard"
    b: float = 1.0
    bT_c: float = 1.0
    bT_exp: float = 0.5

    def __post_init__(self):
        if self.kind not in ("t_fixed_b", "F_fixed_b", "t_HAC"):
            raise InvalidSpec(f"unknown test kind {self.kind!r}")
        if self.cv_source not in har.CV_SOURCES:
            raise InvalidSpec(f"unknown critical-value source {self.cv_source!r}")
        if self.kind == "t_HAC" and self.cv_source != "standard":
            raise InvalidSpec("HAC tests use standard critical values")
        get_lag_kernel(self.kernel)

    def bandwidth(self, T: int) -> float:
        return self.b if self.kind != "t_HAC" else self.bT_c * T ** (-self.bT_exp)


@dataclass(frozen=True)
class ExperimentSpec:
    """Monte Carlo design.  ``reps`` is one count or one count per ``T``."""

    dgp: DgpSpec
    T_list: tuple
    reps: tuple
    tests: tuple
    level: float = 0.05
    seed: int = 12345
    grid_n: int = 1000
    stationary_draws: int = 50_000
    plugin_draws: int = 2000
    plugin_grid_n: int = 250
    h1_c: float = 1.5
    h1_exp: float = 0.2
    h2_c: float = 1.0
    h2_exp: float = 1.0 / 6.0
    K1: str = "bartlett"
    K2: str = "uniform"
    d_list: tuple = (0.0,)
    hypothesis: dict | None = None
    name: str = "experiment"

    def __post_init__(self):
        T_list = tuple(int(t) for t in self.T_list)
        if not T_list or list(T_list) != sorted(set(T_list)):
            raise InvalidSpec("T_list must be nonempty and strictly ascending")
        reps = tuple(int(r) for r in np.atleast_1d(self.reps))
        if len(reps) == 1:
            reps = reps * len(T_list)
        if len(reps) != len(T_list):
            raise InvalidSpec("reps must be a single count or one per T")
        if min(reps) < 100:
            raise InvalidSpec("at least 100 replications are required")
        if not self.tests:
            raise InvalidSpec("at least one test configuration is required")
        if len({t.name for t in self.tests}) != len(self.tests):
            raise InvalidSpec("test configuration names must be unique")
        if not 0.0 < self.level <= 1.0:
            raise InvalidSpec("level must lie in (0, 1]")
        get_lag_kernel(self.K1)
        get_time_kernel(self.K2)
        object.__setattr__(self, "T_list", T_list)
        object.__setattr__(self, "reps", reps)
        object.__setattr__(self, "d_list", tuple(float(d) for d in np.atleast_1d(self.d_list)))

    def reps_for(self, T: int) -> int:
        return self.reps[self.T_list.index(T)]

    def bandwidths(self, T: int) -> tuple[float, float]:
        return (min(1.0, self.h1_c * T ** (-self.h1_exp)), min(1.0, self.h2_c * T ** (-self.h2_exp)))

    def hyp(self) -> har.HypothesisSpec:
        if self.hypothesis is not None:
            return har.HypothesisSpec.from_dict(self.hypothesis)
        R = np.zeros((1, self.dgp.p))
        R[0, 0] = 1.0
        return har.HypothesisSpec(R, [self.dgp.beta0[0]])

    # JSON ----------------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        if d.get("schema") != SCHEMA_VERSION:
            raise InvalidSpec(f"experiment spec must declare \"schema\": {SCHEMA_VERSION}")
        d = dict(d)
        d.pop("schema")
        try:
            dgp = DgpSpec.from_dict(d.pop("dgp"))
            tests = tuple(TestConfig(**t) for t in d.pop("tests"))
            return cls(dgp=dgp, tests=tests, **d)
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed experiment spec: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read experiment spec {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {"schema": SCHEMA_VERSION}
        for k, v in asdict(self).items():
            if k == "dgp":
                out[k] = self.dgp.to_dict()
            elif k == "tests":
                out[k] = [asdict(t) for t in self.tests]
            else:
                out[k] = list(v) if isinstance(v, tuple) else v
        return out


# --------------------------------------------------------------------------
# result containers


_REJ_COLS = ["T", "config", "d", "reps", "failures", "rate", "se", "mean_stat", "mean_cv", "mean_cv_se"]


@dataclass
class RejectionTable:
    """Rows keyed by ``(T, config, d)``; rates use successful replications only."""

    rows: list = field(default_factory=list)

    def row(self, T: int, config: str, d: float = 0.0) -> dict:
        for r in self.rows:
            if r["T"] == T and r["config"] == config and r["d"] == d:
                return r
        raise KeyError((T, config, d))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_REJ_COLS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in _REJ_COLS])


@dataclass
class ErpCurve:
    """``|rate - level|`` per ``(T, config)`` and a log-log slope per config.

    The slope is present only when at least three ``T`` values are available
    and every ERP is positive.
    """

    level: float
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def erp(self, T: int, config: str) -> tuple[float, float]:
        for r in self.rows:
            if r["T"] == T and r["config"] == config:
                return r["erp"], r["se"]
        raise KeyError((T, config))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["T", "config", "reps", "rate", "erp", "se", "slope"])
            for r in self.rows:
                slope = self.slopes.get(r["config"])
                w.writerow([_fmt(r["T"]), r["config"], _fmt(r["reps"]), _fmt(r["rate"]), _fmt(r["erp"]),
                            _fmt(r["se"]), "" if slope is None else _fmt(slope)])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else format(v, _FMT)


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def read_rejection_csv(path) -> RejectionTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        rec = {k: _parse(v) for k, v in r.items()}
        rec["config"] = r["config"]
        rec["d"] = float(r["d"])
        out.append(rec)
    return RejectionTable(out)


def read_erp_csv(path) -> ErpCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    curve = ErpCurve(level=float("nan"))
    for r in rows:
        curve.rows.append({"T": int(r["T"]), "config": r["config"], "reps": int(r["reps"]),
                           "rate": float(r["rate"]), "erp": float(r["erp"]), "se": float(r["se"])})
        if r["slope"]:
            curve.slopes[r["config"]] = float(r["slope"])
    return curve


# --------------------------------------------------------------------------
# replications


def _stationary_cvs(spec: ExperimentSpec) -> dict:
    """Pivotal ``(cv, se)``, simulated once per fixed-b configuration."""
    cvs = {}
    hyp = spec.hyp()
    for cfg in spec.tests:
        if cfg.cv_source != "stationary":
            continue
        kind = "t" if cfg.kind.startswith("t") else "F"
        ds = stationary_limit_draws(cfg.kernel, cfg.b, kind, hyp.q, GridSpec(spec.grid_n),
                                    [spec.seed, 0, 0, 2], spec.stationary_draws)
        if spec.level < 1.0:
            cvs[cfg.name] = critical_values(ds, [1.0 - spec.level]).lookup(1.0 - spec.level)
        else:
            cvs[cfg.name] = (0.0, 0.0)
    return cvs


def _one_replication(spec: ExperimentSpec, T: int, rep: int, d: float, stationary_cv: dict):
    """``(stat, cv, cv_se)`` per configuration (NaN on failure)."""
    dgp = spec.dgp.with_offset(d) if d != 0.0 else spec.dgp
    hyp = spec.hyp()
    out = np.full((len(spec.tests), 3), np.nan)
    try:
        sample = simulate(dgp, T, np.random.SeedSequence([spec.seed, T, rep]))
        fit = est.ols_fit(sample)
    except HarError:
        return out
    curve = None
    for i, cfg in enumerate(spec.tests):
        try:
            bw = cfg.bandwidth(T)
            if cfg.kind == "t_fixed_b":
                stat = har.t_stat_fixed_b(fit, hyp, cfg.kernel, bw)
            elif cfg.kind == "F_fixed_b":
                stat = har.F_stat_fixed_b(fit, hyp, cfg.kernel, bw)
            else:
                stat = har.t_stat_hac(fit, hyp, cfg.kernel, bw)
            kind = "t" if cfg.kind.startswith("t") else "F"
            if cfg.cv_source == "standard":
                cv = har.decide(stat, cfg.kind, "standard", spec.level, {"q": hyp.q}).cv
                cv_se = 0.0
            elif cfg.cv_source == "stationary":
                cv, cv_se = stationary_cv[cfg.name]
            else:
                if curve is None:
                    grid = GridSpec(spec.plugin_grid_n)
                    h1, h2 = spec.bandwidths(T)
                    curve = est.local_lrv_curve(fit, grid.left, h1, h2, spec.K1, spec.K2, with_q=fit.p > 1)
                if spec.level >= 1.0:
                    cv, cv_se = 0.0, 0.0
                else:
                    ds = plug_in_limit_distribution(
                        curve, cfg.kernel, bw, GridSpec(spec.plugin_grid_n), spec.plugin_draws,
                        [spec.seed, T, rep, 1], kind, hyp.R,
                    )
                    cv, cv_se = critical_values(ds, [1.0 - spec.level]).lookup(1.0 - spec.level)
            out[i] = (stat, cv, cv_se)
        except HarError:
            continue
    return out


def _chunk(args):
    spec, T, reps, d, cvs = args
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return reps[0], np.stack([_one_replication(spec, T, r, d, cvs) for r in reps])


def _run(spec: ExperimentSpec, d_list, workers: int | None):
    workers = max(1, int(workers or 1))
    cvs = _stationary_cvs(spec)
    table = RejectionTable()
    for T in spec.T_list:
        n = spec.reps_for(T)
        for d in d_list:
            results = np.full((n, len(spec.tests), 3), np.nan)
            size = max(1, math.ceil(n / (4 * workers)))
            jobs = [(spec, T, list(range(s, min(n, s + size))), d, cvs) for s in range(0, n, size)]
            if workers == 1:
                parts = map(_chunk, jobs)
                for start, block in parts:
                    results[start:start + block.shape[0]] = block
            else:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    for start, block in pool.map(_chunk, jobs):
                        results[start:start + block.shape[0]] = block
            for i, cfg in enumerate(spec.tests):
                stat, cv = results[:, i, 0], results[:, i, 1]
                ok = np.isfinite(stat) & np.isfinite(cv)
                n_ok = int(ok.sum())
                failures = n - n_ok
                if failures > MAX_FAILURE_SHARE * n:
                    raise ExperimentError(
                        f"{failures} of {n} replications failed for {cfg.name} at T={T}, d={d}"
                    )
                mag = np.abs(stat[ok]) if cfg.kind.startswith("t") else stat[ok]
                rej = mag > cv[ok]
                if spec.level >= 1.0:
                    rej = np.ones_like(rej)
                rate = float(rej.mean()) if n_ok else float("nan")
                table.rows.append({
                    "T": T, "config": cfg.name, "d": float(d), "reps": n, "failures": failures,
                    "rate": rate, "se": math.sqrt(rate * (1.0 - rate) / n_ok) if n_ok else float("nan"),
                    "mean_stat": float(np.mean(stat[ok])) if n_ok else float("nan"),
                    "mean_cv": float(np.mean(cv[ok])) if n_ok else float("nan"),
                    "mean_cv_se": float(np.mean(results[ok, i, 2])) if n_ok else float("nan"),
                })
    return table


def run_size_experiment(spec: ExperimentSpec, workers: int | None = 1) -> RejectionTable:
    """Null rejection rates for every ``(T, config)``."""
    if any(d != 0.0 for d in spec.d_list):
        raise InvalidSpec("size experiments take d = 0 only")
    return _run(spec, (0.0,), workers)


def run_power_experiment(spec: ExperimentSpec, workers: int | None = 1) -> RejectionTable:
    """Rejection rates under ``beta = beta0 + d / sqrt(T)`` for every ``d`` in ``d_list``."""
    if not spec.d_list:
        raise InvalidSpec("power experiments need a nonempty d_list")
    return _run(spec, spec.d_list, workers)


def erp_from_table(table: RejectionTable, level: float) -> ErpCurve:
    curve = ErpCurve(level)
    for r in table.rows:
        if r["d"] != 0.0:
            continue
        curve.rows.append({"T": r["T"], "config": r["config"], "reps": r["reps"], "rate": r["rate"],
                           "erp": abs(r["rate"] - level), "se": r["se"]})
    for cfg in sorted({r["config"] for r in curve.rows}):
        pts = [(r["T"], r["erp"]) for r in curve.rows if r["config"] == cfg]
        if len(pts) >= 3 and all(e > 0 for _, e in pts):
            x = np.log([t for t, _ in pts])
            y = np.log([e for _, e in pts])
            curve.slopes[cfg] = float(np.polyfit(x, y, 1)[0])
    return curve


def run_erp_study(spec: ExperimentSpec, workers: int | None = 1) -> tuple[ErpCurve, RejectionTable]:
    """ERP per ``(T, config)`` with log-log slopes; needs at least three ``T`` values."""
    if len(spec.T_list) < 3:
        raise InvalidSpec("an ERP study needs at least three sample sizes")
    table = run_size_experiment(spec, workers)
    return erp_from_table(table, spec.level), table


def _git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=os.path.dirname(__file__))
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_outputs(out_dir, spec: ExperimentSpec, table: RejectionTable, erp: ErpCurve | None,
                  wall_time: float, workers: int) -> None:
    os.makedirs(out_dir, exist_ok=True)
    table.to_csv(os.path.join(out_dir, "rejections.csv"))
    if erp is not None:
        erp.to_csv(os.path.join(out_dir, "erp.csv"))
    meta = {"version": __version__, "git": _git_describe(), "seed": spec.seed, "workers": workers,
            "wall_time_s": round(wall_time, 3), "spec": spec.to_dict()}
    with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def run_experiment(spec: ExperimentSpec, out_dir=None, workers: int | None = 1):
    """Run the study implied by the spec (ERP if >= 3 sizes, power if d_list has nonzero offsets)."""
    t0 = time.perf_counter()
    erp = None
    if any(d != 0.0 for d in spec.d_list):
        table = run_power_experiment(spec, workers)
    elif len(spec.T_list) >= 3:
        erp, table = run_erp_study(spec, workers)
    else:
        table = run_size_experiment(spec, workers)
    if out_dir is not None:
        write_outputs(out_dir, spec, table, erp, time.perf_counter() - t0, max(1, int(workers or 1)))
    return table, erp

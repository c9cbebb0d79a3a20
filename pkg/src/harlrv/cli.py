"""Command-line interface: ``harlrv <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/specification error, 3
numerical error.  Errors are reported on stderr as a single JSON line.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from importlib import resources

import numpy as np

from . import dgp as dgp_mod
from . import estimators as est
from . import har, harness
from .errors import DataError, HarError
from .limitdist import (
    GridSpec,
    critical_values,
    limit_F_draws,
    limit_t_draws,
    plug_in_limit_distribution,
    stationary_limit_draws,
)

DEFAULT_LEVELS = (0.9, 0.95, 0.975, 0.99)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _shipped(name: str) -> str | None:
    ref = resources.files("harlrv") / "data" / (name if name.endswith(".json") else name + ".json")
    return str(ref) if ref.is_file() else None


def _resolve_spec(path: str) -> str:
    if os.path.isfile(path):
        return path
    shipped = _shipped(path)
    if shipped is None:
        raise DataError(f"no such file or shipped spec: {path}")
    return shipped


def _out_path(args, default_name: str) -> str | None:
    if args.out is None:
        return None
    if args.out.endswith(os.sep) or os.path.isdir(args.out):
        os.makedirs(args.out, exist_ok=True)
        return os.path.join(args.out, default_name)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return args.out


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands


def _dgp_from_args(args) -> dgp_mod.DgpSpec:
    if args.spec:
        return dgp_mod.DgpSpec.from_json(_resolve_spec(args.spec))
    if args.preset == "iid":
        return dgp_mod.DgpSpec.iid()
    if args.preset == "ar1":
        return dgp_mod.DgpSpec.ar1(args.rho)
    return dgp_mod.DgpSpec.variance_break(1.0, args.after, args.at, args.rho)


def cmd_simulate(args) -> int:
    spec = _dgp_from_args(args)
    sample = dgp_mod.simulate(spec, args.T, args.seed)
    path = _out_path(args, "sample.csv")
    if path is None:
        raise UsageError("simulate needs --out")
    sample.to_csv(path)
    _emit({"written": path, "T": sample.T, "p": sample.p, "seed": args.seed})
    return 0


def cmd_estimate(args) -> int:
    sample = dgp_mod.read_sample_csv(args.data)
    fit = est.ols_fit(sample)
    result = {"beta_hat": fit.beta_hat.tolist(), "T": fit.T}
    if args.bT is not None:
        result["lrv"] = est.hac_lrv(fit, args.kernel, args.bT).to_dict()
    else:
        result["lrv"] = est.fixed_b_lrv(fit, args.kernel, args.b).to_dict()
    if args.local:
        grid = np.linspace(0.0, 1.0, args.grid_u)
        curve = est.local_lrv_curve(fit, grid, args.h1, args.h2, args.K1, args.K2, with_q=fit.p > 1)
        out = args.out or "."
        os.makedirs(out, exist_ok=True)
        cpath = os.path.join(out, "curve.csv")
        curve.to_csv(cpath)
        result["curve"] = cpath
        result["h1"], result["h2"] = curve.h1, curve.h2
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "lrv.json"), "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
    _emit(result)
    return 0


def cmd_limitdist(args) -> int:
    grid = GridSpec(args.grid_n)
    levels = args.levels or list(DEFAULT_LEVELS)
    if args.stationary:
        ds = stationary_limit_draws(args.kernel, args.b, args.kind, args.q, grid, args.seed, args.draws)
    elif args.curve:
        curve = est.read_curve_csv(args.curve)
        ds = plug_in_limit_distribution(curve, args.kernel, args.b, grid, args.draws, args.seed, args.kind)
    else:
        edges = args.breaks or []
        values = args.omega or [1.0]
        if len(values) != len(edges) + 1:
            raise UsageError("--omega needs one value per segment (len(--breaks) + 1)")
        path = dgp_mod.VariancePath.piecewise_constant(edges, [[[v]] for v in values])
        fn = limit_t_draws if args.kind == "t" else limit_F_draws
        ds = fn(args.kernel, args.b, path, None, None, grid, args.seed, args.draws)
    table = critical_values(ds, levels)
    out = args.out
    if out:
        os.makedirs(out, exist_ok=True)
        if args.save_draws:
            ds.to_csv(os.path.join(out, "draws.csv"))
        table.to_csv(os.path.join(out, "quantiles.csv"))
    _emit({"kind": ds.kind, "n_draws": len(ds), "metadata": ds.metadata,
           "quantiles": {format(lv, "g"): [float(q), float(s)]
                         for lv, q, s in zip(table.levels, table.quantiles, table.se)}})
    return 0


def cmd_test(args) -> int:
    sample = dgp_mod.read_sample_csv(args.data)
    fit = est.ols_fit(sample)
    if args.R is not None:
        hyp = har.HypothesisSpec(json.loads(args.R), json.loads(args.r))
    else:
        hyp = har.HypothesisSpec.coefficient(0, float(args.r or 0.0), fit.p)
    if args.kind == "t_fixed_b":
        stat = har.t_stat_fixed_b(fit, hyp, args.kernel, args.b)
    elif args.kind == "F_fixed_b":
        stat = har.F_stat_fixed_b(fit, hyp, args.kernel, args.b)
    else:
        stat = har.t_stat_hac(fit, hyp, args.kernel, args.bT)
    ctx = {"q": hyp.q, "kernel": args.kernel, "b": args.b, "grid_n": args.grid_n, "seed": args.seed,
           "n_draws": args.draws, "reps": args.draws, "fit": fit, "hypothesis": hyp}
    res = har.decide(stat, args.kind, args.cv_source, args.level, ctx)
    if args.out:
        path = _out_path(args, "test.json")
        with open(path, "w") as fh:
            fh.write(res.to_json() + "\n")
    _emit(res.to_dict())
    return 0


def cmd_experiment(args) -> int:
    spec = harness.ExperimentSpec.from_json(_resolve_spec(args.spec))
    if args.seed_given:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.grid_n_given:
        spec = dataclasses.replace(spec, grid_n=args.grid_n)
    t0 = time.perf_counter()
    table, erp = harness.run_experiment(spec, args.out, args.threads)
    _emit({"rows": len(table.rows), "out": args.out, "wall_time_s": round(time.perf_counter() - t0, 3),
           "slopes": erp.slopes if erp else {}})
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    common.add_argument("--grid-n", dest="grid_n", type=int, default=argparse.SUPPRESS,
                        help="grid cells for limit simulation (default 1000)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")

    p = _Parser(prog="harlrv", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate a DGP to CSV")
    s.add_argument("--spec", help="DGP JSON file or shipped spec name")
    s.add_argument("--preset", choices=["iid", "ar1", "break"], default="iid")
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--after", type=float, default=4.0, help="variance after the break (preset 'break')")
    s.add_argument("--at", type=float, default=0.5, help="break location (preset 'break')")
    s.add_argument("--T", type=int, required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common], help="LRV and local LRV curve from a CSV sample")
    e.add_argument("--data", required=True)
    e.add_argument("--kernel", default="bartlett")
    e.add_argument("--b", type=float, default=1.0, help="fixed-b bandwidth fraction")
    e.add_argument("--bT", type=float, default=None, help="HAC bandwidth b_T (overrides --b)")
    e.add_argument("--local", action="store_true", help="also estimate the local LRV curve")
    e.add_argument("--h1", type=float, default=None)
    e.add_argument("--h2", type=float, default=None)
    e.add_argument("--K1", default="bartlett")
    e.add_argument("--K2", default="uniform")
    e.add_argument("--grid-u", dest="grid_u", type=int, default=101)
    e.set_defaults(func=cmd_estimate)

    ld = sub.add_parser("limitdist", parents=[common], help="simulate a limit law and its quantiles")
    ld.add_argument("--kernel", default="bartlett")
    ld.add_argument("--b", type=float, default=1.0)
    ld.add_argument("--kind", choices=["t", "F"], default="t")
    ld.add_argument("--q", type=int, default=1)
    ld.add_argument("--stationary", action="store_true", help="pivotal stationary law")
    ld.add_argument("--curve", help="local LRV curve CSV for the plug-in law")
    ld.add_argument("--breaks", type=float, nargs="*", help="Omega(u) breakpoints (oracle law)")
    ld.add_argument("--omega", type=float, nargs="*", help="Omega(u) level per segment (oracle law)")
    ld.add_argument("--draws", type=int, default=10_000)
    ld.add_argument("--levels", type=float, nargs="*")
    ld.add_argument("--save-draws", dest="save_draws", action="store_true")
    ld.set_defaults(func=cmd_limitdist)

    t = sub.add_parser("test", parents=[common], help="run a HAR test on a CSV sample")
    t.add_argument("--data", required=True)
    t.add_argument("--kind", choices=["t_fixed_b", "F_fixed_b", "t_HAC"], default="t_fixed_b")
    t.add_argument("--kernel", default="bartlett")
    t.add_argument("--b", type=float, default=1.0)
    t.add_argument("--bT", type=float, default=None)
    t.add_argument("--cv-source", dest="cv_source", choices=list(har.CV_SOURCES), default="standard")
    t.add_argument("--level", type=float, default=0.05)
    t.add_argument("--R", default=None, help="restriction matrix as JSON, e.g. '[[0,1]]'")
    t.add_argument("--r", default=None, help="restriction values (JSON list with --R, else a number)")
    t.add_argument("--draws", type=int, default=10_000)
    t.set_defaults(func=cmd_test)

    x = sub.add_parser("experiment", parents=[common], help="run a Monte Carlo experiment spec")
    x.add_argument("--spec", required=True, help="experiment JSON file or shipped spec name")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        args.seed_given = hasattr(args, "seed")
        args.grid_n_given = hasattr(args, "grid_n")
        for name, default in (("seed", 0), ("threads", 1), ("grid_n", 1000), ("out", None)):
            if not hasattr(args, name):
                setattr(args, name, default)
        return args.func(args)
    except UsageError as exc:
        _error("UsageError", str(exc))
        return 1
    except HarError as exc:
        _error(type(exc).__name__, str(exc))
        return exc.exit_code
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        _error(type(exc).__name__, str(exc))
        return 2


def _error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line front end.

Subcommands::

    qdoc characteristics --procedure sr --theta 1 --A 28.02
    qdoc table --theta 0.5 1 --out table.csv
    qdoc sweep --procedure both --theta 0.1 --A-range 1 5000 40
    qdoc mc-verify --theta 1 --gamma 50 --mc-reps 100000

Rows follow a fixed schema (see ``FIELDS``); floats are written with six
significant digits and row order depends only on the arguments, so equal
arguments give byte-identical files.

Exit status: 0 success, 1 numerical failure, 2 configuration error,
3 Monte Carlo mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibration import calibrate
from .errors import CensoredRunError, QdocError
from .fredholm import QUADRATURES
from .metrics import DEFAULT_GRID_N, operating_characteristics
from .model import GaussianShiftModel
from .montecarlo import MIN_REPS, mc_expectation, mc_stadd, worker_count

__all__ = ["FIELDS", "RunConfig", "main", "build_parser", "cmd_characteristics", "cmd_table",
           "cmd_sweep", "cmd_mc_verify"]

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG, EXIT_MISMATCH = 0, 1, 2, 3

FIELDS = ("test", "theta", "gamma", "A", "arl", "stadd", "sadd", "grid_n", "residual",
          "spectral_bound")
DEFAULT_GAMMAS = (50, 100, 500, 1000, 5000, 10000)
TEST_NAMES = {"CUSUM": "CUSUM", "SR": "Shiryaev-Roberts"}
MC_REL_FLOOR = 0.005


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    procedures: tuple
    thetas: tuple
    gammas: tuple | None = None
    thresholds: tuple | None = None
    grid_n: int = DEFAULT_GRID_N
    mc_reps: int | None = None
    seed: int = 0
    out: str | None = None
    fmt: str = "csv"
    quadrature: str = "linear"
    extrapolate: bool = True
    threads: int | None = None

    def validate(self):
        if not self.thetas:
            raise ConfigError("at least one --theta is required")
        for th in self.thetas:
            if th == 0 or not math.isfinite(th):
                raise ConfigError(f"--theta must be finite and nonzero (got {th:g})")
        if (self.gammas is None) == (self.thresholds is None):
            raise ConfigError("give exactly one of --gamma or --A")
        if self.gammas is not None:
            if not self.gammas:
                raise ConfigError("--gamma list is empty")
            if any(not g > 1 for g in self.gammas):
                raise ConfigError("every --gamma must exceed 1")
        if self.thresholds is not None:
            if not self.thresholds:
                raise ConfigError("--A list is empty")
            if any(not (a > 0 and math.isfinite(a)) for a in self.thresholds):
                raise ConfigError("every --A must be positive and finite")
        least = 4 if self.extrapolate else 2
        if self.grid_n < least:
            raise ConfigError(f"--grid-n must be >= {least}")
        if self.mc_reps is not None and self.mc_reps < 1:
            raise ConfigError("--mc-reps must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return self


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.6g" % v
    return str(v)


def _row(oc, gamma=None):
    return {"test": oc.procedure, "theta": oc.theta, "gamma": gamma, "A": oc.A, "arl": oc.arl,
            "stadd": oc.stadd, "sadd": oc.sadd, "grid_n": oc.grid_n, "residual": oc.residual,
            "spectral_bound": oc.spectral_bound}


def _cells(cfg):
    # deterministic order: theta, then procedure, then gamma / A as given
    targets = cfg.gammas if cfg.gammas is not None else cfg.thresholds
    return [(th, p, t) for th in cfg.thetas for p in cfg.procedures for t in targets]


def _compute_cell(cfg, theta, proc, target):
    model = GaussianShiftModel(theta)
    gamma = None
    if cfg.gammas is not None:
        gamma = float(target)
        A = calibrate(model, proc, gamma, cfg.grid_n, extrapolate=cfg.extrapolate,
                      quadrature=cfg.quadrature).A
    else:
        A = float(target)
    oc = operating_characteristics(model, proc, A, cfg.grid_n, extrapolate=cfg.extrapolate,
                                   quadrature=cfg.quadrature, gamma=gamma)
    return oc, gamma


def _map(cfg, fn, items):
    workers = min(worker_count(cfg.threads), max(len(items), 1))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _render(rows, fields, fmt):
    if fmt == "json":
        clean = [{k: (None if isinstance(r.get(k), float) and math.isnan(r[k]) else r.get(k))
                  for k in fields} for r in rows]
        return json.dumps(clean, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in fields])
    return buf.getvalue()


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_characteristics(cfg: RunConfig):
    """One row per (theta, procedure, gamma or A); solver failures propagate."""
    rows = [_row(*_compute_cell(cfg, *cell)) for cell in _cells(cfg)]
    _emit(_render(rows, FIELDS, cfg.fmt), cfg.out)
    return rows, EXIT_OK


def cmd_sweep(cfg: RunConfig):
    """Long-format operating-characteristic curves over the A or gamma grid."""
    results = _map(cfg, lambda cell: _compute_cell(cfg, *cell), _cells(cfg))
    rows = [_row(oc, g) for oc, g in results]
    _emit(_render(rows, FIELDS, cfg.fmt), cfg.out)
    return rows, EXIT_OK


def _safe_cell(cfg, cell):
    theta, proc, target = cell
    try:
        oc, gamma = _compute_cell(cfg, theta, proc, target)
        return {**_row(oc, gamma), "error": ""}
    except (QdocError, ArithmeticError) as exc:
        g = float(target) if cfg.gammas is not None else None
        a = None if cfg.gammas is not None else float(target)
        name = "CUSUM" if str(proc).lower() in ("cusum", "cs") else "SR"
        return {"test": name, "theta": theta, "gamma": g, "A": a, "grid_n": cfg.grid_n,
                "error": f"{type(exc).__name__}: {exc}"}


def _wide(rows, targets):
    # one block per (theta, test): rows A, ARL, STADD, SADD across the gammas
    out = []
    keyed = {}
    for r in rows:
        keyed.setdefault((r["theta"], r["test"]), []).append(r)
    for (theta, test), cells in keyed.items():
        for label, key in (("A", "A"), ("ARL", "arl"), ("STADD", "stadd"), ("SADD", "sadd")):
            out.append([_fmt(theta), TEST_NAMES.get(test, test), label]
                       + [_fmt(c.get(key)) for c in cells])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "test", "gamma"] + [_fmt(float(t)) for t in targets])
    w.writerows(out)
    return buf.getvalue()


def cmd_table(cfg: RunConfig):
    """Calibrate and evaluate every cell; failures land in the ``error`` column.

    With ``--out`` a second file ``<stem>_wide.csv`` holds the same numbers
    laid out one block per test with gamma across the columns.
    """
    rows = _map(cfg, lambda cell: _safe_cell(cfg, cell), _cells(cfg))
    _emit(_render(rows, FIELDS + ("error",), cfg.fmt), cfg.out)
    if cfg.out not in (None, "-"):
        p = Path(cfg.out)
        targets = cfg.gammas if cfg.gammas is not None else cfg.thresholds
        p.with_name(p.stem + "_wide.csv").write_text(_wide(rows, targets))
    return rows, (EXIT_NUMERICAL if any(r["error"] for r in rows) else EXIT_OK)


def _default_reps(gamma_or_arl):
    return 100_000 if gamma_or_arl <= 1000 else 10_000


def cmd_mc_verify(cfg: RunConfig):
    """Equation values next to Monte Carlo estimates for ARL, SADD and STADD.

    A comparison passes when ``|eq - mc| <= max(3 SE, 0.5% of eq)``.  Fewer
    than the minimum replications produce an ``underpowered`` report and
    the configuration exit status instead of running the simulation.
    """
    report = []
    status = EXIT_OK
    for theta, proc, target in _cells(cfg):
        oc, gamma = _compute_cell(cfg, theta, proc, target)
        reps = cfg.mc_reps if cfg.mc_reps is not None else _default_reps(gamma or oc.arl)
        model = GaussianShiftModel(theta)
        base = {"test": oc.procedure, "theta": theta, "gamma": gamma, "A": oc.A,
                "reps": reps, "seed": cfg.seed}
        if reps < MIN_REPS:
            for measure, eq in (("arl", oc.arl), ("sadd", oc.sadd), ("stadd", oc.stadd)):
                report.append({**base, "measure": measure, "equation": eq,
                               "status": "underpowered",
                               "note": f"needs at least {MIN_REPS} replications"})
            status = EXIT_CONFIG
            continue
        nu_large = int(math.ceil(20 * oc.arl))
        sims = (
            ("arl", oc.arl, lambda: mc_expectation(model, proc, oc.A, math.inf, reps, cfg.seed,
                                                   threads=cfg.threads)),
            ("sadd", oc.sadd, lambda: mc_expectation(model, proc, oc.A, 0, reps, cfg.seed,
                                                     threads=cfg.threads)),
            ("stadd", oc.stadd, lambda: mc_stadd(model, proc, oc.A, nu_large, reps, cfg.seed,
                                                 arl=oc.arl, threads=cfg.threads)),
        )
        for measure, eq, run in sims:
            est = run()
            bound = max(3.0 * est.se, MC_REL_FLOOR * abs(eq))
            ok = abs(est.mean - eq) <= bound
            report.append({**base, "measure": measure, "equation": eq, "mc_mean": est.mean,
                           "mc_se": est.se, "bound": bound, "status": "pass" if ok else "fail"})
            if not ok and status == EXIT_OK:
                status = EXIT_MISMATCH
    _emit(json.dumps({"comparisons": report}, indent=2) + "\n", cfg.out)
    return report, status


COMMANDS = {"characteristics": cmd_characteristics, "table": cmd_table, "sweep": cmd_sweep,
            "mc-verify": cmd_mc_verify}


def _floats(values):
    out = []
    for v in values:
        out.extend(float(x) for x in str(v).split(",") if x.strip())
    return tuple(out)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--procedure", choices=("cusum", "sr", "both"), default="both")
    common.add_argument("--theta", nargs="+", required=True,
                        help="post-change mean(s); commas or spaces separate values")
    target = common.add_mutually_exclusive_group()
    target.add_argument("--gamma", nargs="*", help="target ARL values (calibrates A)")
    target.add_argument("--A", nargs="*", dest="A", help="thresholds used as given")
    target.add_argument("--A-range", nargs=3, metavar=("LO", "HI", "COUNT"),
                        help="COUNT log-spaced thresholds from LO to HI")
    common.add_argument("--grid-n", type=int, default=DEFAULT_GRID_N)
    common.add_argument("--quadrature", choices=QUADRATURES, default="linear")
    common.add_argument("--no-extrapolate", action="store_true",
                        help="single-grid values without Richardson extrapolation")
    common.add_argument("--mc-reps", type=int)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out")
    common.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt")
    common.add_argument("--threads", type=int, help="worker pool size (default QDOC_THREADS)")

    parser = argparse.ArgumentParser(prog="qdoc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or "").split("\n")[0])
    return parser


def config_from_args(args) -> RunConfig:
    try:
        thetas = _floats(args.theta)
        gammas = None if args.gamma is None else _floats(args.gamma)
        thresholds = None if args.A is None else _floats(args.A)
        if args.A_range is not None:
            lo, hi, count = float(args.A_range[0]), float(args.A_range[1]), int(args.A_range[2])
            if not (0 < lo <= hi and count >= 1):
                raise ConfigError("--A-range needs 0 < LO <= HI and COUNT >= 1")
            thresholds = tuple(float(a) for a in np.geomspace(lo, hi, count))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if gammas is None and thresholds is None:
        if args.command == "table":
            gammas = tuple(float(g) for g in DEFAULT_GAMMAS)
        else:
            raise ConfigError("give --gamma or --A")
    procs = ("cusum", "sr") if args.procedure == "both" else (args.procedure,)
    return RunConfig(args.command, procs, thetas, gammas, thresholds, args.grid_n, args.mc_reps,
                     args.seed, args.out, args.fmt, args.quadrature, not args.no_extrapolate,
                     args.threads).validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        _, code = COMMANDS[cfg.command](cfg)
        return code
    except ConfigError as exc:
        print(f"qdoc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QdocError, ArithmeticError, CensoredRunError) as exc:
        print(f"qdoc: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

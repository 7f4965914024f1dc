"""Command-line interface: estimation, simulation, SE calibration, rarefaction.

Exit codes are a stable contract: 0 success, 1 input/config error, 2 when
every requested estimator failed. Every run echoes its resolved configuration
(seed included) to stderr so it can be replayed exactly.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import secrets
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, simlab
from .estimators import ESTIMATORS, NoAdmissibleModelError
from .freqtab import (
    InsufficientDataError,
    from_abundances,
    parse_abundance_vector,
    parse_frequency_table,
)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_ALL_FAILED = 2

ESTIMATOR_CHOICES = ("nof1", "breakaway", "chao1")
LOW_REPS_THRESHOLD = 30


class _Parser(argparse.ArgumentParser):
    # flag/usage problems are config errors: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def _fresh_seed() -> int:
    return secrets.randbits(63)


def _echo_config(cfg: dict) -> None:
    print("resolved config: " + json.dumps(cfg), file=sys.stderr)


def _sanitize(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _envelope(command: str, cfg: dict, results, warning_list: list[str]) -> dict:
    return {
        "tool": "ratiorich",
        "version": __version__,
        "command": command,
        "config": cfg,
        "warnings": warning_list,
        "results": results,
    }


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _fmt(value, precision: int) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.{precision}f}"
    return str(value)


def _parse_estimator_list(text: str) -> tuple[str, ...]:
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    unknown = [n for n in names if n not in ESTIMATOR_CHOICES]
    if unknown:
        raise ValueError(f"unknown estimators: {unknown}")
    if not names:
        raise ValueError("no estimators requested")
    return names


def cmd_estimate(args) -> int:
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    global_warnings: list[str] = []
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if args.format == "freq":
                table = parse_frequency_table(text)
            else:
                table = from_abundances(parse_abundance_vector(text))
        global_warnings.extend(str(w.message) for w in caught)
    except ValueError as exc:
        print(f"error: invalid {args.format} input: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    cfg = {
        "input": args.input,
        "format": args.format,
        "estimator": args.estimator,
        "output": args.output,
        "precision": args.precision,
    }
    _echo_config(cfg)
    names = list(ESTIMATOR_CHOICES) if args.estimator == "all" else [args.estimator]
    results = []
    successes = 0
    for name in names:
        try:
            est = ESTIMATORS[name](table)
            successes += 1
            results.append(
                {
                    "estimator": name,
                    "C_hat": est.C_hat,
                    "se": est.se,
                    "f0_hat": est.f0_hat,
                    "f1_hat": est.f1_hat,
                    "model_p": est.model.p if est.model else None,
                    "model_q": est.model.q if est.model else None,
                    "warnings": est.warnings,
                    "error": None,
                }
            )
        except (NoAdmissibleModelError, InsufficientDataError, ValueError) as exc:
            results.append(
                {
                    "estimator": name,
                    "C_hat": None,
                    "se": None,
                    "f0_hat": None,
                    "f1_hat": None,
                    "model_p": None,
                    "model_q": None,
                    "warnings": [],
                    "error": str(exc),
                }
            )
    if args.output == "json":
        payload = _envelope("estimate", cfg, results, global_warnings)
        _write_text(args.out, json.dumps(_sanitize(payload), indent=2) + "\n")
    else:
        lines = ["estimator,C_hat,se,f0_hat,f1_hat,model_p,model_q,warnings,error"]
        for row in results:
            lines.append(
                ",".join(
                    [
                        row["estimator"],
                        _fmt(row["C_hat"], args.precision),
                        _fmt(row["se"], args.precision),
                        _fmt(row["f0_hat"], args.precision),
                        _fmt(row["f1_hat"], args.precision),
                        _fmt(row["model_p"], args.precision),
                        _fmt(row["model_q"], args.precision),
                        '"' + "; ".join(row["warnings"]) + '"',
                        '"' + (row["error"] or "") + '"',
                    ]
                )
            )
        _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK if successes else EXIT_ALL_FAILED


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _fresh_seed()
    try:
        estimators = _parse_estimator_list(args.estimators)
        cfg = simlab.SimulationConfig(
            C=args.C,
            size=args.size,
            prob=args.prob,
            chimeric_rate=args.rate,
            reps=args.reps,
            seed=seed,
            estimators=estimators,
            trim=args.trim,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    fmt = args.output
    if fmt is None:
        fmt = "json" if args.out.endswith(".json") else "csv"
    resolved = {
        "C": cfg.C,
        "size": cfg.size,
        "prob": cfg.prob,
        "rate": cfg.chimeric_rate,
        "reps": cfg.reps,
        "seed": cfg.seed,
        "trim": cfg.trim,
        "estimators": list(cfg.estimators),
        "workers": args.workers,
        "out": args.out,
        "output": fmt,
        "include_runtimes": args.include_runtimes,
    }
    _echo_config(resolved)
    report = simlab.run_replications(cfg, workers=args.workers)
    if fmt == "json":
        text = simlab.report_to_json(report, include_runtimes=args.include_runtimes)
    else:
        text = simlab.report_to_csv(
            report, include_runtimes=args.include_runtimes, precision=args.precision
        )
    _write_text(args.out, text)
    return EXIT_OK


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_calibrate_se(args) -> int:
    seed = args.seed if args.seed is not None else _fresh_seed()
    try:
        c_list = _parse_int_list(args.C_list)
        size_list = _parse_int_list(args.size_list)
        prob_list = _parse_float_list(args.prob_list)
        if not c_list or not size_list or not prob_list:
            raise ValueError("empty parameter list")
        if args.grid == "zip":
            if not (len(c_list) == len(size_list) == len(prob_list)):
                raise ValueError("zipped lists must have equal lengths")
            combos = list(zip(c_list, size_list, prob_list))
        else:
            combos = list(itertools.product(c_list, size_list, prob_list))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    global_warnings: list[str] = []
    if args.reps < LOW_REPS_THRESHOLD:
        note = f"only {args.reps} replicates; calibration statistics will be unstable"
        global_warnings.append(note)
        print(f"warning: {note}", file=sys.stderr)

    resolved = {
        "C_list": c_list,
        "size_list": size_list,
        "prob_list": prob_list,
        "grid": args.grid,
        "estimator": args.estimator,
        "rate": args.rate,
        "reps": args.reps,
        "seed": seed,
        "trim": args.trim,
        "workers": args.workers,
        "output": args.output,
    }
    _echo_config(resolved)

    rows = []
    for c_true, size, prob in combos:
        try:
            cfg = simlab.SimulationConfig(
                C=c_true,
                size=size,
                prob=prob,
                chimeric_rate=args.rate,
                reps=args.reps,
                seed=seed,
                estimators=(args.estimator,),
                trim=args.trim,
            )
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT_ERROR
        report = simlab.run_replications(cfg, workers=args.workers)
        failures = report.stats[0].failures
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                cal = simlab.calibration_from_report(report)
            row_warnings = [str(w.message) for w in caught]
            rows.append(
                {
                    "C": c_true,
                    "size": size,
                    "prob": prob,
                    "estimator": args.estimator,
                    "median_se": cal.median_se,
                    "mad_scaled": cal.mad_of_estimates,
                    "relative_error_pct": cal.relative_error_percent,
                    "failures": failures,
                    "reps": args.reps,
                    "seed": seed,
                    "warnings": row_warnings,
                }
            )
        except simlab.AllReplicatesFailedError as exc:
            rows.append(
                {
                    "C": c_true,
                    "size": size,
                    "prob": prob,
                    "estimator": args.estimator,
                    "median_se": None,
                    "mad_scaled": None,
                    "relative_error_pct": None,
                    "failures": failures,
                    "reps": args.reps,
                    "seed": seed,
                    "warnings": [str(exc)],
                }
            )
    if args.output == "json":
        payload = _envelope("calibrate-se", resolved, rows, global_warnings)
        _write_text(args.out, json.dumps(_sanitize(payload), indent=2) + "\n")
    else:
        lines = [
            "C,size,prob,estimator,median_se,mad_scaled,relative_error_pct,failures,reps,seed"
        ]
        for row in rows:
            lines.append(
                ",".join(
                    [
                        str(row["C"]),
                        str(row["size"]),
                        repr(row["prob"]),
                        row["estimator"],
                        _fmt(row["median_se"], args.precision),
                        _fmt(row["mad_scaled"], args.precision),
                        _fmt(row["relative_error_pct"], args.precision),
                        str(row["failures"]),
                        str(row["reps"]),
                        str(row["seed"]),
                    ]
                )
            )
        _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_rarefy(args) -> int:
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    try:
        abundances = parse_abundance_vector(text)
    except ValueError as exc:
        print(
            "error: rarefaction requires abundance-format input"
            f" (one positive count per line): {exc}",
            file=sys.stderr,
        )
        return EXIT_INPUT_ERROR
    try:
        requested = _parse_float_list(args.fractions)
        if not requested:
            raise ValueError("no fractions given")
        if any(not (0.0 < x <= 1.0) for x in requested):
            raise ValueError("fractions must lie in (0, 1]")
        estimators = _parse_estimator_list(args.estimators)
        if args.reps < 1:
            raise ValueError("reps must be >= 1")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    fractions = sorted(set(requested))
    if fractions != requested:
        print("warning: fractions reordered/deduplicated for output", file=sys.stderr)

    seed = args.seed if args.seed is not None else _fresh_seed()
    resolved = {
        "input": args.input,
        "fractions": fractions,
        "reps": args.reps,
        "seed": seed,
        "estimators": list(estimators),
        "precision": args.precision,
    }
    _echo_config(resolved)
    rng = np.random.default_rng(seed)
    rows = simlab.subsample_curve(abundances, fractions, args.reps, rng, estimators)
    lines = ["fraction,estimator,mean_C_hat,sd_C_hat,failures"]
    for row in rows:
        lines.append(
            ",".join(
                [
                    repr(row.fraction),
                    row.estimator,
                    _fmt(row.mean_C_hat, args.precision),
                    _fmt(row.sd_C_hat, args.precision),
                    str(row.failures),
                ]
            )
        )
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ratiorich", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="richness estimates for one dataset")
    est.add_argument("--input", required=True, help="frequency table or abundance file")
    est.add_argument("--format", choices=("freq", "abundance"), default="freq")
    est.add_argument("--estimator", choices=ESTIMATOR_CHOICES + ("all",), default="all")
    est.add_argument("--output", choices=("json", "csv"), default="json")
    est.add_argument("--out", default=None, help="output file (default stdout)")
    est.add_argument("--precision", type=int, default=4, help="CSV decimal places")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="replicated error statistics on synthetic data")
    sim.add_argument("--C", type=int, required=True, help="true richness")
    sim.add_argument("--size", type=int, required=True, help="negative-binomial size")
    sim.add_argument("--prob", type=float, required=True, help="negative-binomial probability")
    sim.add_argument("--rate", type=float, default=0.0, help="singleton inflation percent")
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--trim", type=float, default=0.2)
    sim.add_argument("--estimators", default="nof1,breakaway,chao1")
    sim.add_argument("--out", required=True, help="report file")
    sim.add_argument("--output", choices=("json", "csv"), default=None,
                     help="report format (default: by file extension, else csv)")
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--precision", type=int, default=4, help="CSV decimal places")
    sim.add_argument("--include-runtimes", action="store_true",
                     help="add wall-clock rows (not reproducible bit-for-bit)")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate-se", help="reported SE vs actual spread over a grid")
    cal.add_argument("--C-list", dest="C_list", required=True, help="comma list")
    cal.add_argument("--size-list", dest="size_list", required=True, help="comma list")
    cal.add_argument("--prob-list", dest="prob_list", required=True, help="comma list")
    cal.add_argument("--grid", choices=("zip", "cross"), default="zip")
    cal.add_argument("--estimator", choices=ESTIMATOR_CHOICES, default="nof1")
    cal.add_argument("--rate", type=float, default=0.0)
    cal.add_argument("--reps", type=int, required=True)
    cal.add_argument("--seed", type=int, default=None)
    cal.add_argument("--trim", type=float, default=0.2)
    cal.add_argument("--workers", type=int, default=1)
    cal.add_argument("--out", default=None, help="output file (default stdout)")
    cal.add_argument("--output", choices=("json", "csv"), default="csv")
    cal.add_argument("--precision", type=int, default=4)
    cal.set_defaults(func=cmd_calibrate_se)

    rar = sub.add_parser("rarefy", help="subsampling curves from an abundance vector")
    rar.add_argument("--input", required=True, help="abundance file, one count per line")
    rar.add_argument("--fractions", required=True, help="comma list in (0, 1]")
    rar.add_argument("--reps", type=int, default=100)
    rar.add_argument("--seed", type=int, default=None)
    rar.add_argument("--estimators", default="nof1,breakaway,chao1")
    rar.add_argument("--out", default=None, help="output file (default stdout)")
    rar.add_argument("--precision", type=int, default=4)
    rar.set_defaults(func=cmd_rarefy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

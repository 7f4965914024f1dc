"""Simulation laboratory: negative-binomial populations, singleton corruption,
replicated estimation, and robust error/calibration summaries.

Every replicate draws its own generator from (seed, replicate index), so a
report is a pure function of its configuration no matter how the replicates
are scheduled. The wall-clock runtime statistics are the one exception; they
are kept out of the serialized report unless explicitly requested.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import partial
from typing import NamedTuple, Sequence

import numpy as np

from .estimators import ESTIMATORS, NoAdmissibleModelError
from .freqtab import FrequencyCountTable, InsufficientDataError, from_abundances

__all__ = [
    "DEFAULT_ESTIMATORS",
    "MAD_SCALE",
    "SimulationConfig",
    "SimulationReport",
    "EstimatorStats",
    "ErrorStats",
    "CalibrationResult",
    "CurveRow",
    "DegenerateSampleError",
    "AllReplicatesFailedError",
    "replicate_rng",
    "sample_nb_counts",
    "truncate_to_observed",
    "apply_chimeric_inflation",
    "run_replications",
    "error_stats",
    "scaled_mad",
    "se_calibration",
    "calibration_from_report",
    "subsample_curve",
    "runtime_report",
    "report_rows",
    "report_to_csv",
    "report_to_json",
]

DEFAULT_ESTIMATORS = ("nof1", "breakaway", "chao1")
# Normal-consistency factor: MAD_SCALE * MAD estimates a standard deviation,
# making the MAD column directly comparable against reported standard errors.
MAD_SCALE = 1.4826
_PMF_TABLE_CAP = 10_000_000


class DegenerateSampleError(ValueError):
    """Every simulated taxon drew a zero count; no observable sample exists."""


class AllReplicatesFailedError(RuntimeError):
    """No replicate produced an estimate to aggregate."""


@dataclass(frozen=True)
class SimulationConfig:
    """One simulation scenario: population, corruption, and bookkeeping.

    C is the true richness; counts are negative binomial with the given size
    and probability parameters. chimeric_rate is the percentage by which the
    realized singleton count is inflated (100 doubles it, -80 keeps a fifth).
    """

    C: int
    size: int
    prob: float
    chimeric_rate: float = 0.0
    reps: int = 1
    seed: int = 0
    estimators: tuple[str, ...] = DEFAULT_ESTIMATORS
    trim: float = 0.2

    def __post_init__(self) -> None:
        if self.C < 1:
            raise ValueError("C must be >= 1")
        if self.size < 1:
            raise ValueError("size must be >= 1")
        if not (0.0 < self.prob < 1.0):
            raise ValueError("prob must lie strictly inside (0, 1)")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not (0.0 <= self.trim < 0.5):
            raise ValueError("trim must lie in [0, 0.5)")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        unknown = [name for name in self.estimators if name not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """The pinned per-replicate generator: PCG64 over SeedSequence(seed, spawn_key=(index,)).

    This is the documented stream derivation; a report is reproducible from
    (seed, reps) alone, independent of worker count or execution order.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    )


def sample_nb_counts(
    C: int, size: int, prob: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw C negative-binomial counts by inverse transform.

    The pmf starts at P(0) = prob**size and follows the recurrence
    P(x+1) = P(x) * (1 - prob) * (x + size) / (x + 1); uniforms are located in
    the accumulated cdf. Zeros are kept: they become the unobserved taxa once
    the sample is truncated. When P(0) underflows, the walk tracks the log-pmf
    until the probabilities become representable.
    """
    if not (0.0 < prob < 1.0):
        raise ValueError("prob must lie strictly inside (0, 1)")
    if C < 1:
        raise ValueError("C must be >= 1")
    u = rng.random(C)
    u_max = float(np.max(u))
    q = 1.0 - prob
    log_current = size * math.log(prob)
    current = math.exp(log_current)
    cdf_values: list[float] = []
    total = 0.0
    x = 0
    while True:
        total += current
        cdf_values.append(total)
        if total >= u_max:
            break
        if total > 0.0 and current < total * 2.0**-54:
            # further mass cannot move the accumulated cdf; remaining uniforms
            # (measure ~0) map to the bin past the table
            break
        if len(cdf_values) > _PMF_TABLE_CAP:
            raise RuntimeError("negative-binomial cdf table exceeded cap; parameters too extreme")
        if current > 0.0:
            current *= q * (x + size) / (x + 1)
        else:
            log_current += math.log(q) + math.log(x + size) - math.log(x + 1)
            current = math.exp(log_current)
        x += 1
    cdf = np.asarray(cdf_values)
    return np.searchsorted(cdf, u, side="left").astype(np.int64)


def truncate_to_observed(counts: Sequence[int] | np.ndarray) -> FrequencyCountTable:
    """Drop zero counts and build the observable frequency table."""
    arr = np.asarray(counts)
    observed = arr[arr > 0]
    if observed.size == 0:
        raise DegenerateSampleError("all taxa drew zero; the sample is empty")
    values, tallies = np.unique(observed, return_counts=True)
    return FrequencyCountTable(tuple((int(v), int(t)) for v, t in zip(values, tallies)))


def _round_half_away(x: float) -> int:
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def apply_chimeric_inflation(
    table: FrequencyCountTable, rate_percent: float
) -> FrequencyCountTable:
    """Scale the realized singleton count by (1 + rate/100).

    Positive rates mimic chimera-induced false singletons, negative rates
    aggressive singleton filtering. The scaled value rounds half away from
    zero and floors at zero (removing the entry); every other f_j is left
    untouched. A table without singletons passes through unchanged.
    """
    f1 = table.get(1)
    if f1 == 0:
        return table
    new_f1 = max(0, _round_half_away(f1 * (1.0 + rate_percent / 100.0)))
    remaining = [(j, f) for j, f in table.entries if j != 1]
    if new_f1 > 0:
        remaining.append((1, new_f1))
    remaining.sort()
    if not remaining:
        raise DegenerateSampleError("singleton removal emptied the table")
    return FrequencyCountTable(tuple(remaining))


class ErrorStats(NamedTuple):
    trimmed_rmse: float
    mean_sq: float
    median_sq: float


def error_stats(estimates: Sequence[float], true_c: float, trim: float) -> ErrorStats:
    """Squared-error summaries with per-tail trimming.

    floor(trim * n) squared errors are dropped from EACH end of the sorted
    sample before averaging, so trim = 0.2 removes 20% per tail; the trimmed
    root-MSE is the square root of what remains. Mean and median squared
    errors are computed over the full sample.
    """
    values = np.asarray(estimates, dtype=float)
    if values.size == 0:
        raise ValueError("no estimates to summarize")
    if not (0.0 <= trim < 0.5):
        raise ValueError("trim must lie in [0, 0.5)")
    squared = (values - true_c) ** 2
    cut = int(math.floor(trim * squared.size))
    middle = np.sort(squared)[cut : squared.size - cut]
    return ErrorStats(
        trimmed_rmse=float(np.sqrt(middle.mean())),
        mean_sq=float(squared.mean()),
        median_sq=float(np.median(squared)),
    )


def _trimmed_mean(values: np.ndarray, trim: float) -> float:
    cut = int(math.floor(trim * values.size))
    return float(np.sort(values)[cut : values.size - cut].mean())


def scaled_mad(values: Sequence[float]) -> float:
    """Median absolute deviation scaled by MAD_SCALE to estimate an sd."""
    arr = np.asarray(values, dtype=float)
    return float(MAD_SCALE * np.median(np.abs(arr - np.median(arr))))


@dataclass(frozen=True)
class EstimatorStats:
    """Aggregates for one estimator over the successful replicates."""

    estimator: str
    failures: int
    trimmed_rmse: float
    mean_sq_error: float
    median_sq_error: float
    median_se: float
    mad_of_estimates: float
    runtime_tmean: float
    runtime_mean: float
    runtime_median: float


@dataclass(frozen=True)
class SimulationReport:
    config: SimulationConfig
    stats: tuple[EstimatorStats, ...]

    def for_estimator(self, name: str) -> EstimatorStats:
        for entry in self.stats:
            if entry.estimator == name:
                return entry
        raise KeyError(name)


def _single_replicate(
    cfg: SimulationConfig, index: int
) -> dict[str, tuple[bool, float, float, float]]:
    """One replicate: sample, truncate, inflate, estimate with each estimator.

    Returns {estimator: (ok, C_hat, se, seconds)}; timing covers only the
    estimator call. Estimation failures are tallied, never raised.
    """
    rng = replicate_rng(cfg.seed, index)
    counts = sample_nb_counts(cfg.C, cfg.size, cfg.prob, rng)
    try:
        table = truncate_to_observed(counts)
        table = apply_chimeric_inflation(table, cfg.chimeric_rate)
    except DegenerateSampleError:
        return {name: (False, math.nan, math.nan, 0.0) for name in cfg.estimators}
    out: dict[str, tuple[bool, float, float, float]] = {}
    for name in cfg.estimators:
        estimator = ESTIMATORS[name]
        start = time.perf_counter()
        try:
            result = estimator(table)
            elapsed = time.perf_counter() - start
            out[name] = (True, result.C_hat, result.se, elapsed)
        except (NoAdmissibleModelError, InsufficientDataError, ValueError):
            elapsed = time.perf_counter() - start
            out[name] = (False, math.nan, math.nan, elapsed)
    return out


def _aggregate(
    cfg: SimulationConfig,
    name: str,
    results: list[dict[str, tuple[bool, float, float, float]]],
) -> EstimatorStats:
    rows = [res[name] for res in results]
    chats = np.array([c for ok, c, _, _ in rows if ok])
    ses = np.array([s for ok, _, s, _ in rows if ok])
    times = np.array([t for ok, _, _, t in rows if ok])
    failures = cfg.reps - chats.size
    if chats.size:
        errors = error_stats(chats, float(cfg.C), cfg.trim)
        median_se = float(np.median(ses))
        mad = scaled_mad(chats)
        runtimes = (_trimmed_mean(times, cfg.trim), float(times.mean()), float(np.median(times)))
    else:
        errors = ErrorStats(math.nan, math.nan, math.nan)
        median_se = math.nan
        mad = math.nan
        runtimes = (math.nan, math.nan, math.nan)
    return EstimatorStats(
        estimator=name,
        failures=failures,
        trimmed_rmse=errors.trimmed_rmse,
        mean_sq_error=errors.mean_sq,
        median_sq_error=errors.median_sq,
        median_se=median_se,
        mad_of_estimates=mad,
        runtime_tmean=runtimes[0],
        runtime_mean=runtimes[1],
        runtime_median=runtimes[2],
    )


def run_replications(cfg: SimulationConfig, workers: int = 1) -> SimulationReport:
    """Run the sample -> truncate -> inflate -> estimate pipeline cfg.reps times.

    Statistics are computed from the per-replicate results collected in
    replicate order, so serial and parallel execution produce identical
    reports (runtime statistics aside, which never enter the default
    serialization).
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    runner = partial(_single_replicate, cfg)
    if workers == 1:
        results = [runner(i) for i in range(cfg.reps)]
    else:
        chunk = max(1, cfg.reps // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(runner, range(cfg.reps), chunksize=chunk))
    stats = tuple(_aggregate(cfg, name, results) for name in cfg.estimators)
    return SimulationReport(config=cfg, stats=stats)


class CalibrationResult(NamedTuple):
    median_se: float
    mad_of_estimates: float
    relative_error_percent: float


def calibration_from_report(report: SimulationReport) -> CalibrationResult:
    """Median reported SE against the scaled MAD of the estimates, in percent.

    Positive percentages mean the reported standard errors overstate the
    actual spread; negative means they understate it. A zero MAD (every
    replicate identical) leaves the relative error undefined and flagged.
    """
    if len(report.stats) != 1:
        raise ValueError("SE calibration runs one estimator at a time")
    entry = report.stats[0]
    if entry.failures >= report.config.reps:
        raise AllReplicatesFailedError("every replicate failed; nothing to calibrate")
    if entry.mad_of_estimates == 0.0:
        warnings.warn("zero spread in estimates; relative error undefined")
        return CalibrationResult(entry.median_se, 0.0, math.nan)
    relative = 100.0 * (entry.median_se - entry.mad_of_estimates) / entry.mad_of_estimates
    return CalibrationResult(entry.median_se, entry.mad_of_estimates, relative)


def se_calibration(cfg: SimulationConfig, workers: int = 1) -> CalibrationResult:
    """Run a single-estimator configuration and calibrate its standard errors."""
    if len(cfg.estimators) != 1:
        raise ValueError("SE calibration runs one estimator at a time")
    return calibration_from_report(run_replications(cfg, workers=workers))


@dataclass(frozen=True)
class CurveRow:
    fraction: float
    estimator: str
    mean_C_hat: float
    sd_C_hat: float
    failures: int


def subsample_curve(
    abundances: Sequence[int],
    fractions: Sequence[float],
    reps: int,
    rng: np.random.Generator,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
) -> list[CurveRow]:
    """Estimator behaviour under multinomial subsampling of the reads.

    For each fraction < 1, draws `reps` multinomial subsamples of
    round(fraction * N) reads (N = total reads), rebuilds the table, and
    re-estimates; fraction 1.0 evaluates the full sample exactly once. Rows
    come back fraction-major in the given (ascending) order; a row with no
    usable subsample is flagged with NaN summaries and a full failure count.
    """
    counts = np.asarray(abundances, dtype=np.int64)
    if counts.size == 0 or np.any(counts < 1):
        raise ValueError("abundances must be positive integers")
    fracs = [float(x) for x in fractions]
    if not fracs:
        raise ValueError("no fractions given")
    if any(not (0.0 < x <= 1.0) for x in fracs):
        raise ValueError("fractions must lie in (0, 1]")
    if any(b < a for a, b in zip(fracs, fracs[1:])):
        raise ValueError("fractions must be sorted ascending")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    unknown = [name for name in estimators if name not in ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimators: {unknown}")

    total = int(counts.sum())
    probabilities = counts / total
    rows: list[CurveRow] = []
    for fraction in fracs:
        if fraction == 1.0:
            tables: list[FrequencyCountTable | None] = [from_abundances(counts.tolist())]
        else:
            draw_size = _round_half_away(fraction * total)
            tables = []
            for _ in range(reps):
                draw = rng.multinomial(draw_size, probabilities)
                kept = draw[draw > 0]
                tables.append(from_abundances(kept.tolist()) if kept.size else None)
        for name in estimators:
            estimator = ESTIMATORS[name]
            values: list[float] = []
            failures = 0
            for tbl in tables:
                if tbl is None:
                    failures += 1
                    continue
                try:
                    values.append(estimator(tbl).C_hat)
                except (NoAdmissibleModelError, InsufficientDataError, ValueError):
                    failures += 1
            if values:
                arr = np.asarray(values)
                sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
                rows.append(CurveRow(fraction, name, float(arr.mean()), sd, failures))
            else:
                rows.append(CurveRow(fraction, name, math.nan, math.nan, failures))
    return rows


def runtime_report(cfg: SimulationConfig, workers: int = 1) -> dict[str, tuple[float, float, float]]:
    """Wall-clock seconds inside each estimator call, as (trimmed mean, mean, median).

    Sampling and table construction are excluded; trimming follows the
    error_stats convention with cfg.trim.
    """
    report = run_replications(cfg, workers=workers)
    return {
        entry.estimator: (entry.runtime_tmean, entry.runtime_mean, entry.runtime_median)
        for entry in report.stats
    }


_STAT_FIELDS = (
    "trimmed_rmse",
    "mean_sq_error",
    "median_sq_error",
    "median_se",
    "mad_of_estimates",
)
_RUNTIME_FIELDS = ("runtime_tmean", "runtime_mean", "runtime_median")


def report_rows(
    report: SimulationReport, include_runtimes: bool = False
) -> list[tuple[str, str, float, int, int, int]]:
    """Rows under the fixed column contract (estimator, statistic, value,
    failures, reps, seed).

    Runtime statistics depend on the wall clock, so they are excluded unless
    asked for: the default rows are bit-reproducible from the configuration.
    """
    fields = _STAT_FIELDS + (_RUNTIME_FIELDS if include_runtimes else ())
    rows = []
    for entry in report.stats:
        for field_name in fields:
            rows.append(
                (
                    entry.estimator,
                    field_name,
                    getattr(entry, field_name),
                    entry.failures,
                    report.config.reps,
                    report.config.seed,
                )
            )
    return rows


def _format_value(value: float, precision: int | None) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    if precision is None:
        return repr(float(value))
    return f"{value:.{precision}f}"


def report_to_csv(
    report: SimulationReport,
    include_runtimes: bool = False,
    precision: int | None = None,
) -> str:
    lines = ["estimator,statistic,value,failures,reps,seed"]
    for estimator, statistic, value, failures, reps, seed in report_rows(
        report, include_runtimes
    ):
        lines.append(
            f"{estimator},{statistic},{_format_value(value, precision)},{failures},{reps},{seed}"
        )
    return "\n".join(lines) + "\n"


def _nan_to_none(value: float) -> float | None:
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def report_to_json(report: SimulationReport, include_runtimes: bool = False) -> str:
    fields = _STAT_FIELDS + (_RUNTIME_FIELDS if include_runtimes else ())
    config = asdict(report.config)
    config["estimators"] = list(config["estimators"])
    payload = {
        "config": config,
        "estimators": {
            entry.estimator: {
                **{name: _nan_to_none(getattr(entry, name)) for name in fields},
                "failures": entry.failures,
            }
            for entry in report.stats
        },
    }
    return json.dumps(payload, indent=2) + "\n"

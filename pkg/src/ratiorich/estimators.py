"""Richness estimators and the model-selection ladder.

Three estimators over a frequency-count table:

* ``breakaway`` -- fits ratios from j = 1 and predicts the unseen count from
  the observed singletons, f0 = f_1 / beta0, so C = f0 + sum_j f_j.
* ``breakaway_nof1`` (estimator id ``nof1``) -- distrusts the singleton count
  entirely: fits ratios from j = 2, predicts the true singleton count from the
  doubletons, f1 = f_2 / b with b the fitted ratio at j = 1, then
  f0 = f1 / beta0 and C = f0 + f1 + sum_{j>=2} f_j.
* ``chao1`` -- the classical moment lower bound, used as a comparator.

Model selection walks a fixed ladder of rational degrees (1,0), (2,1), (3,2),
(4,3). A rung is admissible when its fit converges, the fitted denominator
stays positive over the data range, and the implied unseen counts are
positive. Among admissible rungs a larger model replaces a smaller one only
when a nested F comparison of their weighted SSEs is significant, which keeps
the most parsimonious model that actually fits.

Standard errors come from a first-order delta method over a multinomial model
for the frequency counts, combining the counts' sampling variance with the
fitted coefficients' covariance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats as _scipy_stats

from .freqtab import FrequencyCountTable, observed_richness
from .ratiofit import (
    FitResult,
    RankDeficiencyError,
    RationalModel,
    RatioSeries,
    build_ratio_series,
    derived_quantities,
)

__all__ = [
    "LADDER",
    "GROWTH_ALPHA",
    "ESTIMATORS",
    "RichnessEstimate",
    "SelectionTrace",
    "NoAdmissibleModelError",
    "select_model",
    "breakaway",
    "breakaway_nof1",
    "nof1_standard_error",
    "chao1",
]

LADDER: tuple[tuple[int, int], ...] = ((1, 0), (2, 1), (3, 2), (4, 3))
# Significance level for the nested F comparison that lets a larger model
# replace a smaller admissible one.
GROWTH_ALPHA = 0.05
# A fit whose weighted SSE is below this fraction of the weighted response
# energy is treated as exact; no larger model can meaningfully improve on it.
_PERFECT_FIT_REL = 1e-12


@dataclass
class SelectionTrace:
    """Every ladder attempt with its outcome, in attempt order.

    Outcomes: accepted, negative-f0, negative-f1, denominator-violation,
    no-convergence, insufficient-dof, superseded (admissible but beaten by a
    significantly better larger model), not-selected (admissible but not a
    significant improvement over the chosen model). At most one entry is
    accepted.
    """

    tried: list[tuple[int, int, str]] = field(default_factory=list)

    @property
    def accepted(self) -> tuple[int, int] | None:
        for p, q, outcome in self.tried:
            if outcome == "accepted":
                return (p, q)
        return None


class NoAdmissibleModelError(RuntimeError):
    """No ladder rung produced an admissible fit; carries the full trace."""

    def __init__(self, message: str, trace: SelectionTrace):
        super().__init__(message)
        self.trace = trace


@lru_cache(maxsize=None)
def _f_critical(dfn: int, dfd: int) -> float:
    return float(_scipy_stats.f.ppf(1.0 - GROWTH_ALPHA, dfn, dfd))


def _denominator_values(model: RationalModel, grid: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(
        grid.astype(float), np.array((1.0,) + model.alpha)
    )


def _is_perfect(fit: FitResult, series: RatioSeries) -> bool:
    energy = float(np.sum(fit.weights * series.ratio**2))
    return fit.weighted_sse <= _PERFECT_FIT_REL * energy


def select_model(
    series: RatioSeries, require_f1: bool = False
) -> tuple[FitResult, SelectionTrace]:
    """Pick the most parsimonious admissible rational model for a ratio series.

    Fits every ladder rung with enough points (at least p+q+2). A rung is
    admissible when the fit converged, the fitted denominator is positive on
    the integer grid spanning [j_min, J+1], and beta0 > 0 so the implied
    unseen count is positive; with require_f1 the predicted singleton count
    must also be positive (b > 0). Among admissible rungs, walking the ladder
    upward, a larger model supersedes the current choice only when the nested
    F statistic on their weighted SSEs exceeds the GROWTH_ALPHA critical
    value. Each fit's SSE is taken under its own final weights, so the test
    is a selection guide rather than exact inference.
    """
    from .ratiofit import fit_wnls  # local import keeps module load cheap

    n = len(series)
    grid = np.arange(int(series.j[0]), int(series.j[-1]) + 2)
    attempts: list[tuple[int, int, str | None]] = []
    admissible: list[tuple[int, FitResult]] = []  # (index into attempts, fit)

    for p, q in LADDER:
        k = p + q + 1
        if n < k + 1:
            attempts.append((p, q, "insufficient-dof"))
            continue
        try:
            fit = fit_wnls(series, p, q)
        except (RankDeficiencyError, np.linalg.LinAlgError, FloatingPointError):
            attempts.append((p, q, "no-convergence"))
            continue
        if not fit.converged:
            attempts.append((p, q, "no-convergence"))
            continue
        if np.any(_denominator_values(fit.model, grid) <= 0.0):
            attempts.append((p, q, "denominator-violation"))
            continue
        if require_f1:
            one_plus_alpha = 1.0 + sum(fit.model.alpha)
            if not (one_plus_alpha > 0.0) or not (sum(fit.model.beta) / one_plus_alpha > 0.0):
                attempts.append((p, q, "negative-f1"))
                continue
        if not (fit.model.beta[0] > 0.0):
            attempts.append((p, q, "negative-f0"))
            continue
        admissible.append((len(attempts), fit))
        attempts.append((p, q, None))

    trace = SelectionTrace()
    if not admissible:
        trace.tried = [(p, q, outcome) for p, q, outcome in attempts]  # type: ignore[misc]
        raise NoAdmissibleModelError("no admissible model on the ladder", trace)

    labels: dict[int, str] = {}
    current = 0
    for candidate in range(1, len(admissible)):
        cur_fit = admissible[current][1]
        new_fit = admissible[candidate][1]
        if _is_perfect(cur_fit, series):
            labels[candidate] = "not-selected"
            continue
        dfn = new_fit.model.n_coef - cur_fit.model.n_coef
        dfd = n - new_fit.model.n_coef
        improvement = cur_fit.weighted_sse - new_fit.weighted_sse
        significant = False
        if dfd >= 1 and improvement > 0.0:
            f_stat = (improvement / dfn) / max(new_fit.weighted_sse / dfd, 1e-300)
            significant = f_stat > _f_critical(dfn, dfd)
        if significant:
            labels[current] = "superseded"
            current = candidate
        else:
            labels[candidate] = "not-selected"
    labels[current] = "accepted"

    for rank, (attempt_index, _) in enumerate(admissible):
        p, q, _ = attempts[attempt_index]
        attempts[attempt_index] = (p, q, labels[rank])
    trace.tried = [(p, q, outcome) for p, q, outcome in attempts]  # type: ignore[misc]
    return admissible[current][1], trace


@dataclass
class RichnessEstimate:
    """A single estimator's output: the point estimate, its components, and spread.

    f1_hat is only present for the singleton-free estimator; model is absent
    for chao1. Warnings collect anything non-fatal the pipeline reported
    (variance clamps, zero-dof variance scaling, ...).
    """

    estimator: str
    C_hat: float
    f0_hat: float
    f1_hat: float | None
    se: float
    model: RationalModel | None
    warnings: list[str] = field(default_factory=list)


def _count_at_least(table: FrequencyCountTable, j_min: int) -> int:
    return sum(f for j, f in table.entries if j >= j_min)


def breakaway(table: FrequencyCountTable) -> RichnessEstimate:
    """Richness estimate that trusts the observed singleton count.

    Fits ratios on j = 1..J and predicts f0 = f_1/beta0, so
    C = f0 + sum_{j>=1} f_j. Requires a singleton entry; without one the
    singleton-free variant is the right tool.
    """
    f1 = table.get(1)
    if f1 == 0:
        raise ValueError(
            "table has no singleton entry (f_1); use breakaway_nof1, which predicts it"
        )
    with warnings.catch_warnings(record=True) as captured:
        warnings.simplefilter("always")
        series = build_ratio_series(table, 1)
        fit, _ = select_model(series, require_f1=False)
        beta0 = fit.model.beta[0]
        f0_hat = f1 / beta0
        c = observed_richness(table)
        c_hat = f0_hat + c
        se = _breakaway_standard_error(fit, f1, c, f0_hat)
    notes = [str(w.message) for w in captured]
    return RichnessEstimate(
        estimator="breakaway",
        C_hat=float(c_hat),
        f0_hat=float(f0_hat),
        f1_hat=None,
        se=float(se),
        model=fit.model,
        warnings=notes,
    )


def _breakaway_standard_error(fit: FitResult, f1: int, c: int, f0_hat: float) -> float:
    """Delta-method SE for the singleton-using estimator.

    Var(f0) = f1 (C - f1) / (C beta0^2) + f1^2 Var(beta0) / beta0^4 combines
    the multinomial variance of f1 with the fit's coefficient variance;
    Var(n') = n' f0 / C and Cov(f0, n') = -f0 n' / C close the 2x2 system over
    (f0, n') with n' the observed richness. A negative total is clamped to
    zero with a warning.
    """
    quantities = derived_quantities(fit)
    beta0 = quantities.beta0_hat
    c_hat = f0_hat + c
    var_f0 = (
        f1 * (c_hat - f1) / (c_hat * beta0**2)
        + f1**2 * quantities.var_beta0 / beta0**4
    )
    var_n = c * f0_hat / c_hat
    cov_f0_n = -f0_hat * c / c_hat
    var_c = var_f0 + var_n + 2.0 * cov_f0_n
    if var_c < 0.0:
        warnings.warn("negative variance estimate clamped")
        return 0.0
    return math.sqrt(var_c)


def breakaway_nof1(table: FrequencyCountTable) -> RichnessEstimate:
    """Richness estimate that ignores the stored singleton count.

    Fits ratios on j = 2..J, predicts the true singleton count from the
    doubletons, f1 = f_2/b, then the unseen count f0 = f1/beta0; the total is
    C = f0 + f1 + sum_{j>=2} f_j. Any stored f_1 never enters, so the result
    is invariant to singleton corruption.
    """
    if table.get(2) == 0:
        raise ValueError("table has no doubleton entry (f_2); cannot predict singletons")
    with warnings.catch_warnings(record=True) as captured:
        warnings.simplefilter("always")
        series = build_ratio_series(table, 2)
        fit, _ = select_model(series, require_f1=True)
        quantities = derived_quantities(fit)
        f2 = table.get(2)
        f1_hat = f2 / quantities.b_hat
        f0_hat = f1_hat / quantities.beta0_hat
        n = _count_at_least(table, 2)
        c_hat = f0_hat + f1_hat + n
        se = nof1_standard_error(fit, table, f0_hat, f1_hat)
    notes = [str(w.message) for w in captured]
    return RichnessEstimate(
        estimator="nof1",
        C_hat=float(c_hat),
        f0_hat=float(f0_hat),
        f1_hat=float(f1_hat),
        se=float(se),
        model=fit.model,
        warnings=notes,
    )


def nof1_standard_error(
    fit: FitResult, table: FrequencyCountTable, f0_hat: float, f1_hat: float
) -> float:
    """Delta-method SE for the singleton-free estimator.

    C = f0 + f1 + n with n = sum_{j>=2} f_j, so Var(C) sums the full 3x3
    covariance of (f0, f1, n). The upper 2x2 block propagates the multinomial
    variance of f_2 and the fit covariance of (beta0, b) through
    f1 = f_2/b and f0 = f_2/(beta0 b); the remaining terms are the multinomial
    plug-ins Var(n) = n (f0 + f1)/C, Cov(f0, n) = -f0 n / C and
    Cov(f1, n) = -f1 n / C. A negative total is clamped to zero with a warning.
    """
    quantities = derived_quantities(fit)
    beta0 = quantities.beta0_hat
    b = quantities.b_hat
    f2 = float(table.get(2))
    n = float(_count_at_least(table, 2))
    c_hat = f0_hat + f1_hat + n

    var_f0 = (
        f2 * (c_hat - f2) / (c_hat * beta0**2 * b**2)
        + f2**2 * quantities.var_beta0 / (beta0**4 * b**2)
        + 2.0 * f2**2 * quantities.cov_b_beta0 / (beta0**3 * b**3)
        + f2**2 * quantities.var_b / (beta0**2 * b**4)
    )
    cov_f0_f1 = (
        f2 * (c_hat - f2) / (c_hat * beta0 * b**2)
        + f2**2 * quantities.cov_b_beta0 / (beta0**2 * b**3)
        + f2**2 * quantities.var_b / (beta0 * b**4)
    )
    var_f1 = f2 * (c_hat - f2) / (c_hat * b**2) + f2**2 * quantities.var_b / b**4
    var_n = n * (f0_hat + f1_hat) / c_hat
    cov_f0_n = -f0_hat * n / c_hat
    cov_f1_n = -f1_hat * n / c_hat

    var_c = var_f0 + var_f1 + var_n + 2.0 * (cov_f0_f1 + cov_f0_n + cov_f1_n)
    if var_c < 0.0:
        warnings.warn("negative variance estimate clamped")
        return 0.0
    return math.sqrt(var_c)


def chao1(table: FrequencyCountTable) -> RichnessEstimate:
    """Chao1 comparator: C = c + f1^2/(2 f2), bias-corrected when f2 = 0.

    With doubletons present the variance is f2 (r^4/4 + r^3 + r^2/2) for
    r = f1/f2; the f2 = 0 branch uses the standard variance of the
    bias-corrected form, degenerating to zero when there are no singletons.
    """
    c = observed_richness(table)
    f1 = table.get(1)
    f2 = table.get(2)
    if f2 > 0:
        f0_hat = f1 * f1 / (2.0 * f2)
        ratio = f1 / f2
        var = f2 * (ratio**4 / 4.0 + ratio**3 + ratio**2 / 2.0)
    else:
        f0_hat = f1 * (f1 - 1) / 2.0
        c_hat = c + f0_hat
        if f1 == 0:
            var = 0.0
        else:
            var = (
                f1 * (f1 - 1) / 2.0
                + f1 * (2 * f1 - 1) ** 2 / 4.0
                - f1**4 / (4.0 * c_hat)
            )
    c_hat = c + f0_hat
    return RichnessEstimate(
        estimator="chao1",
        C_hat=float(c_hat),
        f0_hat=float(f0_hat),
        f1_hat=None,
        se=float(math.sqrt(max(var, 0.0))),
        model=None,
        warnings=[],
    )


ESTIMATORS = {
    "nof1": breakaway_nof1,
    "breakaway": breakaway,
    "chao1": chao1,
}

"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np

from ratiorich.freqtab import FrequencyCountTable
from ratiorich.ratiofit import RationalModel, eval_model


def table(counts: dict[int, int]) -> FrequencyCountTable:
    return FrequencyCountTable.from_counts(counts)


def random_contiguous_table(
    rng: np.random.Generator, j_start: int = 1, min_points: int = 4
) -> FrequencyCountTable:
    """A table whose nonzero run from j_start supports at least min_points ratios."""
    length = int(rng.integers(min_points + 1, min_points + 10))
    base = rng.integers(50, 400)
    decay = rng.uniform(0.45, 0.85)
    counts = {}
    value = float(base)
    for offset in range(length):
        counts[j_start + offset] = max(1, int(round(value * (1 + rng.uniform(-0.2, 0.2)))))
        value *= decay
    return FrequencyCountTable.from_counts(counts)


def finite_difference_gradient(
    model: RationalModel, j: float, step: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of the model value with respect to every coefficient."""
    theta = model.coefficient_vector()
    p, q = model.p, model.q
    grad = np.empty(theta.size)
    for idx in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[idx] += step
        minus[idx] -= step
        mp = eval_model(RationalModel.from_vector(plus, p, q), j)
        mm = eval_model(RationalModel.from_vector(minus, p, q), j)
        grad[idx] = (mp - mm) / (2 * step)
    return grad


def random_bounded_model(rng: np.random.Generator) -> tuple[RationalModel, float]:
    """A random rational model and evaluation point with denominator away from zero."""
    while True:
        p = int(rng.integers(0, 4))
        q = int(rng.integers(0, 3))
        beta = tuple(rng.uniform(-2.0, 2.0, size=p + 1))
        alpha = tuple(rng.uniform(-0.15, 0.15, size=q))
        j = float(rng.uniform(1.0, 10.0))
        model = RationalModel(beta, alpha)
        den = float(np.polynomial.polynomial.polyval(j, np.array((1.0,) + alpha)))
        if abs(den) > 0.3:
            return model, j

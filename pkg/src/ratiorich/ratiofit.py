"""Rational-polynomial regression on frequency ratios.

The response is the ratio of successive frequency counts, r_j = f_{j+1}/f_j,
modelled as a ratio of polynomials in j:

    m(j) = (b0 + b1 j + ... + bp j^p) / (1 + a1 j + ... + aq j^q)

fitted by iteratively reweighted nonlinear least squares. Weights follow the
first-order variance of a ratio of counts, Var(r_j) ~ r_j^2 (1/f_{j+1} + 1/f_j),
refreshed from the current fitted ratios over a small number of outer passes;
the inner solver is damped Gauss-Newton. The coefficient covariance is the
usual sigma^2 (Jw' Jw)^-1 with Jw the weighted Jacobian at the optimum and
sigma^2 the weighted residual mean square.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .freqtab import FrequencyCountTable, tail_cutoff

__all__ = [
    "RationalModel",
    "RatioSeries",
    "FitResult",
    "RankDeficiencyError",
    "DerivedQuantities",
    "build_ratio_series",
    "eval_model",
    "fit_wnls",
    "derived_quantities",
]

REWEIGHT_PASSES = 3
MAX_ITERATIONS = 200
INITIAL_DAMPING = 1e-3
SSE_REL_TOL = 1e-10
STEP_TOL = 1e-8
_DAMPING_GROWTH = 10.0
_DAMPING_MAX = 1e15
_DAMPING_MIN = 1e-15
# Fitted ratios are floored at this magnitude inside the reweighting rule so
# a near-zero fitted value cannot produce an infinite weight.
_RATIO_FLOOR = 1e-8


class RankDeficiencyError(RuntimeError):
    """Normal equations or coefficient covariance are numerically singular."""


@dataclass(frozen=True)
class RationalModel:
    """Degrees (p, q) and coefficients of the ratio model.

    beta holds b0..bp (numerator, low to high); alpha holds a1..aq. The
    denominator's constant term is fixed at 1.
    """

    beta: tuple[float, ...]
    alpha: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.beta) < 1:
            raise ValueError("numerator needs at least the constant coefficient")

    @property
    def p(self) -> int:
        return len(self.beta) - 1

    @property
    def q(self) -> int:
        return len(self.alpha)

    @property
    def n_coef(self) -> int:
        return len(self.beta) + len(self.alpha)

    def coefficient_vector(self) -> np.ndarray:
        return np.array(self.beta + self.alpha, dtype=float)

    @classmethod
    def from_vector(cls, theta: np.ndarray, p: int, q: int) -> "RationalModel":
        theta = np.asarray(theta, dtype=float)
        if theta.size != p + q + 1:
            raise ValueError("coefficient vector length does not match degrees")
        return cls(tuple(theta[: p + 1]), tuple(theta[p + 1 :]))


def eval_model(model: RationalModel, j: float | np.ndarray) -> float | np.ndarray:
    """Evaluate the rational model at j (scalar or array).

    Raises ZeroDivisionError if the denominator vanishes at any requested j.
    """
    jarr = np.asarray(j, dtype=float)
    num = np.polynomial.polynomial.polyval(jarr, np.asarray(model.beta))
    den = np.polynomial.polynomial.polyval(jarr, np.array((1.0,) + model.alpha))
    if np.any(np.abs(den) < 1e-300):
        raise ZeroDivisionError("model denominator vanishes at requested j")
    out = num / den
    if jarr.ndim == 0:
        return float(out)
    return out


@dataclass
class RatioSeries:
    """Regression dataset of frequency ratios r_j = f_{j+1}/f_j.

    count_lo / count_hi hold the (f_j, f_{j+1}) pairs backing each point;
    the reweighting rule needs them.
    """

    j: np.ndarray
    ratio: np.ndarray
    weight: np.ndarray
    count_lo: np.ndarray
    count_hi: np.ndarray

    def __post_init__(self) -> None:
        self.j = np.asarray(self.j, dtype=int)
        self.ratio = np.asarray(self.ratio, dtype=float)
        self.weight = np.asarray(self.weight, dtype=float)
        self.count_lo = np.asarray(self.count_lo, dtype=float)
        self.count_hi = np.asarray(self.count_hi, dtype=float)
        n = self.j.size
        sizes = {self.ratio.size, self.weight.size, self.count_lo.size, self.count_hi.size}
        if sizes != {n}:
            raise ValueError("ratio series arrays must have equal length")
        if n == 0:
            raise ValueError("empty ratio series")
        if np.any(np.diff(self.j) <= 0):
            raise ValueError("count values must be strictly increasing")
        if np.any(self.ratio <= 0):
            raise ValueError("ratios must be positive")
        if np.any(~np.isfinite(self.weight)) or np.any(self.weight <= 0):
            raise ValueError("weights must be finite and positive")

    def __len__(self) -> int:
        return int(self.j.size)


def build_ratio_series(table: FrequencyCountTable, j_min: int) -> RatioSeries:
    """One point per j in [j_min, J]: r_j = f_{j+1}/f_j, unit initial weights.

    J comes from tail_cutoff, so insufficient data propagates from there.
    """
    big_j = tail_cutoff(table, j_min)
    js = np.arange(j_min, big_j + 1)
    lo = np.array([table.get(int(j)) for j in js], dtype=float)
    hi = np.array([table.get(int(j) + 1) for j in js], dtype=float)
    return RatioSeries(j=js, ratio=hi / lo, weight=np.ones(js.size), count_lo=lo, count_hi=hi)


@dataclass
class FitResult:
    """Fitted coefficients plus everything inference downstream needs.

    cov is the (p+q+1) x (p+q+1) coefficient covariance; weights are the final
    heteroskedasticity weights, kept so callers can reason about the weighted
    SSE on the same scale the fit used.
    """

    model: RationalModel
    cov: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    weighted_sse: float
    weights: np.ndarray


def _design_matrices(j: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    vn = j[:, None] ** np.arange(p + 1)[None, :]
    if q:
        vd = j[:, None] ** np.arange(1, q + 1)[None, :]
    else:
        vd = np.zeros((j.size, 0))
    return vn, vd


def _model_and_jacobian(
    theta: np.ndarray, vn: np.ndarray, vd: np.ndarray, p: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Model values m(j) and the Jacobian dm/dtheta at theta.

    dm/db_i = j^i / den and dm/da_k = -m(j) j^k / den; a vanishing denominator
    propagates as inf/nan and is handled by the caller via the SSE.
    """
    num = vn @ theta[: p + 1]
    if vd.shape[1]:
        den = 1.0 + vd @ theta[p + 1 :]
    else:
        den = np.ones_like(num)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = num / den
        jac_beta = vn / den[:, None]
        if vd.shape[1]:
            jac_alpha = -(m / den)[:, None] * vd
            jac = np.hstack([jac_beta, jac_alpha])
        else:
            jac = jac_beta
    return m, jac, den


def _weighted_sse(
    theta: np.ndarray, vn: np.ndarray, vd: np.ndarray, p: int, r: np.ndarray, w: np.ndarray
) -> float:
    m, _, _ = _model_and_jacobian(theta, vn, vd, p)
    with np.errstate(invalid="ignore", over="ignore"):
        sse = float(np.sum(w * (r - m) ** 2))
    return sse if np.isfinite(sse) else np.inf


def _linearized_init(
    j: np.ndarray, r: np.ndarray, w: np.ndarray, p: int, q: int, rounds: int = 3
) -> np.ndarray | None:
    """Starting point from the iterated linearized rational fit.

    Multiplying the model equation through by the denominator gives
    r = sum_i b_i j^i - sum_k a_k (j^k r) + noise, linear in all coefficients
    but with the noise inflated by the (unknown) denominator. Re-solving with
    the weights divided by the current squared denominator undoes that
    inflation after a few rounds. The result lands close to the nonlinear
    optimum, keeping the damped iteration away from the flat large-coefficient
    ridge where the denominator's normalization stops mattering. Returns None
    when the system is unusable or the implied denominator is not positive
    over the data.
    """
    vd = j[:, None] ** np.arange(1, q + 1)[None, :]
    design = np.hstack([j[:, None] ** np.arange(p + 1)[None, :], -r[:, None] * vd])
    denom_sq = np.ones_like(j)
    theta = None
    for _ in range(rounds):
        sw = np.sqrt(w / denom_sq)
        try:
            theta, *_ = np.linalg.lstsq(sw[:, None] * design, sw * r, rcond=None)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(theta)):
            return None
        den = 1.0 + vd @ theta[p + 1 :]
        if np.any(den <= 0.0):
            return None
        denom_sq = den**2
    return theta


def _gauss_newton(
    theta: np.ndarray,
    vn: np.ndarray,
    vd: np.ndarray,
    p: int,
    r: np.ndarray,
    w: np.ndarray,
) -> tuple[np.ndarray, float, int, bool]:
    """Damped Gauss-Newton on the weighted SSE with fixed weights.

    Multiplicative damping: /10 on an accepted step, x10 on a rejected one.
    Stops when the relative SSE change drops below SSE_REL_TOL, the step's
    max-norm drops below STEP_TOL, or the iteration budget runs out.
    """
    theta = theta.copy()
    sse = _weighted_sse(theta, vn, vd, p, r, w)
    lam = INITIAL_DAMPING
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        m, jac, _ = _model_and_jacobian(theta, vn, vd, p)
        resid = r - m
        if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(resid))):
            break
        grad = jac.T @ (w * resid)
        normal = jac.T @ (w[:, None] * jac)
        damp = np.diag(normal).copy()
        damp[damp <= 0.0] = 1.0
        try:
            delta = np.linalg.solve(normal + lam * np.diag(damp), grad)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular normal equations") from exc
        if not np.all(np.isfinite(delta)):
            raise RankDeficiencyError("singular normal equations")
        step = float(np.max(np.abs(delta))) if delta.size else 0.0
        new_sse = _weighted_sse(theta + delta, vn, vd, p, r, w)
        if new_sse < sse:
            rel_drop = (sse - new_sse) / max(sse, 1e-300)
            theta += delta
            sse = new_sse
            lam = max(lam / _DAMPING_GROWTH, _DAMPING_MIN)
            if rel_drop < SSE_REL_TOL or step < STEP_TOL:
                converged = True
                break
        else:
            lam *= _DAMPING_GROWTH
            if step < STEP_TOL:
                # cannot improve and the proposed step is negligible: stalled
                # at the optimum
                converged = True
                break
            if lam > _DAMPING_MAX:
                break
    return theta, sse, iterations, converged


def fit_wnls(series: RatioSeries, p: int, q: int) -> FitResult:
    """Fit the (p, q) rational model to a ratio series.

    Runs REWEIGHT_PASSES outer passes of damped Gauss-Newton under the
    first-order ratio-variance weights w_j = 1 / [r_j^2 (1/f_{j+1} + 1/f_j)]:
    the first pass evaluates them at the observed ratios, later passes at the
    current fitted ratios. The start is the better (under the first-pass
    weights) of an ordinary polynomial fit of r on j and, for q > 0, the
    iterated linearized rational fit.

    Requires at least p+q+2 points so at least one residual degree of freedom
    remains. Non-convergence is reported through the converged flag, not an
    exception; genuinely singular systems raise RankDeficiencyError.
    """
    if p < 0 or q < 0:
        raise ValueError("degrees must be nonnegative")
    n = len(series)
    k = p + q + 1
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points to fit degrees ({p},{q}), got {n}")
    j = series.j.astype(float)
    r = series.ratio
    vn, vd = _design_matrices(j, p, q)

    # first-pass weights: the first-order ratio variance evaluated at the
    # observed ratios. A unit-weight first pass lets the large low-j ratios
    # dominate in absolute terms and demonstrably drives rational fits up the
    # flat large-coefficient ridge before the variance weights kick in.
    w_observed = 1.0 / (r**2 * (1.0 / series.count_hi + 1.0 / series.count_lo))

    theta = np.zeros(k)
    init = np.polynomial.Polynomial.fit(j, r, deg=p).convert().coef
    theta[: init.size] = init
    if q:
        linearized = _linearized_init(j, r, w_observed, p, q)
        if linearized is not None and _weighted_sse(
            linearized, vn, vd, p, r, w_observed
        ) < _weighted_sse(theta, vn, vd, p, r, w_observed):
            theta = linearized

    w = w_observed
    total_iterations = 0
    converged = False
    for pass_index in range(REWEIGHT_PASSES):
        if pass_index:
            m, _, _ = _model_and_jacobian(theta, vn, vd, p)
            rhat = np.maximum(np.abs(m), _RATIO_FLOOR)
            w = 1.0 / (rhat**2 * (1.0 / series.count_hi + 1.0 / series.count_lo))
        theta, _, iterations, converged = _gauss_newton(theta, vn, vd, p, r, w)
        total_iterations += iterations

    m, jac, _ = _model_and_jacobian(theta, vn, vd, p)
    residuals = r - m
    weighted_sse = float(np.sum(w * residuals**2))
    dof = n - k
    if dof > 0:
        sigma2 = weighted_sse / dof
    else:
        sigma2 = weighted_sse
        warnings.warn("zero residual degrees of freedom; using weighted SSE as variance scale")
    jw = np.sqrt(w)[:, None] * jac
    normal = jw.T @ jw
    try:
        cov = sigma2 * np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("coefficient covariance is singular") from exc
    if not np.all(np.isfinite(cov)):
        raise RankDeficiencyError("coefficient covariance is singular")
    cov = 0.5 * (cov + cov.T)
    diag = np.arange(k)
    cov[diag, diag] = np.maximum(cov[diag, diag], 0.0)
    return FitResult(
        model=RationalModel.from_vector(theta, p, q),
        cov=cov,
        residuals=residuals,
        converged=converged,
        iterations=total_iterations,
        weighted_sse=weighted_sse,
        weights=w,
    )


class DerivedQuantities(NamedTuple):
    beta0_hat: float
    b_hat: float
    var_beta0: float
    var_b: float
    cov_b_beta0: float


def derived_quantities(fit: FitResult) -> DerivedQuantities:
    """The ratio scalar b = (sum of beta) / (1 + sum of alpha) with variances.

    b is the fitted model's value at j = 1; it divides f_2 to predict the true
    singleton count. var_b and cov(b, beta0) come from first-order propagation
    of the coefficient covariance through b's gradient: db/dbeta_i = 1/(1+sa)
    for every i, db/dalpha_k = -b/(1+sa), with sa the sum of the alphas.
    """
    if not fit.converged:
        raise ValueError("derived quantities require a converged fit")
    model = fit.model
    denom = 1.0 + sum(model.alpha)
    if denom == 0.0:
        raise ZeroDivisionError("1 + sum(alpha) vanishes; b is undefined")
    b = sum(model.beta) / denom
    n_beta = len(model.beta)
    grad = np.empty(model.n_coef)
    grad[:n_beta] = 1.0 / denom
    grad[n_beta:] = -b / denom
    var_b = float(grad @ fit.cov @ grad)
    cov_b_beta0 = float(fit.cov[0] @ grad)
    return DerivedQuantities(
        beta0_hat=float(model.beta[0]),
        b_hat=float(b),
        var_beta0=float(fit.cov[0, 0]),
        var_b=var_b,
        cov_b_beta0=cov_b_beta0,
    )

"""Finite-sample pipeline: time transform, B-spline basis, least-squares
choice-probability fit, and plug-in drift/boundary estimators.

The choice probability is fit by OLS of the binary choice on a B-spline
basis in transformed time (a linear probability model, exactly as simple as
it sounds).  Raw fitted values can leave [0, 1]; they are counted and
clamped into [eps, 1-eps] before any log-odds use, and the raw curve stays
retrievable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import BSpline

from .errors import DataValidationError, DriftNearZeroError, EstimationError
from .model import (
    Boundary,
    Dataset,
    ExponentialTransform,
    LogOddsBoundary,
    RationalTransform,
    TimeTransform,
    uniform_clamped_knots,
)

__all__ = [
    "SplineBasis",
    "ChoiceProbabilityModel",
    "DriftEstimate",
    "EstimationResult",
    "default_basis_size",
    "fit_time_transform",
    "fit_choice_probability",
    "estimate_drift",
    "estimate_boundary",
    "estimate_ddm",
]

#: below this the drift is treated as indistinguishable from zero
DRIFT_FLOOR = 1e-4

#: boundary continuation anchors at these sample quantiles of transformed time;
#: the extreme order statistics sit where the spline fit has the most leverage
#: and the least data, so the constant tails start a little inside the range
TAIL_QUANTILE = 0.01


def default_basis_size(n: int) -> int:
    """Default number of basis functions: max(6, floor(n^(1/5)) + 3)."""
    return max(6, int(math.floor(n ** 0.2 + 1e-9)) + 3)


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis of size K with evenly spaced interior knots on ``domain``.

    ``order`` counts coefficients per polynomial piece (cubic = 4).  The
    clamped uniform knot layout makes the basis a partition of unity, so
    constants are exactly representable.  Evaluation clips into the knot
    range, i.e. the spline continues as a constant beyond it.  The default
    domain is the whole unit interval; fits shrink it to the range where
    the transformed times actually put mass, since coefficients of basis
    functions over empty spans are pure noise.
    """

    K: int
    order: int = 4
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.order < 1:
            raise DataValidationError(f"order must be >= 1, got {self.order}")
        if self.K < self.order:
            raise DataValidationError(f"K must be >= order ({self.order}), got {self.K}")
        lo, hi = self.domain
        if not (0.0 <= lo < hi <= 1.0):
            raise DataValidationError("domain must be an interval inside [0, 1]")

    def knots(self) -> np.ndarray:
        return uniform_clamped_knots(self.K, self.order, *self.domain)

    def design_matrix(self, g) -> np.ndarray:
        """Dense (len(g), K) matrix of basis values; points are clipped into the domain."""
        arr = np.clip(np.asarray(g, dtype=float), self.domain[0], self.domain[1])
        dm = BSpline.design_matrix(arr, self.knots(), self.order - 1)
        return np.asarray(dm.todense())


def fit_time_transform(data: Dataset, family: str = "exponential") -> TimeTransform:
    """Pin the transform's scale so the sample median maps to 0.5."""
    med = float(np.median(data.times))
    if family == "exponential":
        return ExponentialTransform(rate=math.log(2.0) / med)
    if family == "rational":
        return RationalTransform(scale=1.0 / med)
    raise DataValidationError(f"unknown transform family {family!r}")


@dataclass(frozen=True)
class ChoiceProbabilityModel:
    """Fitted spline model of the conditional choice probability.

    Evaluation clamps into [clamp_epsilon, 1 - clamp_epsilon]; ``prob_raw``
    returns the unclamped OLS prediction.  Both are constant outside the
    basis domain (the spline's knot range).
    """

    basis: SplineBasis
    transform: TimeTransform
    coefficients: np.ndarray
    clamp_epsilon: float
    gram: np.ndarray  # (1/n) sum q_i q_i'

    def __post_init__(self):
        beta = np.asarray(self.coefficients, dtype=float)
        if beta.shape != (self.basis.K,):
            raise DataValidationError("coefficient vector must have length K")
        if not 0.0 < self.clamp_epsilon < 0.5:
            raise DataValidationError("clamp_epsilon must be in (0, 0.5)")
        beta = beta.copy()
        beta.setflags(write=False)
        object.__setattr__(self, "coefficients", beta)
        gram = np.asarray(self.gram, dtype=float).copy()
        gram.setflags(write=False)
        object.__setattr__(self, "gram", gram)

    @property
    def support(self) -> tuple[float, float]:
        return self.basis.domain

    def design(self, times) -> np.ndarray:
        g = self.transform.transform(np.asarray(times, dtype=float))
        return self.basis.design_matrix(g)

    def prob_from_levels(self, g) -> np.ndarray:
        eps = self.clamp_epsilon
        raw = self.basis.design_matrix(g) @ self.coefficients
        return np.clip(raw, eps, 1.0 - eps)

    def prob_raw(self, times) -> np.ndarray:
        return self.design(times) @ self.coefficients

    def prob(self, times) -> np.ndarray:
        eps = self.clamp_epsilon
        return np.clip(self.prob_raw(times), eps, 1.0 - eps)

    def with_coefficients(self, beta) -> "ChoiceProbabilityModel":
        return ChoiceProbabilityModel(self.basis, self.transform, np.asarray(beta, float),
                                      self.clamp_epsilon, self.gram)

    def clamp_info(self, times) -> dict:
        raw = self.prob_raw(times)
        eps = self.clamp_epsilon
        return {
            "n": int(raw.size),
            "clamped": int(np.sum((raw < eps) | (raw > 1.0 - eps))),
            "outside_unit": int(np.sum((raw < 0.0) | (raw > 1.0))),
        }


def spline_basis_for_data(data: Dataset, transform: TimeTransform, K: int,
                          order: int = 4, tail_quantile: float = TAIL_QUANTILE) -> SplineBasis:
    """Basis whose knot range covers the transformed times up to small tail quantiles.

    Basis functions over spans the data never visits have coefficients that
    are pure noise and leak into the estimated boundary through the
    continuation, so the knot range is trimmed to where the mass is; beyond
    it the fit continues as a constant.
    """
    g = transform.transform(data.times)
    lo, hi = np.quantile(g, [tail_quantile, 1.0 - tail_quantile])
    if not lo < hi:  # nearly-degenerate time distributions
        lo, hi = float(np.min(g)), float(np.max(g))
        if not lo < hi:
            lo, hi = max(0.0, lo - 1e-6), min(1.0, hi + 1e-6)
    return SplineBasis(K=K, order=order, domain=(float(lo), float(hi)))


def fit_choice_probability(data: Dataset, basis: SplineBasis, transform: TimeTransform,
                           clamp_epsilon: float = 1e-3) -> ChoiceProbabilityModel:
    """OLS of the binary choice on the spline basis in transformed time."""
    n = data.n
    if n < basis.K:
        raise EstimationError(f"need n >= K, got n={n} < K={basis.K}; reduce K")
    g = transform.transform(data.times)
    q = basis.design_matrix(g)
    qtq = q.T @ q
    qty = q.T @ data.choices.astype(np.float64)
    # an empty knot span leaves a zero row/column and an exactly singular system
    try:
        cond = np.linalg.cond(qtq)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond rarely raises
        raise EstimationError("design matrix is degenerate; reduce K") from exc
    if not np.isfinite(cond) or cond > 1e12:
        raise EstimationError(
            f"spline design is rank deficient (cond={cond:.2e}); reduce K "
            "so every knot span contains observations"
        )
    beta = np.linalg.solve(qtq, qty)
    return ChoiceProbabilityModel(basis=basis, transform=transform, coefficients=beta,
                                  clamp_epsilon=clamp_epsilon, gram=qtq / n)


class DriftEstimate(NamedTuple):
    drift: float
    mean_imbalance: float
    mean_time: float
    imbalance_values: np.ndarray


def estimate_drift(data: Dataset, model: ChoiceProbabilityModel,
                   factor_two: bool = True) -> DriftEstimate:
    """Plug-in drift estimate sqrt(mean_imbalance / (2 * mean_time)).

    ``factor_two=False`` switches to sqrt(mean_imbalance / mean_time) (and
    the matching boundary scale in :func:`estimate_boundary`); that variant
    does not reproduce the generating parameters and exists only for
    side-by-side comparison.
    """
    p = model.prob(data.times)
    i_vals = (2.0 * p - 1.0) * (np.log(p) - np.log1p(-p))
    i_bar = float(np.mean(i_vals))
    t_bar = float(np.mean(data.times))
    denom = 2.0 * t_bar if factor_two else t_bar
    drift = math.sqrt(max(i_bar, 0.0) / denom)
    if drift < DRIFT_FLOOR:
        raise DriftNearZeroError(
            f"estimated drift {drift:.2e} is indistinguishable from zero; "
            "the boundary is not identified for balanced choices"
        )
    return DriftEstimate(drift=drift, mean_imbalance=i_bar, mean_time=t_bar,
                         imbalance_values=i_vals)


def estimate_boundary(delta_hat: float, model: ChoiceProbabilityModel,
                      factor_two: bool = True) -> Boundary:
    """Plug-in boundary log_odds(p_hat(t)) / (2 * delta_hat).

    Outside the time range the fit saw, the boundary continues the edge
    values as constants: nothing identifies its shape where the data put no
    mass, and simulated paths must pass through the early, data-free region.
    """
    if not (math.isfinite(delta_hat) and delta_hat > 0.0):
        raise DriftNearZeroError("boundary estimate needs a positive drift estimate")
    return LogOddsBoundary.from_drift(model.prob, delta_hat, factor_two=factor_two)


@dataclass(frozen=True)
class EstimationResult:
    """Everything the downstream test needs from one fitted dataset."""

    drift_hat: float
    boundary_hat: Boundary
    choice_model: ChoiceProbabilityModel
    mean_imbalance_hat: float
    mean_time_hat: float
    gram_matrix: np.ndarray
    n: int
    imbalance_values: np.ndarray
    clamp_count: int
    outside_unit_count: int

    @property
    def transform(self) -> TimeTransform:
        return self.choice_model.transform

    @property
    def K(self) -> int:
        return self.choice_model.basis.K


def estimate_ddm(data: Dataset, K: int | None = None, order: int = 4,
                 family: str = "exponential", clamp_epsilon: float = 1e-3,
                 factor_two: bool = True, transform: TimeTransform | None = None,
                 tail_quantile: float = TAIL_QUANTILE) -> EstimationResult:
    """Run the whole pipeline: transform, spline fit, drift, boundary.

    Pass ``transform`` to use a fixed time transform instead of fitting one
    to the sample median.
    """
    if K is None:
        K = default_basis_size(data.n)
    if transform is None:
        transform = fit_time_transform(data, family=family)
    basis = spline_basis_for_data(data, transform, K, order=order,
                                  tail_quantile=tail_quantile)
    model = fit_choice_probability(data, basis, transform, clamp_epsilon=clamp_epsilon)
    drift_est = estimate_drift(data, model, factor_two=factor_two)
    boundary = estimate_boundary(drift_est.drift, model, factor_two=factor_two)
    clamp = model.clamp_info(data.times)
    return EstimationResult(
        drift_hat=drift_est.drift,
        boundary_hat=boundary,
        choice_model=model,
        mean_imbalance_hat=drift_est.mean_imbalance,
        mean_time_hat=drift_est.mean_time,
        gram_matrix=model.gram,
        n=data.n,
        imbalance_values=drift_est.imbalance_values,
        clamp_count=clamp["clamped"],
        outside_unit_count=clamp["outside_unit"],
    )

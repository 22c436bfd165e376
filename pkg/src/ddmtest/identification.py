"""Population-level identification: revealed drift, revealed boundary, and
the cross-menu consistency diagnostics.

Given a stochastic choice function (p, F) the drift is identified as
sqrt(mean_imbalance / (2 * mean_time)) and the boundary as the log-odds of
p(t) divided by twice the drift.  A variant omitting the factors of two is
available in the estimator module behind ``factor_two=False`` for
comparison; only the factored form round-trips against the simulator (a
joint sqrt(2) rescaling of drift and boundary changes the hitting law at
unit volatility), so it is what everything downstream uses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DataValidationError, DomainError, NumericalError
from .model import Boundary, Dataset, LogOddsBoundary

__all__ = [
    "AverageQuantities",
    "average_quantities",
    "revealed_drift",
    "revealed_boundary",
    "RevealedQuantities",
    "revealed_from_dataset",
    "menu_consistency",
    "MenuConsistencyReport",
]


class AverageQuantities(NamedTuple):
    mean_imbalance: float
    mean_time: float
    mean_choice_prob: float


def average_quantities(p, times, weights=None) -> AverageQuantities:
    """Average imbalance, decision time, and choice probability under F.

    ``times`` carries the distribution F: an empirical sample (uniform
    weights) or explicit quadrature nodes with ``weights``.  ``p`` is a
    probability in (0,1), constant or as a vectorized function of time.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise DataValidationError("times must be a nonempty 1-d array")
    if not np.all(np.isfinite(t)):
        raise NumericalError(f"nonfinite time in distribution: t={t[~np.isfinite(t)][0]}")
    if weights is None:
        w = np.full(t.size, 1.0 / t.size)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != t.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DataValidationError("weights must be nonnegative, finite, aligned with times")
        total = w.sum()
        if total <= 0:
            raise DataValidationError("weights must not all be zero")
        w = w / total
    pvals = np.asarray(p(t) if callable(p) else p, dtype=float)
    if pvals.ndim == 0:
        pvals = np.full(t.size, float(pvals))
    bad = ~(np.isfinite(pvals) & (pvals > 0.0) & (pvals < 1.0))
    if np.any(bad):
        raise NumericalError(
            f"choice probability outside (0,1) at t={t[bad][0]:g}: p={pvals[bad][0]!r}"
        )
    logodds = np.log(pvals) - np.log1p(-pvals)
    i_vals = (2.0 * pvals - 1.0) * logodds
    return AverageQuantities(
        mean_imbalance=float(w @ i_vals),
        mean_time=float(w @ t),
        mean_choice_prob=float(w @ pvals),
    )


def revealed_drift(mean_imbalance: float, mean_time: float) -> float:
    """sqrt(mean_imbalance / (2 * mean_time)); zero exactly when the imbalance is zero."""
    if not (math.isfinite(mean_time) and mean_time > 0.0):
        raise DomainError(f"mean decision time must be positive, got {mean_time}")
    if not (math.isfinite(mean_imbalance) and mean_imbalance >= 0.0):
        raise DomainError(f"mean imbalance must be >= 0, got {mean_imbalance}")
    return math.sqrt(mean_imbalance / (2.0 * mean_time))


def revealed_boundary(p: Callable[[np.ndarray], np.ndarray], delta_tilde: float) -> LogOddsBoundary:
    """Boundary implied by p and a positive revealed drift: log_odds(p(t)) / (2*drift).

    Undefined at zero drift.  The returned boundary may be negative wherever
    p(t) < 0.5; inspect ``sign_diagnostic`` rather than expecting a clip.
    """
    if not (math.isfinite(delta_tilde) and delta_tilde > 0.0):
        raise DomainError(
            "revealed boundary is undefined when the revealed drift is zero or negative"
        )
    return LogOddsBoundary.from_drift(p, delta_tilde, factor_two=True)


@dataclass(frozen=True)
class RevealedQuantities:
    """Identified quantities for one pair, under the convention that the
    first alternative is the weakly more often chosen one.

    ``sign`` is +1 if the original labeling already satisfied that
    convention and -1 if the labels were swapped; the signed drift
    ``sign * revealed_drift`` is what the cross-menu additivity check uses.
    """

    revealed_drift: float
    revealed_boundary: Boundary | None
    mean_imbalance: float
    mean_time: float
    mean_choice_prob: float
    sign: int = 1
    label: tuple | None = None
    time_grid: np.ndarray | None = None

    def __post_init__(self):
        if self.mean_choice_prob < 0.5 - 1e-12:
            raise DataValidationError(
                "mean_choice_prob must be >= 0.5; relabel the pair (sign carries the flip)"
            )
        if self.revealed_drift < 0.0:
            raise DataValidationError("revealed_drift is nonnegative by convention")
        if self.sign not in (-1, 1):
            raise DataValidationError("sign must be +1 or -1")
        expected = revealed_drift(self.mean_imbalance, self.mean_time)
        if abs(self.revealed_drift - expected) > 1e-9 * max(1.0, expected):
            raise DataValidationError(
                f"revealed_drift={self.revealed_drift!r} inconsistent with "
                f"sqrt(mean_imbalance / (2*mean_time)) = {expected!r}"
            )

    @property
    def signed_drift(self) -> float:
        return self.sign * self.revealed_drift


def revealed_from_dataset(data: Dataset, K: int | None = None, order: int = 4,
                          family: str = "exponential",
                          clamp_epsilon: float = 1e-3) -> RevealedQuantities:
    """Finite-sample revealed quantities for one pair via the spline pipeline.

    If the first alternative was chosen less than half the time the labels
    are swapped before estimation and the flip is recorded in ``sign``.
    """
    from .estimator import estimate_ddm

    sign = 1
    if float(np.mean(data.choices)) < 0.5:
        data = data.flipped()
        sign = -1
    result = estimate_ddm(data, K=K, order=order, family=family, clamp_epsilon=clamp_epsilon)
    grid = np.quantile(data.times, np.linspace(0.05, 0.95, 41))
    return RevealedQuantities(
        revealed_drift=result.drift_hat,
        revealed_boundary=result.boundary_hat,
        mean_imbalance=result.mean_imbalance_hat,
        mean_time=result.mean_time_hat,
        mean_choice_prob=float(np.mean(data.choices)),
        sign=sign,
        label=data.label,
        time_grid=grid,
    )


@dataclass(frozen=True)
class BoundaryCheck:
    pair_a: tuple
    pair_b: tuple
    sup_discrepancy: float
    flagged: bool


@dataclass(frozen=True)
class DriftCheck:
    triple: tuple
    residual: float
    flagged: bool


@dataclass(frozen=True)
class MenuConsistencyReport:
    """Descriptive cross-menu diagnostics; no p-values are attached."""

    boundary_checks: tuple
    drift_checks: tuple
    notices: tuple
    tol_boundary: float
    tol_drift: float

    @property
    def empty(self) -> bool:
        return not self.boundary_checks and not self.drift_checks

    @property
    def any_flagged(self) -> bool:
        return any(c.flagged for c in self.boundary_checks) or any(
            c.flagged for c in self.drift_checks
        )


def _signed_drift(estimates: Mapping, a, b):
    """Signed drift for the ordered pair (a, b), using either stored orientation."""
    if (a, b) in estimates:
        return estimates[(a, b)].signed_drift
    if (b, a) in estimates:
        return -estimates[(b, a)].signed_drift
    return None


def menu_consistency(estimates: Mapping[tuple, RevealedQuantities],
                     tol_boundary: float, tol_drift: float,
                     grid=None) -> MenuConsistencyReport:
    """Check that all pairs share one boundary and that drifts are additive.

    Boundary agreement is measured as the sup discrepancy over a common
    evaluation grid for every two pairs; drift additivity as
    |d(x,y) + d(y,z) - d(x,z)| for every triple whose three pairs are all
    present (missing pairs skip the triple with a notice).
    """
    if tol_boundary <= 0 or tol_drift <= 0:
        raise DataValidationError("tolerances must be positive")
    keys = list(estimates.keys())
    notices: list[str] = []
    boundary_checks: list[BoundaryCheck] = []
    drift_checks: list[DriftCheck] = []

    if grid is None and len(keys) >= 2:
        grids = [estimates[k].time_grid for k in keys]
        if any(g is None for g in grids):
            raise DataValidationError(
                "no common evaluation grid: pass `grid` or attach time_grid to each estimate"
            )
        lo = max(float(np.min(g)) for g in grids)
        hi = min(float(np.max(g)) for g in grids)
        if hi <= lo:
            notices.append("central time ranges do not overlap; boundary checks skipped")
            grid = None
        else:
            grid = np.linspace(lo, hi, 101)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        for ka, kb in itertools.combinations(keys, 2):
            ba, bb = estimates[ka].revealed_boundary, estimates[kb].revealed_boundary
            if ba is None or bb is None:
                notices.append(f"boundary missing for {ka} or {kb}; comparison skipped")
                continue
            sup = float(np.max(np.abs(ba.values(grid) - bb.values(grid))))
            boundary_checks.append(BoundaryCheck(ka, kb, sup, sup > tol_boundary))

    labels = sorted({x for k in keys for x in k})
    seen = set()
    for x, y, z in itertools.permutations(labels, 3):
        key = frozenset((x, y, z))
        if key in seen:
            continue
        dxy = _signed_drift(estimates, x, y)
        dyz = _signed_drift(estimates, y, z)
        dxz = _signed_drift(estimates, x, z)
        if dxy is None or dyz is None or dxz is None:
            continue
        seen.add(key)
        residual = abs(dxy + dyz - dxz)
        drift_checks.append(DriftCheck((x, y, z), residual, residual > tol_drift))
    for key in {frozenset(c) for c in itertools.combinations(labels, 3)} - seen:
        if len(key) == 3:
            notices.append(f"triple {tuple(sorted(key))} skipped: a pair is missing")

    return MenuConsistencyReport(
        boundary_checks=tuple(boundary_checks),
        drift_checks=tuple(drift_checks),
        notices=tuple(notices),
        tol_boundary=tol_boundary,
        tol_drift=tol_drift,
    )

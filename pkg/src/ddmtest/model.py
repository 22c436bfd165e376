"""Core domain types: trial data, time transforms, stopping boundaries, and
the scalar transforms (log-odds, choice imbalance) everything else builds on.

All types are immutable after construction and all functions are pure, so
they can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataValidationError, DomainError

__all__ = [
    "TrialRecord",
    "Dataset",
    "DdmParameters",
    "log_odds",
    "imbalance",
    "boundary_eval",
    "Boundary",
    "ConstantBoundary",
    "CollapsingBoundary",
    "TransformedSplineBoundary",
    "LogOddsBoundary",
    "TimeTransform",
    "ExponentialTransform",
    "RationalTransform",
]


# ---------------------------------------------------------------------------
# scalar transforms


def _check_open_unit(p: np.ndarray, what: str = "probability") -> None:
    if p.size == 0:
        return
    if not np.all(np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        bad = p if p.ndim == 0 else p[~(np.isfinite(p) & (p > 0.0) & (p < 1.0))][:3]
        raise DomainError(f"{what} must lie strictly inside (0, 1); offending value(s): {bad}")


def log_odds(p):
    """ln(p / (1-p)).  Antisymmetric about p = 0.5.

    Accepts scalars or arrays; raises :class:`DomainError` unless every
    value lies strictly inside (0, 1).  No clamping happens here; callers
    that need clamped probabilities do it before calling.
    """
    arr = np.asarray(p, dtype=float)
    _check_open_unit(arr)
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if arr.ndim == 0 else out


def imbalance(p):
    """Choice imbalance (2p-1) * log_odds(p).

    Equals the Kullback-Leibler divergence between the Bernoulli(p) choice
    distribution and its label-swapped counterpart: zero at p = 0.5,
    symmetric about 0.5, and nonnegative everywhere on (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    _check_open_unit(arr)
    out = (2.0 * arr - 1.0) * (np.log(arr) - np.log1p(-arr))
    return float(out) if arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# time transforms G: (0, inf) -> (0, 1)


class TimeTransform:
    """Strictly increasing bijection from (0, inf) onto (0, 1).

    Used to put spline knots and moment thresholds on a bounded domain.
    Implementations expose ``transform`` (G), ``inverse`` (G^-1) and a
    ``params`` dict for report serialization.

    Round-trip precision: float64 represents G(t) with absolute error
    ~1e-16 near 1, so G^-1(G(t)) can only be accurate to 1e-12 relative
    while G(t) stays below roughly 1 - 1e-5 (exponential: rate*t <~ 11).
    """

    name = "base"

    def transform(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def inverse(self, u):  # pragma: no cover - interface
        raise NotImplementedError

    def params(self) -> dict:  # pragma: no cover - interface
        raise NotImplementedError


def _check_time_nonneg(t: np.ndarray) -> None:
    if np.any(t < 0.0) or not np.all(np.isfinite(t)):
        raise DomainError(f"time must be finite and >= 0, got {t[t < 0][:3] if t.ndim else t}")


def _check_unit_closed(u: np.ndarray) -> None:
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise DomainError("quantile level must lie in [0, 1]")


@dataclass(frozen=True)
class ExponentialTransform(TimeTransform):
    """G(t) = 1 - exp(-rate * t), the CDF of an exponential waiting time."""

    rate: float
    name = "exponential"

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0.0):
            raise DataValidationError(f"rate must be positive and finite, got {self.rate}")

    def transform(self, t):
        arr = np.asarray(t, dtype=float)
        _check_time_nonneg(arr)
        out = -np.expm1(-self.rate * arr)
        return float(out) if arr.ndim == 0 else out

    def inverse(self, u):
        arr = np.asarray(u, dtype=float)
        _check_unit_closed(arr)
        with np.errstate(divide="ignore"):
            out = -np.log1p(-arr) / self.rate
        return float(out) if arr.ndim == 0 else out

    def params(self):
        return {"family": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class RationalTransform(TimeTransform):
    """G(t) = scale*t / (1 + scale*t); heavy-tailed alternative to the exponential."""

    scale: float
    name = "rational"

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise DataValidationError(f"scale must be positive and finite, got {self.scale}")

    def transform(self, t):
        arr = np.asarray(t, dtype=float)
        _check_time_nonneg(arr)
        ct = self.scale * arr
        out = ct / (1.0 + ct)
        return float(out) if arr.ndim == 0 else out

    def inverse(self, u):
        arr = np.asarray(u, dtype=float)
        _check_unit_closed(arr)
        with np.errstate(divide="ignore"):
            out = arr / (self.scale * (1.0 - arr))
        return float(out) if arr.ndim == 0 else out

    def params(self):
        return {"family": "rational", "scale": self.scale}


# ---------------------------------------------------------------------------
# boundaries


class Boundary:
    """Evaluable symmetric stopping boundary b(t), t >= 0.

    The diffusion is stopped the first time |Z_t| >= b(t); only the
    symmetric pair (+b, -b) is ever represented.  Implementations must be
    deterministic.  Estimated boundaries may be negative pointwise (see
    ``sign_diagnostic``); generator-facing code rejects b(0) <= 0.
    """

    def values(self, times) -> np.ndarray:
        """Vectorized evaluation on an array of times."""
        raise NotImplementedError

    def __call__(self, t: float) -> float:
        return float(self.values(np.asarray([t], dtype=float))[0])

    def sign_diagnostic(self, times) -> dict:
        """Count where the boundary dips to zero or below on the given grid."""
        vals = self.values(np.asarray(times, dtype=float))
        neg = int(np.sum(vals <= 0.0))
        return {
            "n_evaluated": int(vals.size),
            "n_nonpositive": neg,
            "min_value": float(np.min(vals)) if vals.size else math.nan,
        }


def boundary_eval(boundary: Boundary, t: float) -> float:
    """Evaluate a boundary at a single time point (t >= 0)."""
    if t < 0 or not math.isfinite(t):
        raise DomainError(f"time must be finite and >= 0, got {t}")
    return boundary(t)


@dataclass(frozen=True)
class ConstantBoundary(Boundary):
    level: float

    def __post_init__(self):
        if not (math.isfinite(self.level) and self.level >= 0.0):
            raise DataValidationError(f"boundary level must be finite and >= 0, got {self.level}")

    def values(self, times):
        arr = np.asarray(times, dtype=float)
        return np.full(arr.shape, self.level)


@dataclass(frozen=True)
class CollapsingBoundary(Boundary):
    """Parametric collapsing boundary.

    family "exponential": b(t) = b0 * exp(-rate * t)
    family "hyperbolic":  b(t) = b0 / (1 + rate * t)
    """

    family: str
    b0: float
    rate: float

    def __post_init__(self):
        if self.family not in ("exponential", "hyperbolic"):
            raise DataValidationError(f"unknown collapsing family {self.family!r}")
        if not (math.isfinite(self.b0) and self.b0 > 0.0):
            raise DataValidationError(f"b0 must be positive, got {self.b0}")
        if not (math.isfinite(self.rate) and self.rate >= 0.0):
            raise DataValidationError(f"rate must be >= 0, got {self.rate}")

    def values(self, times):
        t = np.asarray(times, dtype=float)
        if self.family == "exponential":
            return self.b0 * np.exp(-self.rate * t)
        return self.b0 / (1.0 + self.rate * t)


def uniform_clamped_knots(n_basis: int, order: int, lo: float = 0.0,
                          hi: float = 1.0) -> np.ndarray:
    """Clamped knot vector with evenly spaced interior knots on (lo, hi)."""
    if order < 1:
        raise DataValidationError(f"spline order must be >= 1, got {order}")
    if n_basis < order:
        raise DataValidationError(f"need at least {order} basis functions for order {order}")
    if not lo < hi:
        raise DataValidationError("knot range must have lo < hi")
    grid = np.linspace(lo, hi, n_basis - order + 2)
    return np.concatenate([np.full(order, lo), grid[1:-1], np.full(order, hi)])


@dataclass(frozen=True)
class TransformedSplineBoundary(Boundary):
    """B-spline in transformed time: b(t) = spline(G(t)).

    The spline lives on [0, 1]; since G maps onto (0, 1) the evaluation
    point is clipped into the knot range, which makes extrapolation beyond
    the range a constant continuation.
    """

    transform: TimeTransform
    coefficients: tuple
    order: int = 4

    def __post_init__(self):
        coefs = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "coefficients", tuple(coefs.tolist()))
        if coefs.size < self.order:
            raise DataValidationError("need at least `order` coefficients")
        if not np.all(np.isfinite(coefs)):
            raise DataValidationError("spline coefficients must be finite")
        # with clamped knots a nonnegative-coefficient check is sufficient for
        # b >= 0 only in one direction, so check values on a dense grid
        vals = self._spline()(np.linspace(0.0, 1.0, 513))
        if np.any(vals < 0.0):
            raise DataValidationError("spline boundary must be nonnegative on [0, 1]")

    def _spline(self):
        from scipy.interpolate import BSpline

        coefs = np.asarray(self.coefficients, dtype=float)
        knots = uniform_clamped_knots(coefs.size, self.order)
        return BSpline(knots, coefs, self.order - 1, extrapolate=False)

    def values(self, times):
        t = np.asarray(times, dtype=float)
        g = np.clip(self.transform.transform(t), 0.0, 1.0)
        return self._spline()(g)


@dataclass(frozen=True)
class LogOddsBoundary(Boundary):
    """Boundary implied by a choice-probability curve: b(t) = log_odds(p(t)) / scale.

    ``prob`` must map an array of times to probabilities strictly inside
    (0, 1) (estimated curves are clamped before they get here).  The usual
    scale is twice the drift.  Values can be negative wherever p(t) < 0.5;
    that is reported through ``sign_diagnostic`` rather than clipped.
    """

    prob: Callable[[np.ndarray], np.ndarray]
    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise DomainError(f"scale must be positive and finite, got {self.scale}")

    @classmethod
    def from_drift(cls, prob, drift: float, factor_two: bool = True) -> "LogOddsBoundary":
        return cls(prob=prob, scale=(2.0 * drift) if factor_two else drift)

    def values(self, times):
        t = np.asarray(times, dtype=float)
        p = np.asarray(self.prob(t), dtype=float)
        return (np.log(p) - np.log1p(-p)) / self.scale if _all_open_unit(p) else _strict(p, self.scale)


def _all_open_unit(p: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(p)) and np.all(p > 0.0) and np.all(p < 1.0))


def _strict(p: np.ndarray, scale: float) -> np.ndarray:
    _check_open_unit(p, "choice probability")
    return (np.log(p) - np.log1p(-p)) / scale  # pragma: no cover - raises above


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class TrialRecord:
    """One observed trial: a decision time and a binary choice (1 = first alternative)."""

    decision_time: float
    choice: int

    def __post_init__(self):
        if not (math.isfinite(self.decision_time) and self.decision_time > 0.0):
            raise DataValidationError(
                f"decision_time must be finite and > 0, got {self.decision_time}"
            )
        if self.choice not in (0, 1):
            raise DataValidationError(f"choice must be 0 or 1, got {self.choice}")


class Dataset:
    """Immutable collection of (decision time, choice) pairs.

    Stored as read-only numpy arrays for fast aggregation.  ``label`` can
    carry an (x, y) pair identifier; ``meta`` holds generator diagnostics
    such as censoring counts.  Records are assumed i.i.d. draws; that is a
    modeling assumption and is not checked.
    """

    __slots__ = ("times", "choices", "label", "meta")

    def __init__(self, times, choices, label=None, meta=None):
        t = np.ascontiguousarray(times, dtype=np.float64)
        c = np.ascontiguousarray(choices)
        if t.ndim != 1 or c.ndim != 1 or t.size != c.size:
            raise DataValidationError("times and choices must be 1-d arrays of equal length")
        if t.size == 0:
            raise DataValidationError("dataset must contain at least one record")
        if not np.all(np.isfinite(t)) or np.any(t <= 0.0):
            raise DataValidationError("all decision times must be finite and > 0")
        if not np.all((c == 0) | (c == 1)):
            raise DataValidationError("all choices must be 0 or 1")
        c = c.astype(np.uint8)
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "choices", c)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "meta", dict(meta) if meta else {})

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord], label=None, meta=None) -> "Dataset":
        recs = list(records)
        return cls(
            [r.decision_time for r in recs],
            [r.choice for r in recs],
            label=label,
            meta=meta,
        )

    def records(self) -> list[TrialRecord]:
        return [TrialRecord(float(t), int(c)) for t, c in zip(self.times, self.choices)]

    def flipped(self) -> "Dataset":
        """Same data with the two alternatives relabeled (choice -> 1 - choice)."""
        return Dataset(self.times, 1 - self.choices.astype(np.int64), label=self.label, meta=self.meta)

    @property
    def n(self) -> int:
        return int(self.times.size)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        lab = f", label={self.label!r}" if self.label else ""
        return f"Dataset(n={self.n}{lab})"


@dataclass(frozen=True)
class DdmParameters:
    """Drift and volatility of the evidence process Z_t = drift*t + volatility*B_t.

    Volatility is pinned to 1: any process with volatility a > 0 has the same
    stopping law as one with drift/a, boundary/a, and unit volatility, so the
    unit-volatility normalization is imposed at construction.
    """

    drift: float
    volatility: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.drift):
            raise DataValidationError(f"drift must be finite, got {self.drift}")
        if self.volatility != 1.0:
            raise DataValidationError(
                "volatility is normalized to 1; rescale drift and boundary instead"
            )

"""Sampling of first-passage times and exit sides for Z_t = drift*t + B_t.

The process runs on an Euler grid; between grid points a Brownian-bridge
correction imputes crossings of the (locally linear) barrier, which removes
the systematic overestimation of hitting times that a plain Euler check
suffers from.  Within-step crossings found by the bridge are placed at the
step midpoint; grid crossings are placed by linear interpolation.

Randomness is counter-based and keyed per path (see :mod:`ddmtest._fpt`),
so batches are deterministic for a fixed master seed regardless of
parallelism, and perturbed-parameter runs share Brownian paths.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, TYPE_CHECKING

import numpy as np

from . import _fpt
from .errors import (
    CensoringError,
    DataValidationError,
    DegenerateBoundaryError,
    SimulationError,
)
from .model import Boundary, Dataset, DdmParameters, TimeTransform

if TYPE_CHECKING:  # pragma: no cover
    from .spectest import MomentSpec, MomentVector

__all__ = [
    "SimConfig",
    "SimOutcome",
    "default_t_max",
    "sample_hitting",
    "simulate_dataset",
    "simulate_model_moments",
]

#: fraction of censored paths that triggers a warning / an error
CENSOR_WARN_FRACTION = 0.01
CENSOR_ERROR_FRACTION = 0.20


def default_t_max(transform: TimeTransform | None = None) -> float:
    """Censoring horizon: the 1 - 1e-6 quantile of the time transform, else 50."""
    if transform is None:
        return 50.0
    return float(transform.inverse(1.0 - 1e-6))


@dataclass(frozen=True)
class SimConfig:
    """Discretization and stream settings for path simulation."""

    time_step: float = 1e-3
    t_max: float = 50.0
    bridge_correction: bool = True
    master_seed: int = 0
    num_paths: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.time_step) and self.time_step > 0.0):
            raise DataValidationError(f"time_step must be positive, got {self.time_step}")
        if not (math.isfinite(self.t_max) and self.t_max >= self.time_step):
            raise DataValidationError("t_max must be finite and >= time_step")
        if self.master_seed < 0:
            raise DataValidationError("master_seed must be nonnegative")
        if self.num_paths < 1:
            raise DataValidationError("num_paths must be positive")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.time_step - 1e-9))

    def time_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1, dtype=np.float64) * self.time_step


@dataclass(frozen=True)
class SimOutcome:
    """Result of one simulated path."""

    hitting_time: float
    upper_exit: bool
    censored: bool


def boundary_tables(variants: Sequence[tuple[float, Boundary]], config: SimConfig):
    """Tabulate (drift, boundary) variants on the step grid for the batch kernel."""
    grid = config.time_grid()
    drifts = np.array([d for d, _ in variants], dtype=np.float64)
    btab = np.empty((len(variants), grid.size), dtype=np.float64)
    for i, (_, boundary) in enumerate(variants):
        vals = np.asarray(boundary.values(grid), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise SimulationError("boundary evaluated to a nonfinite value on the time grid")
        btab[i] = vals
    return drifts, btab


def _require_positive_at_zero(boundary: Boundary) -> None:
    if boundary(0.0) <= 0.0:
        raise DegenerateBoundaryError(
            "boundary(0) <= 0: every path would stop immediately at time zero"
        )


def sample_hitting(params: DdmParameters, boundary: Boundary, config: SimConfig,
                   stream_index: int = 0) -> SimOutcome:
    """Simulate one path and return its first-passage outcome.

    ``stream_index`` selects the path's random stream; the same index with
    the same master seed always reproduces the same path.
    """
    if stream_index < 0:
        raise DataValidationError("stream_index must be nonnegative")
    _require_positive_at_zero(boundary)
    drifts, btab = boundary_tables([(params.drift, boundary)], config)
    times, sides, censored = _fpt.simulate_batch(
        config.master_seed, _fpt.DOMAIN_DATA, stream_index, 1, drifts, btab,
        config.time_step, config.bridge_correction)
    return SimOutcome(
        hitting_time=float(times[0, 0]),
        upper_exit=bool(sides[0, 0] > 0),
        censored=bool(censored[0, 0]),
    )


def simulate_dataset(params: DdmParameters, boundary: Boundary, n: int,
                     config: SimConfig, label=None) -> Dataset:
    """Simulate ``n`` i.i.d. trials; record i uses stream index i.

    Paths still running at ``t_max`` are recorded at the horizon with the
    choice taken from the terminal sign; their count is reported via the
    dataset's ``meta`` and a warning above 1% (an error above 20%).
    """
    if n is None:
        n = config.num_paths
    if n <= 0:
        raise DataValidationError("need a positive number of trials (dataset must be nonempty)")
    _require_positive_at_zero(boundary)
    drifts, btab = boundary_tables([(params.drift, boundary)], config)
    times, sides, censored = _fpt.simulate_batch(
        config.master_seed, _fpt.DOMAIN_DATA, 0, int(n), drifts, btab,
        config.time_step, config.bridge_correction)
    n_censored = int(censored[0].sum())
    frac = n_censored / n
    if frac > CENSOR_ERROR_FRACTION:
        raise CensoringError(
            f"{frac:.1%} of paths were censored at t_max={config.t_max}; increase t_max"
        )
    meta = {"censored": n_censored, "censored_fraction": frac, "n": int(n)}
    if frac > CENSOR_WARN_FRACTION:
        meta["censoring_warning"] = True
        warnings.warn(
            f"{frac:.1%} of simulated paths censored at t_max={config.t_max}",
            stacklevel=2,
        )
    return Dataset(times[0], (sides[0] > 0).astype(np.uint8), label=label, meta=meta)


def simulate_model_moments(drift: float, boundary: Boundary, spec: "MomentSpec",
                           S: int, config: SimConfig,
                           stream_offset: int = 0) -> "MomentVector":
    """Average the interval-indicator moments over S simulated paths.

    Paths s = 0..S-1 use stream indices ``stream_offset + s`` in the
    model-simulation domain, so two calls with the same offset see the same
    Brownian paths no matter what drift/boundary they are given (common
    random numbers).  Censored paths count toward the last, unbounded
    interval.
    """
    from .spectest import MomentVector, interval_indices

    if S < 1:
        raise DataValidationError("S must be >= 1")
    if stream_offset < 0:
        raise DataValidationError("stream_offset must be nonnegative")
    drifts, btab = boundary_tables([(drift, boundary)], config)
    times, sides, censored = _fpt.simulate_batch(
        config.master_seed, _fpt.DOMAIN_MODEL, stream_offset, int(S), drifts, btab,
        config.time_step, config.bridge_correction)
    idx = interval_indices(spec, times[0], censored=censored[0])
    counts = np.bincount(idx, minlength=spec.J + 1)
    values = spec.normalization * counts[1:] / float(S)
    return MomentVector(values=values, source="simulated", count=int(S),
                        censored=int(censored[0].sum()))

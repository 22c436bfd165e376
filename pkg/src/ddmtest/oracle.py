"""Independent reference computations used to validate the pipeline.

Nothing in here feeds the estimation or testing code paths: the analytic
constant-boundary identities and the fine-step Monte Carlo tables exist so
that tests can check the production code against something it does not
share logic with (beyond the low-level path kernel, which the analytic
identities in turn validate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _fpt
from .errors import DataValidationError, DomainError
from .model import Boundary, DdmParameters, imbalance
from .simulator import SimConfig, boundary_tables

__all__ = ["ConstantBoundaryOracle", "ReferenceDistribution", "mc_reference_distribution"]

#: the finest step the estimation/test pipeline uses by default
PIPELINE_DEFAULT_STEP = 1e-3


@dataclass(frozen=True)
class ConstantBoundaryOracle:
    """Closed-form quantities for a constant boundary at unit volatility."""

    drift: float
    level: float

    def __post_init__(self):
        if not (math.isfinite(self.level) and self.level > 0.0):
            raise DataValidationError(f"level must be positive, got {self.level}")
        if not math.isfinite(self.drift):
            raise DataValidationError("drift must be finite")

    def choice_probability(self) -> float:
        """P(upper exit) = exp(2*drift*level) / (1 + exp(2*drift*level)).

        Also the conditional choice probability at every stopping time: for a
        constant boundary the log-odds of the choice are 2*drift*level at all t.
        """
        return 0.5 * (1.0 + math.tanh(self.drift * self.level))

    def mean_hitting_time(self) -> float:
        """E[tau] = level * (2p - 1) / drift, from optional sampling of Z_tau.

        Undefined at zero drift (the identity degenerates to 0/0; the
        driftless mean level**2 is not reachable through it).
        """
        if self.drift == 0.0:
            raise DomainError("mean_hitting_time needs drift != 0; use the MC reference instead")
        return self.level * math.tanh(self.drift * self.level) / self.drift

    def averages(self) -> tuple[float, float, float]:
        """(mean imbalance, mean time, mean choice probability) of the stopping law."""
        p = self.choice_probability()
        return imbalance(p), self.mean_hitting_time(), p


@dataclass(frozen=True)
class ReferenceDistribution:
    """Empirical stopping-time CDF and conditional choice probabilities."""

    times: np.ndarray        # sorted hitting times
    upper: np.ndarray        # aligned with times: True where the exit was upper
    bin_edges: np.ndarray
    cdf: np.ndarray          # CDF at bin edges
    cdf_se: np.ndarray
    p_cond: np.ndarray       # conditional choice probability per bin (nan if empty)
    p_cond_se: np.ndarray
    bin_counts: np.ndarray
    n_paths: int
    censored: int

    def choice_probability(self) -> float:
        return float(np.mean(self.upper))

    def choice_probability_se(self) -> float:
        p = self.choice_probability()
        return math.sqrt(p * (1.0 - p) / self.n_paths)

    def mean_time(self) -> float:
        return float(np.mean(self.times))

    def mean_time_se(self) -> float:
        return float(np.std(self.times) / math.sqrt(self.n_paths))

    def interval_probability(self, a: float, b: float) -> float:
        """P(a <= tau < b) from the empirical distribution."""
        lo = np.searchsorted(self.times, a, side="left")
        hi = np.searchsorted(self.times, b, side="left")
        return (hi - lo) / self.n_paths


def mc_reference_distribution(params: DdmParameters, boundary: Boundary,
                              paths: int, fine_step: float,
                              master_seed: int = 0, t_max: float = 50.0,
                              n_bins: int = 50) -> ReferenceDistribution:
    """Brute-force fine-step tables of the stopping law for (drift, boundary).

    ``fine_step`` must be at most one tenth of the pipeline default step so
    the tables can serve as an external yardstick for default-step runs.
    Deterministic for a fixed seed; uses a stream domain disjoint from both
    data generation and model-moment simulation.
    """
    if fine_step > PIPELINE_DEFAULT_STEP / 10.0 + 1e-15:
        raise DomainError(
            f"fine_step must be <= {PIPELINE_DEFAULT_STEP / 10.0:g} "
            "(one tenth of the pipeline default)"
        )
    if paths < 1:
        raise DataValidationError("paths must be positive")
    config = SimConfig(time_step=fine_step, t_max=t_max, master_seed=master_seed)
    drifts, btab = boundary_tables([(params.drift, boundary)], config)
    times, sides, censored = _fpt.simulate_batch(
        master_seed, _fpt.DOMAIN_ORACLE, 0, int(paths), drifts, btab,
        fine_step, True)
    order = np.argsort(times[0], kind="stable")
    t_sorted = times[0][order]
    upper = sides[0][order] > 0
    # bins cover the bulk of the distribution; the last edge is the 99.9% point
    hi = float(np.quantile(t_sorted, 0.999))
    edges = np.linspace(0.0, hi, n_bins + 1)
    cdf = np.searchsorted(t_sorted, edges, side="right") / paths
    cdf_se = np.sqrt(np.clip(cdf * (1.0 - cdf), 0.0, None) / paths)
    idx = np.clip(np.searchsorted(edges, t_sorted, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    up_counts = np.bincount(idx, weights=upper.astype(float), minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_cond = np.where(counts > 0, up_counts / counts, np.nan)
        p_se = np.sqrt(np.clip(p_cond * (1.0 - p_cond), 0.0, None) / np.maximum(counts, 1.0))
    return ReferenceDistribution(
        times=t_sorted, upper=upper, bin_edges=edges, cdf=cdf, cdf_se=cdf_se,
        p_cond=p_cond, p_cond_se=p_se, bin_counts=counts.astype(int),
        n_paths=int(paths), censored=int(censored[0].sum()),
    )

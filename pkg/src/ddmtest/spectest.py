"""Simulated-moment specification test.

The observed distribution of decision times is compared with the one the
fitted drift/boundary imply: interval-indicator moments between quantiles
of the fitted time transform are averaged over the data and over simulated
paths, and the quadratic form n*(diff)' Vhat^{-1} (diff) is referred to a
chi-squared distribution with one degree of freedom per interval.

Vhat adds three pieces: sampling variation of the decision times (including
their effect on the drift estimate), estimation variation of the spline
coefficients (delta method through difference quotients), and simulation
noise.  All difference quotients and the central simulated moments share
Brownian paths (common random numbers), so the quotients are smooth in the
step size and the whole test is a deterministic function of the master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import chi2

from . import _fpt
from .errors import (
    DataValidationError,
    DeltaStepError,
    EstimationError,
    NumericalError,
)
from .estimator import (
    ChoiceProbabilityModel,
    EstimationResult,
    SplineBasis,
    default_basis_size,
    estimate_ddm,
)
from .model import Boundary, Dataset, DdmParameters, TimeTransform
from .simulator import SimConfig, default_t_max, simulate_dataset

__all__ = [
    "MomentSpec",
    "MomentVector",
    "build_moment_spec",
    "interval_indices",
    "sample_moments",
    "jacobian_drift",
    "jacobian_beta",
    "VarianceComponents",
    "variance_components",
    "TestConfig",
    "TestReport",
    "run_test",
    "CalibrationResult",
    "calibration_study",
]


# ---------------------------------------------------------------------------
# moment functions


@dataclass(frozen=True)
class MomentSpec:
    """J interval indicators between quantiles of the time transform.

    Threshold j is the j/(J+1) quantile; interval j runs from threshold j
    to threshold j+1, the last one extending to infinity.  The interval
    below the first threshold is deliberately left out (fitting the drift
    already uses up that much information about the time distribution), and
    each indicator is scaled by sqrt(J+1) so its second moment is of the
    same size for every J.
    """

    J: int
    thresholds: np.ndarray
    transform: TimeTransform

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=float)
        if th.shape != (self.J,):
            raise DataValidationError("need exactly J thresholds")
        if np.any(~np.isfinite(th)) or np.any(np.diff(th) <= 0) or th[0] <= 0:
            raise DataValidationError("thresholds must be positive, finite, strictly increasing")
        th = th.copy()
        th.setflags(write=False)
        object.__setattr__(self, "thresholds", th)

    @property
    def normalization(self) -> float:
        return math.sqrt(self.J + 1.0)


def build_moment_spec(J: int, transform: TimeTransform) -> MomentSpec:
    if J < 1:
        raise DataValidationError(f"J must be >= 1, got {J}")
    levels = np.arange(1, J + 1) / (J + 1.0)
    return MomentSpec(J=J, thresholds=np.asarray(transform.inverse(levels), dtype=float),
                      transform=transform)


@dataclass(frozen=True)
class MomentVector:
    """Sample or simulated moment averages (length J)."""

    values: np.ndarray
    source: str  # "sample" | "simulated"
    count: int
    censored: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def interval_indices(spec: MomentSpec, times, censored=None) -> np.ndarray:
    """Interval index per time: 0 for the excluded first interval, 1..J otherwise.

    Censored simulated paths belong to the last (unbounded) interval.
    """
    idx = np.searchsorted(spec.thresholds, np.asarray(times, dtype=float), side="right")
    if censored is not None:
        idx = np.where(np.asarray(censored, dtype=bool), spec.J, idx)
    return idx.astype(np.int64)


def sample_moments(data: Dataset, spec: MomentSpec) -> MomentVector:
    """Normalized fraction of observed times in each interval."""
    idx = interval_indices(spec, data.times)
    counts = np.bincount(idx, minlength=spec.J + 1)
    values = spec.normalization * counts[1:] / float(data.n)
    return MomentVector(values=values, source="sample", count=data.n)


# ---------------------------------------------------------------------------
# batched model-moment evaluation (shared Brownian paths across variants)


def _variant_tables(model: ChoiceProbabilityModel, deltas: np.ndarray,
                    betas: np.ndarray, grid: np.ndarray):
    """Boundary tables log_odds(clamp(q(G(t)) beta_v)) / (2 delta_v) on the grid.

    Basis evaluation clips into its knot range, so the tables continue as
    constants through the data-free tails, matching
    :func:`ddmtest.estimator.estimate_boundary`.
    """
    design = model.design(grid)  # (L+1, K)
    eps = model.clamp_epsilon
    p = np.clip(design @ betas.T, eps, 1.0 - eps)  # (L+1, V)
    btab = (np.log(p) - np.log1p(-p)).T / (2.0 * deltas[:, None])
    return np.ascontiguousarray(btab)


def _moment_batch(model: ChoiceProbabilityModel, spec: MomentSpec,
                  deltas: np.ndarray, betas: np.ndarray, S: int,
                  sim_config: SimConfig, stream_offset: int = 0):
    """Moment vectors for every (delta_v, beta_v) variant over the same S paths.

    Returns (values (V, J), interval indices of variant 0 (S,), censored count per variant).
    """
    grid = sim_config.time_grid()
    btab = _variant_tables(model, deltas, betas, grid)
    times, _, censored = _fpt.simulate_batch(
        sim_config.master_seed, _fpt.DOMAIN_MODEL, stream_offset, int(S),
        deltas, btab, sim_config.time_step, sim_config.bridge_correction)
    V = deltas.size
    values = np.empty((V, spec.J))
    for v in range(V):
        idx = interval_indices(spec, times[v], censored=censored[v])
        counts = np.bincount(idx, minlength=spec.J + 1)
        values[v] = spec.normalization * counts[1:] / float(S)
    idx0 = interval_indices(spec, times[0], censored=censored[0])
    return values, idx0, censored.sum(axis=1)


def _check_delta_step(delta_hat: float, delta_step: float) -> None:
    if not (math.isfinite(delta_step) and delta_step > 0.0):
        raise DeltaStepError(f"difference-quotient step must be positive, got {delta_step}")
    if delta_hat - delta_step <= 0.0:
        raise DeltaStepError(
            f"step {delta_step} too large: drift {delta_hat} minus step must stay positive"
        )


def jacobian_drift(delta_hat: float, model: ChoiceProbabilityModel, spec: MomentSpec,
                   S: int, delta_step: float, sim_config: SimConfig,
                   stream_offset: int = 0) -> np.ndarray:
    """Central difference quotient of the simulated moments in the drift.

    Perturbing the drift also rescales the implied boundary by
    delta_hat/(delta_hat +- step), because the boundary is the fitted
    log-odds curve divided by twice the drift.  Both evaluations reuse the
    same Brownian paths.
    """
    _check_delta_step(delta_hat, delta_step)
    beta = np.asarray(model.coefficients, dtype=float)
    deltas = np.array([delta_hat + delta_step, delta_hat - delta_step])
    betas = np.vstack([beta, beta])
    values, _, _ = _moment_batch(model, spec, deltas, betas, S, sim_config, stream_offset)
    return (values[0] - values[1]) / (2.0 * delta_step)


def jacobian_beta(delta_hat: float, model: ChoiceProbabilityModel, spec: MomentSpec,
                  S: int, delta_step: float, sim_config: SimConfig,
                  data: Dataset, m_delta: np.ndarray,
                  stream_offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Difference quotients in each spline coefficient, plus the full Jacobian.

    Returns (M_beta, D_beta): column k of M_beta perturbs coefficient k by
    +-step with shared paths; D_beta adds the channel through the drift
    estimate's dependence on the fitted probabilities,
    M_delta * (1/(2*drift*mean_time*n)) * sum_i q_i / (p_i (1 - p_i)).
    """
    _check_delta_step(delta_hat, delta_step)
    if delta_step >= 0.25:
        raise DeltaStepError(
            f"coefficient step {delta_step} shifts probabilities by up to {delta_step:.2f}; "
            "use a step below 0.25 so perturbed probabilities stay usable"
        )
    K = model.basis.K
    beta = np.asarray(model.coefficients, dtype=float)
    deltas = np.full(2 * K, delta_hat)
    betas = np.vstack([beta + s * delta_step * np.eye(K)[k] for k in range(K) for s in (1.0, -1.0)])
    values, _, _ = _moment_batch(model, spec, deltas, betas, S, sim_config, stream_offset)
    m_beta = np.empty((spec.J, K))
    for k in range(K):
        m_beta[:, k] = (values[2 * k] - values[2 * k + 1]) / (2.0 * delta_step)
    q = model.design(data.times)
    p = model.prob(data.times)
    t_bar = float(np.mean(data.times))
    d_vals = 1.0 / (p * (1.0 - p))
    drift_channel = np.outer(
        np.asarray(m_delta, dtype=float),
        (d_vals @ q) / (2.0 * delta_hat * t_bar * data.n),
    )
    return m_beta, drift_channel + m_beta


# ---------------------------------------------------------------------------
# variance components


@dataclass(frozen=True)
class VarianceComponents:
    """The three additive pieces of the variance of sqrt(n)*(sample - simulated) moments."""

    v1: np.ndarray           # sampling variation of the decision times
    v2: np.ndarray           # estimation variation of the spline coefficients
    v3: np.ndarray           # simulation noise
    m_delta: np.ndarray      # (J,) drift difference quotient
    m_beta: np.ndarray       # (J, K) coefficient difference quotients
    d_beta: np.ndarray       # (J, K) full coefficient Jacobian
    sigma: np.ndarray        # (K, K) basis Gram matrix
    lambda_mat: np.ndarray   # (K, K) heteroskedasticity-weighted Gram matrix
    psi_i1: np.ndarray       # (n, J) per-record influence values
    delta_step: float

    @property
    def total(self) -> np.ndarray:
        return self.v1 + self.v2 + self.v3

    @property
    def v3_v1_trace_ratio(self) -> float:
        tr1 = float(np.trace(self.v1))
        return float(np.trace(self.v3)) / tr1 if tr1 > 0 else math.inf


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def variance_components(data: Dataset, model: ChoiceProbabilityModel, delta_hat: float,
                        spec: MomentSpec, m_delta: np.ndarray, m_beta: np.ndarray,
                        d_beta: np.ndarray, sim_indices: np.ndarray,
                        delta_step: float) -> VarianceComponents:
    """Assemble the three variance components from one fit and one simulation run.

    ``sim_indices`` are the interval indices of the central simulated paths
    (censored paths already mapped to the last interval).
    """
    n, J, K = data.n, spec.J, model.basis.K
    norm = spec.normalization
    m_delta = np.asarray(m_delta, dtype=float)
    d_beta = np.asarray(d_beta, dtype=float)

    idx = interval_indices(spec, data.times)
    m_i = np.zeros((n, J))
    rows = np.nonzero(idx > 0)[0]
    m_i[rows, idx[rows] - 1] = norm
    m_bar = m_i.mean(axis=0)

    p = model.prob(data.times)
    i_vals = (2.0 * p - 1.0) * (np.log(p) - np.log1p(-p))
    i_bar = float(np.mean(i_vals))
    t_bar = float(np.mean(data.times))
    psi_tau = (i_vals - i_bar - delta_hat**2 * (data.times - t_bar)) / (2.0 * delta_hat * t_bar)
    psi_i1 = (m_i - m_bar) - psi_tau[:, None] * m_delta[None, :]
    v1 = _symmetrize(psi_i1.T @ psi_i1 / n)

    q = model.design(data.times)
    resid = data.choices.astype(np.float64) - model.prob_raw(data.times)
    lambda_mat = _symmetrize((q * resid[:, None] ** 2).T @ q / n)
    sigma = model.gram
    try:
        w = np.linalg.solve(sigma, d_beta.T)  # (K, J)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("basis Gram matrix is singular; reduce K") from exc
    v2 = _symmetrize(w.T @ lambda_mat @ w)

    S = int(np.asarray(sim_indices).size)
    counts = np.bincount(np.asarray(sim_indices), minlength=J + 1)
    m_hat = norm * counts[1:] / float(S)
    second = (norm**2) * np.diag(counts[1:].astype(float))
    v3 = _symmetrize((n / float(S) ** 2) * (second - S * np.outer(m_hat, m_hat)))

    return VarianceComponents(v1=v1, v2=v2, v3=v3, m_delta=m_delta,
                              m_beta=np.asarray(m_beta, dtype=float), d_beta=d_beta,
                              sigma=np.asarray(sigma, dtype=float), lambda_mat=lambda_mat,
                              psi_i1=psi_i1, delta_step=float(delta_step))


# ---------------------------------------------------------------------------
# the test itself


@dataclass(frozen=True)
class TestConfig:
    """Settings for one specification-test run."""

    moments: int = 5                    # J
    knots: int | None = None            # K; default max(6, floor(n^(1/5)) + 3)
    spline_order: int = 4
    sims: int = 20000                   # S
    delta_step: float | None = None     # default 0.5 * drift_hat * n^(-1/4)
    g_family: str = "exponential"
    g_param: float | None = None        # explicit rate/scale; default: fit to the median
    time_step: float = 1e-3
    t_max: float | None = None          # default: 1 - 1e-6 quantile of the fitted transform
    alpha: float = 0.05
    clamp_epsilon: float = 1e-3
    tail_quantile: float = 0.01         # spline knot range: [q, 1-q] sample quantiles
    bridge_correction: bool = True
    master_seed: int = 0

    def __post_init__(self):
        if self.moments < 1:
            raise DataValidationError("moments (J) must be >= 1")
        if self.sims < 1:
            raise DataValidationError("sims (S) must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise DataValidationError("alpha must be in (0, 1)")
        if self.time_step <= 0:
            raise DataValidationError("time_step must be positive")
        if self.master_seed < 0:
            raise DataValidationError("master_seed must be nonnegative")


@dataclass(frozen=True)
class TestReport:
    """Outcome of one specification-test run."""

    statistic: float
    dof: int
    p_value: float
    critical_value: float
    alpha_level: float
    reject: bool
    sample_moments: MomentVector
    simulated_moments: MomentVector
    components: VarianceComponents
    estimation: dict
    diagnostics: dict
    config: dict

    def summary(self) -> str:
        verdict = "REJECT" if self.reject else "no rejection"
        return (f"A = {self.statistic:.4f} ~ chi2({self.dof}), "
                f"p = {self.p_value:.4f}, critical({self.alpha_level:g}) = "
                f"{self.critical_value:.4f}: {verdict}")


def _resolve_delta_step(config: TestConfig, delta_hat: float, n: int) -> float:
    if config.delta_step is not None:
        return float(config.delta_step)
    return 0.5 * delta_hat * n ** -0.25


class _Stage:
    """Prefix errors raised inside a pipeline stage with the stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        from .errors import DdmTestError

        if exc is not None and isinstance(exc, DdmTestError) and not getattr(exc, "_staged", False):
            new = exc.__class__(f"[{self.name}] {exc}")
            new._staged = True
            raise new from exc
        return False


def run_test(data: Dataset, config: TestConfig = TestConfig()) -> TestReport:
    """Fit the model, simulate its predictions, and test the overidentifying moments.

    Deterministic given the data, the configuration, and the master seed.
    The quadratic form is solved through a Cholesky factorization; if the
    variance matrix is not positive definite within tolerance, or its
    condition number exceeds 1e10, the run aborts instead of regularizing.
    """
    if not isinstance(data, Dataset):
        raise DataValidationError("run_test expects a Dataset")

    with _Stage("estimate"):
        K = config.knots if config.knots is not None else default_basis_size(data.n)
        transform = None
        if config.g_param is not None:
            from .model import ExponentialTransform, RationalTransform

            transform = (ExponentialTransform(rate=config.g_param)
                         if config.g_family == "exponential"
                         else RationalTransform(scale=config.g_param))
        est = estimate_ddm(data, K=K, order=config.spline_order, family=config.g_family,
                           clamp_epsilon=config.clamp_epsilon, transform=transform,
                           tail_quantile=config.tail_quantile)
    delta_hat = est.drift_hat
    model = est.choice_model

    with _Stage("moment-spec"):
        spec = build_moment_spec(config.moments, est.transform)
        t_max = config.t_max if config.t_max is not None else default_t_max(est.transform)
        sim_config = SimConfig(time_step=config.time_step, t_max=t_max,
                               bridge_correction=config.bridge_correction,
                               master_seed=config.master_seed)
        delta_step = _resolve_delta_step(config, delta_hat, data.n)
        _check_delta_step(delta_hat, delta_step)

    with _Stage("simulate"):
        m_bar_vec = sample_moments(data, spec)
        beta = np.asarray(model.coefficients, dtype=float)
        K = beta.size
        deltas = np.concatenate([
            [delta_hat, delta_hat + delta_step, delta_hat - delta_step],
            np.full(2 * K, delta_hat),
        ])
        eye = np.eye(K)
        betas = np.vstack([beta, beta, beta]
                          + [beta + s * delta_step * eye[k] for k in range(K) for s in (1.0, -1.0)])
        values, sim_idx, censored = _moment_batch(model, spec, deltas, betas,
                                                  config.sims, sim_config)
        m_hat = values[0]
        m_delta = (values[1] - values[2]) / (2.0 * delta_step)
        m_beta = np.empty((spec.J, K))
        for k in range(K):
            m_beta[:, k] = (values[3 + 2 * k] - values[4 + 2 * k]) / (2.0 * delta_step)
        q = model.design(data.times)
        p_clamped = model.prob(data.times)
        drift_channel = np.outer(
            m_delta,
            ((1.0 / (p_clamped * (1.0 - p_clamped))) @ q)
            / (2.0 * delta_hat * est.mean_time_hat * data.n),
        )
        d_beta = drift_channel + m_beta

    with _Stage("variance"):
        comps = variance_components(data, model, delta_hat, spec, m_delta, m_beta,
                                    d_beta, sim_idx, delta_step)
        vhat = comps.total

    with _Stage("statistic"):
        eigvals = np.linalg.eigvalsh(vhat)
        trace = float(np.sum(eigvals))
        lam_min, lam_max = float(eigvals[0]), float(eigvals[-1])
        if lam_min < -1e-8 * max(trace, 1e-300):
            raise NumericalError(
                f"variance matrix is not positive semidefinite (min eigenvalue {lam_min:.3e}); "
                "reduce the number of moment intervals (J)"
            )
        cond = lam_max / lam_min if lam_min > 0 else math.inf
        if not math.isfinite(cond) or cond > 1e10:
            raise NumericalError(
                f"variance matrix condition number {cond:.2e} exceeds 1e10; reduce J"
            )
        diff = m_bar_vec.values - m_hat
        try:
            factor = cho_factor(vhat, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("variance matrix factorization failed; reduce J") from exc
        statistic = float(data.n * diff @ cho_solve(factor, diff))
        p_value = float(chi2.sf(statistic, spec.J))
        critical = float(chi2.ppf(1.0 - config.alpha, spec.J))
        reject = bool(statistic >= critical)

    sim_cens = int(censored[0])
    diagnostics = {
        "sim_censored": sim_cens,
        "sim_censored_per_variant": [int(c) for c in censored],
        "data_censored": int(data.meta.get("censored", 0)) if data.meta else 0,
        "v3_v1_trace_ratio": comps.v3_v1_trace_ratio,
        "v3_share_warning": comps.v3_v1_trace_ratio > 0.05,
        "variance_condition_number": cond,
        "variance_min_eigenvalue": lam_min,
        "clamp_count": est.clamp_count,
        "outside_unit_count": est.outside_unit_count,
        "boundary_nonpositive_grid_points": int(np.sum(
            _variant_tables(model, np.array([delta_hat]), beta[None, :],
                            sim_config.time_grid())[0] <= 0.0)),
        "delta_step": delta_step,
        "thresholds": [float(t) for t in spec.thresholds],
    }
    estimation = {
        "drift_hat": delta_hat,
        "mean_imbalance": est.mean_imbalance_hat,
        "mean_time": est.mean_time_hat,
        "K": est.K,
        "n": data.n,
        "coefficients": [float(b) for b in beta],
        "transform": est.transform.params(),
    }
    resolved = {
        "moments": spec.J,
        "knots": est.K,
        "spline_order": config.spline_order,
        "sims": config.sims,
        "delta_step": delta_step,
        "g_family": config.g_family,
        "g_param": est.transform.params(),
        "time_step": config.time_step,
        "t_max": t_max,
        "alpha": config.alpha,
        "clamp_epsilon": config.clamp_epsilon,
        "bridge_correction": config.bridge_correction,
        "master_seed": config.master_seed,
    }
    return TestReport(statistic=statistic, dof=spec.J, p_value=p_value,
                      critical_value=critical, alpha_level=config.alpha, reject=reject,
                      sample_moments=m_bar_vec,
                      simulated_moments=MomentVector(values=m_hat, source="simulated",
                                                     count=config.sims, censored=sim_cens),
                      components=comps, estimation=estimation,
                      diagnostics=diagnostics, config=resolved)


# ---------------------------------------------------------------------------
# calibration study


@dataclass(frozen=True)
class CalibrationResult:
    """Monte Carlo study of the test's null behavior."""

    rejection_rate: float
    mean_statistic: float
    var_statistic: float
    reps: int
    dof: int
    alpha: float
    records: tuple  # per-replication dicts

    def to_dict(self) -> dict:
        return {
            "rejection_rate": self.rejection_rate,
            "mean_statistic": self.mean_statistic,
            "var_statistic": self.var_statistic,
            "reps": self.reps,
            "dof": self.dof,
            "alpha": self.alpha,
            "chi2_reference": {"mean": float(self.dof), "var": float(2 * self.dof)},
            "records": list(self.records),
        }


def calibration_study(params: DdmParameters, boundary: Boundary, n: int, reps: int,
                      config: TestConfig, data_t_max: float = 50.0,
                      progress=None) -> CalibrationResult:
    """Repeat simulate-then-test ``reps`` times with derived per-replication seeds."""
    if reps < 1:
        raise DataValidationError("reps must be >= 1")
    records = []
    stats = np.empty(reps)
    rejects = 0
    for r in range(reps):
        seed = _fpt.derive_seed(config.master_seed, r)
        data_config = SimConfig(time_step=config.time_step, t_max=data_t_max,
                                bridge_correction=config.bridge_correction,
                                master_seed=seed)
        data = simulate_dataset(params, boundary, n, data_config)
        report = run_test(data, replace(config, master_seed=seed))
        stats[r] = report.statistic
        rejects += int(report.reject)
        records.append({
            "rep": r,
            "seed": seed,
            "statistic": report.statistic,
            "p_value": report.p_value,
            "reject": report.reject,
        })
        if progress is not None:
            progress(r + 1, reps)
    return CalibrationResult(
        rejection_rate=rejects / reps,
        mean_statistic=float(np.mean(stats)),
        var_statistic=float(np.var(stats)),
        reps=reps,
        dof=config.moments,
        alpha=config.alpha,
        records=tuple(records),
    )

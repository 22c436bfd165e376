"""Drift-diffusion identification and specification testing.

Given binary choice/response-time data for a pair of alternatives, this
package identifies the unique drift and time-varying stopping boundary a
drift-diffusion model would need to generate the data, and tests whether
the observed distribution of decision times is consistent with that model
through a simulated-moment chi-squared statistic.
"""

from .errors import (
    CensoringError,
    DataValidationError,
    DdmTestError,
    DegenerateBoundaryError,
    DeltaStepError,
    DomainError,
    DriftNearZeroError,
    EstimationError,
    NumericalError,
    SimulationError,
)
from .model import (
    Boundary,
    CollapsingBoundary,
    ConstantBoundary,
    Dataset,
    DdmParameters,
    ExponentialTransform,
    LogOddsBoundary,
    RationalTransform,
    TimeTransform,
    TransformedSplineBoundary,
    TrialRecord,
    boundary_eval,
    imbalance,
    log_odds,
)
from .simulator import (
    SimConfig,
    SimOutcome,
    default_t_max,
    sample_hitting,
    simulate_dataset,
    simulate_model_moments,
)
from .identification import (
    AverageQuantities,
    MenuConsistencyReport,
    RevealedQuantities,
    average_quantities,
    menu_consistency,
    revealed_boundary,
    revealed_drift,
    revealed_from_dataset,
)
from .estimator import (
    ChoiceProbabilityModel,
    DriftEstimate,
    EstimationResult,
    SplineBasis,
    default_basis_size,
    estimate_boundary,
    estimate_ddm,
    estimate_drift,
    fit_choice_probability,
    fit_time_transform,
)
from .spectest import (
    CalibrationResult,
    MomentSpec,
    MomentVector,
    TestConfig,
    TestReport,
    VarianceComponents,
    build_moment_spec,
    calibration_study,
    jacobian_beta,
    jacobian_drift,
    run_test,
    sample_moments,
    variance_components,
)
from .oracle import ConstantBoundaryOracle, ReferenceDistribution, mc_reference_distribution
from .dataio import read_dataset_csv, write_dataset_csv

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""Network autoregression with node-specific coefficients.

Simulation, least-squares and feasible-GLS estimation, structured
error covariances, bootstrap and asymptotic inference, forecasting,
and a Monte-Carlo replication harness, with a command line front end.
"""

__version__ = "0.1.0"

from .errors import DataError, NetarError, NumericalError
from .model import (
    CoefVector,
    CompanionForm,
    NarSpec,
    StabilityReport,
    banded_weights,
    build_companion,
    build_design,
    flatten,
    is_stable,
    load_weights,
    renormalize_weights,
    save_weights,
    spectral_radius,
    sufficient_condition,
    transition_matrices,
    unflatten,
    validate_weights,
)
from .simulation import (
    FactorGaussian,
    GaussianIid,
    MisspecPerturbation,
    SarGaussian,
    SimConfig,
    SimResult,
    StudentT,
    gen_errors,
    perturb_weights,
    replicate_rng,
    rng_from_seed,
    simulate,
)
from .estimation import (
    CompactPanel,
    ConfidenceRegion,
    ContrastMatrix,
    FitResult,
    RidgePenalty,
    build_panel,
    confidence_intervals,
    confidence_region,
    fit_egls,
    fit_gls,
    fit_ols,
    fit_ridge_gls,
    fit_ridge_ols,
)
from .error_covariance import (
    FactorFit,
    KSelection,
    SarFit,
    fit_factor,
    fit_sar_qmle,
    sar_profile_loglik,
    select_k,
    sigma_inverse,
    sigma_sar,
)
from .inference import (
    BootstrapResult,
    QSelection,
    forecast_one_step,
    pmse,
    residual_bootstrap,
    select_q_bic,
)
from .harness import (
    CURVE_COLUMNS,
    METRIC_COLUMNS,
    MetricsTable,
    MisspecConfig,
    Scenario,
    run_misspec_experiment,
    run_scenario,
)
from .panel import (
    GeoWeights,
    PanelDataset,
    build_geo_weights,
    export_panel,
    haversine_km,
    ingest_panel,
)

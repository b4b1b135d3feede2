"""Factor-model estimation engine with built-in identification diagnostics:
analytic Jacobians of the implied moments, numeric rank and nullspace
analysis, and Monte Carlo tooling for studying nonconvergence and
inadmissible estimates near rank-deficient points."""

from .dsl import (
    ModelSource,
    ModelSyntaxError,
    ParseDiagnostic,
    ParseResult,
    format_spec,
    parse_model,
)
from .estimation import (
    FISHER_SCORING,
    FitConfig,
    FitResult,
    GRADIENT_DESCENT,
    ITERATIVE,
    NEWTON_RAPHSON,
    NonPositiveDefiniteError,
    SAMPLE,
    WeightMatrix,
    check_admissibility,
    fit,
    gradient,
    identity_weight,
    ml_weight,
    sample_weight,
    wls_loss,
)
from .identification import (
    AffectedSet,
    InformationReport,
    JacobianReport,
    PatternCheckResult,
    RankScanRow,
    affected_params,
    analytic_jacobian,
    fisher_information,
    jacobian_report,
    numeric_jacobian,
    nullspace_pattern_check,
    rank_report,
    rank_scan,
)
from .model import (
    FACTOR_COV,
    GroupDef,
    LOADING,
    ModelSpec,
    MomentVector,
    ParameterEntry,
    RESIDUAL_COV,
    SampleMoments,
    Theta,
    build_matrices,
    duplication_matrix,
    implied_sigma,
    moment_labels,
    validate,
    vech,
)
from .simulation import (
    ExperimentResult,
    PopulationModel,
    SBMTMM,
    SHAPIRO,
    ShapiroSummary,
    SimCondition,
    SimConfig,
    SimRecord,
    mvn_sample,
    run_experiment,
    run_replicate,
    sbmtmm_population,
    shapiro_experiment,
    shapiro_population,
    split_ballot_moments,
)

__version__ = "0.1.0"

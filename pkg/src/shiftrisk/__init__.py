"""Worst-case model performance under user-declared conditional shifts.

Declare which columns may shift (mutable, W) and which marginals must stay
fixed (immutable, Z); the estimator finds the expected loss on the worst
subsample of a chosen proportion, with cross-fitted nuisance learning,
an asymptotic variance and confidence intervals, plus exact oracles on
discrete instances for validation.
"""

from ._kernels import BACKEND
from .data import (
    ColumnGroup,
    EvaluationFrame,
    FoldAssignment,
    LossSpec,
    TabularDataset,
    VariablePartition,
    assign_folds,
    build_frame,
    compute_losses,
    load_dataset,
    write_csv,
)
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DataError,
    DegenerateColumnWarning,
    DegenerateQuantileWarning,
    DimensionMismatch,
    DiscreteMutablesWarning,
    DomainError,
    EmptyDataset,
    EmptySubsample,
    InsufficientData,
    NumericError,
    ParseError,
    PartitionError,
    SchemaMismatch,
    ShiftRiskError,
    ShiftRiskWarning,
    SingularSystem,
)
from .estimator import (
    EstimatorConfig,
    NuisanceFit,
    RiskCurve,
    WorstCaseEstimate,
    confidence_interval,
    dual_objective,
    estimate_variance,
    estimate_worst_case,
    resolve_epsilon,
    risk_curve,
    score_psi,
)
from .learners import (
    KernelRidgeLearner,
    KernelRidgeModel,
    QuantileModel,
    SplineBasis,
    SplineBasisConfig,
    SplineQuantileLearner,
    TunedParams,
    TuningGrid,
    build_spline_basis,
    default_tuning_grid,
    empirical_quantile,
    fit_kernel_ridge,
    fit_quantile_regression,
    predict_kernel_ridge,
    predict_quantile,
    tune_hyperparameters,
)
from .oracles import (
    BUNDLED_INSTANCES,
    DiscreteInstance,
    OracleEtaLearner,
    OracleMuLearner,
    ToySineConfig,
    alpha_from_rho,
    bundled_instance,
    exact_dual_check,
    exact_noisy_worst_case,
    exact_worst_case_discrete,
    generate_toy_sine,
    merge_immutable_into_mutable,
    random_instance,
    rho_from_alpha,
    sample_discrete_instance,
    seeded_normals,
)
from .reporting import (
    AnalysisConfig,
    EstimatorSettings,
    ReportOptions,
    SubsampleReport,
    characterize_subsample,
    compare_on_subsamples,
    emit_plot_data,
    load_analysis_config,
    run_analysis,
)

__version__ = "0.1.0"

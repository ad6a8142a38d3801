"""Streaming imputation of missing values in multivariate device report streams.

A simulated edge node keeps a sliding window of each device's recent
reports. When a report arrives with a value missing, the gap is filled by
blending a local autoregressive estimate with a weighted geometric mean of
the most similar peer devices, the blend weight driven by how stable the
device's own recent history is. The package also ships the two baselines
used for comparison (group-only and plain peer averaging) plus a replay
harness that injects seeded missingness into traces and scores MAE/RMSE
and per-replacement latency over a reproducible experiment grid.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateWeightsError,
    DeviceNotFoundError,
    DimensionBoundsError,
    DuplicateReportError,
    EdgefillError,
    ImputationImpossibleError,
    InsufficientHistoryError,
    InsufficientOverlapError,
    NoLocalDataError,
    SchemaError,
    SequencingError,
    SingularCovarianceError,
    TraceParseError,
    UndefinedMetricError,
    UndefinedSimilarityError,
    WgmDomainError,
)
from .stream import DeviceReport, StreamSlice, WindowStore
from .correlation import (
    CorrelationResult,
    PeerGroup,
    cosine_similarity,
    device_md,
    ensemble_score,
    estimate_covariance,
    mahalanobis,
    select_peers,
)
from .imputation import (
    BlendParams,
    ImputationOutcome,
    LocalEstimate,
    group_estimate,
    impute_am,
    impute_dbm,
    impute_pbm,
    local_regress,
    local_weight,
    weighted_geometric_mean,
)
from .ingestion import (
    InjectionPlan,
    TraceSchema,
    canonical_schema,
    inject_missing,
    load_trace,
    restrict_trace,
    save_trace,
    synth_trace,
    write_plan,
)
from .evaluation import (
    ExperimentConfig,
    MetricsReport,
    SeedMetrics,
    compare_models,
    expand_grid,
    mae,
    rmse,
    run_experiment,
    write_metrics_csv,
    write_metrics_kv,
    write_timings_csv,
)

__all__ = [
    "__version__",
    "BlendParams",
    "ConfigError",
    "CorrelationResult",
    "DegenerateWeightsError",
    "DeviceNotFoundError",
    "DeviceReport",
    "DimensionBoundsError",
    "DuplicateReportError",
    "EdgefillError",
    "ExperimentConfig",
    "ImputationImpossibleError",
    "ImputationOutcome",
    "InjectionPlan",
    "InsufficientHistoryError",
    "InsufficientOverlapError",
    "LocalEstimate",
    "MetricsReport",
    "NoLocalDataError",
    "PeerGroup",
    "SchemaError",
    "SeedMetrics",
    "SequencingError",
    "SingularCovarianceError",
    "StreamSlice",
    "TraceParseError",
    "TraceSchema",
    "UndefinedMetricError",
    "UndefinedSimilarityError",
    "WgmDomainError",
    "WindowStore",
    "canonical_schema",
    "compare_models",
    "cosine_similarity",
    "device_md",
    "ensemble_score",
    "estimate_covariance",
    "expand_grid",
    "group_estimate",
    "impute_am",
    "impute_dbm",
    "impute_pbm",
    "inject_missing",
    "load_trace",
    "local_regress",
    "local_weight",
    "mae",
    "mahalanobis",
    "restrict_trace",
    "rmse",
    "run_experiment",
    "save_trace",
    "select_peers",
    "synth_trace",
    "weighted_geometric_mean",
    "write_metrics_csv",
    "write_metrics_kv",
    "write_plan",
    "write_timings_csv",
]

"""Source-dataset influence estimation for transfer learning via subsampled retraining."""

from .sampler import (
    SamplingConfig,
    SubsetManifest,
    sample_manifest,
    enumerate_manifest,
    inclusion_stats,
    read_manifest,
    write_manifest,
    manifest_digest,
)
from .predlog import PredictionLog, read_log, write_log, merge_logs, log_digest
from .influence import (
    OutputKind,
    InfluenceMatrix,
    AggregateInfluence,
    derive_output,
    derive_outputs,
    estimate,
    estimate_from_responses,
    aggregate,
    rank,
    group_by_target_class,
)
from .datamodels import (
    RegressionConfig,
    DatamodelWeights,
    fit_ridge,
    fit_lasso,
    fit_datamodels,
    fit_example_datamodels,
)
from .diagnostics import (
    spearman,
    bootstrap_convergence,
    heldout_rank_correlation,
    knockoff_fdr,
    split_manifest_log,
    BootstrapReport,
    FdrReport,
)
from .pipeline import (
    SourceSpec,
    TargetSpec,
    TrainConfig,
    ToyModel,
    TaskData,
    generate_tasks,
    train_source_model,
    transfer,
    evaluate,
    accuracy,
    run_campaign,
    run_example_campaign,
    campaign_tasks,
    make_planted_specs,
    plant_example_pathologies,
)
from .counterfactual import (
    RemovalSchedule,
    CounterfactualTable,
    make_schedule,
    run_counterfactual,
    write_table_csv,
    read_table_csv,
)
from .analysis import (
    ProjectionResult,
    DebugReport,
    project_class,
    debug_example,
    rerun_without,
    surface_extreme_examples,
)

__version__ = "0.1.0"

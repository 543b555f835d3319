"""Self-ensembling semi-supervised CNN training: Python bindings."""

from ._selfens import (
    DataError,
    NumericError,
    SelfensError,
    ShapeError,
    UsageError,
    Network,
    Manifest,
    SplitPlan,
    TrainConfig,
    MetricsReport,
    build_canonical,
    segment_parameter_counts,
    load_checkpoint,
    save_checkpoint,
    load_manifest,
    generate_synthetic,
    make_split,
    load_plan,
    save_plan,
    perturb_pair,
    train,
    evaluate,
    evaluate_predictions,
    gradcheck,
    mean_std,
    format_mean_std,
)

__all__ = [name for name in dir() if not name.startswith("_")]

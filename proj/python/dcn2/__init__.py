"""Single-pass CTR training with DCN2 and its baselines."""

from ._dcn2 import (
    ConfigError,
    EmptyDatasetError,
    EvaluationError,
    IoError,
    Model,
    NonFiniteError,
    ParseError,
    Record,
    SchemaError,
    ShapeError,
    aggregate,
    complexity_estimate,
    config_text,
    hash_feature,
    load_checkpoint,
    log_transform,
    murmur3_32,
    parameter_count,
    parse_lines,
    run,
    window_auc,
    window_logloss,
    window_rig,
    write_synthetic,
)

__all__ = [name for name in dir() if not name.startswith("_")]

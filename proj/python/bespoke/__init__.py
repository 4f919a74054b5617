"""Bespoke instrumental variable estimators."""

from ._bespoke import (
    BespokeError,
    ConfigError,
    ConvergenceError,
    Dataset,
    SchemaError,
    WeakRelevanceError,
    benchmark,
    crossfit,
    did,
    estimate,
    generate_dataset,
    make_folds,
    np_att,
    read_csv,
    simulate,
    write_csv,
)

__all__ = [
    "BespokeError",
    "ConfigError",
    "ConvergenceError",
    "Dataset",
    "SchemaError",
    "WeakRelevanceError",
    "benchmark",
    "crossfit",
    "did",
    "estimate",
    "generate_dataset",
    "make_folds",
    "np_att",
    "read_csv",
    "simulate",
    "write_csv",
]

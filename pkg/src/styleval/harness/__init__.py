"""Experiment harness: datasets, fixtures, trial runner, analyses."""

from .analysis import (
    ELLIPSE_CHI2_66,
    AnalysisError,
    MethodSummary,
    ellipse_points,
    quantile_grid,
    style_effect,
    summarize,
    weight_effect,
    write_reports,
)
from .datasets import AGGRESSIVE_RANGE, MAIN_RANGE, DatasetError, Triple, build_dataset
from .fixtures import make_desk_pool, polygon_scene, texture_image, write_pool_to_disk
from .runner import (
    AGGRESSIVE_FACTOR,
    AGGRESSIVE_METHODS,
    LEDGER_FIELDS,
    LedgerWriter,
    Trial,
    read_ledger,
    row_to_trial,
    run_matrix,
    score_trial,
    score_trials,
    trial_to_row,
)

__all__ = [
    "AGGRESSIVE_FACTOR",
    "AGGRESSIVE_METHODS",
    "AGGRESSIVE_RANGE",
    "AnalysisError",
    "DatasetError",
    "ELLIPSE_CHI2_66",
    "LEDGER_FIELDS",
    "LedgerWriter",
    "MAIN_RANGE",
    "MethodSummary",
    "Triple",
    "Trial",
    "build_dataset",
    "ellipse_points",
    "make_desk_pool",
    "polygon_scene",
    "quantile_grid",
    "read_ledger",
    "row_to_trial",
    "run_matrix",
    "score_trial",
    "score_trials",
    "style_effect",
    "summarize",
    "texture_image",
    "trial_to_row",
    "weight_effect",
    "write_pool_to_disk",
    "write_reports",
]

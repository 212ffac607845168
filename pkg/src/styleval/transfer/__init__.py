"""Style-transfer losses and optimizers."""

from .gal import GalDivergence, gal_optimize
from .losses import (
    CONTROLS,
    CROSS_PAIRS,
    METHODS,
    ContentTerm,
    CrossLayerStyleTerm,
    GramStyleTerm,
    HistogramStyleTerm,
    LossError,
    MeanStyleTerm,
    MethodLoss,
    build_method_loss,
    layerwise_factor_weights,
)
from .optim import OptimError, lbfgs_minimize
from .run import DEFAULT_WIDTH, GalParams, LossTrace, TransferConfig, run_transfer

__all__ = [
    "CONTROLS",
    "CROSS_PAIRS",
    "METHODS",
    "ContentTerm",
    "CrossLayerStyleTerm",
    "DEFAULT_WIDTH",
    "GalDivergence",
    "GalParams",
    "GramStyleTerm",
    "HistogramStyleTerm",
    "LossError",
    "LossTrace",
    "MeanStyleTerm",
    "MethodLoss",
    "OptimError",
    "TransferConfig",
    "build_method_loss",
    "gal_optimize",
    "layerwise_factor_weights",
    "lbfgs_minimize",
    "run_transfer",
]

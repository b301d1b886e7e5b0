from .ensemble import (
    TreeEnsemble,
    fit_forest,
    fit_gbrt,
    huber_location,
    huber_loss,
    huber_negative_gradient,
    squared_loss,
    squared_negative_gradient,
)
from .linear import LinearModel, fit_enet, soft_threshold
from .model import (
    FAMILIES,
    TUNED_DEFAULTS,
    FittedModel,
    ForecastRequest,
    fit_elastic_net,
    fit_gbrt_model,
    fit_lasso,
    fit_model,
    fit_random_forest,
    forecast,
    forecast_inputs,
)
from .selection import (
    COMPACT_GRID,
    FULL_GRID,
    CVRow,
    EvalResult,
    HyperGrid,
    bootstrap_ci,
    forward_folds,
    grid_search,
    mae,
    rolling_origin_evaluate,
    rolling_origins,
)
from .tree import RegressionTree, fit_tree

__all__ = [
    "TreeEnsemble",
    "fit_forest",
    "fit_gbrt",
    "huber_location",
    "huber_loss",
    "huber_negative_gradient",
    "squared_loss",
    "squared_negative_gradient",
    "LinearModel",
    "fit_enet",
    "soft_threshold",
    "FAMILIES",
    "TUNED_DEFAULTS",
    "FittedModel",
    "ForecastRequest",
    "fit_elastic_net",
    "fit_gbrt_model",
    "fit_lasso",
    "fit_model",
    "fit_random_forest",
    "forecast",
    "forecast_inputs",
    "COMPACT_GRID",
    "FULL_GRID",
    "CVRow",
    "EvalResult",
    "HyperGrid",
    "bootstrap_ci",
    "forward_folds",
    "grid_search",
    "mae",
    "rolling_origin_evaluate",
    "rolling_origins",
    "RegressionTree",
    "fit_tree",
]

"""Forecasting, change-point alerts and counterfactual explanations for EMA time series."""

from . import changepoint, core, counterfactual, forecast, synthcohort, workflow

__version__ = "0.1.0"

__all__ = ["changepoint", "core", "counterfactual", "forecast", "synthcohort", "workflow", "__version__"]

"""Fitted forecasting models, multi-step forecasts and model artifacts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..core import MAX_SCORE, Block, DataError, FeatureMatrix, base_features, lag_window
from .ensemble import TreeEnsemble, fit_forest, fit_gbrt
from .linear import LinearModel, fit_enet

FAMILIES = ("mean", "lasso", "elastic_net", "random_forest", "gbrt")
ARTIFACT_VERSION = 1

# Values reported as best after tuning; used when no per-block search is run.
TUNED_DEFAULTS: dict[str, dict[str, Any]] = {
    "mean": {},
    "lasso": {"alpha": 0.74},
    "elastic_net": {"alpha": 10.0, "l1_ratio": 0.14},
    "random_forest": {"n_trees": 10, "max_depth": 5, "min_split": 2, "min_leaf": 3, "bootstrap": True},
    "gbrt": {
        "loss": "huber",
        "learning_rate": 0.05,
        "n_stages": 10,
        "max_depth": 3,
        "min_leaf": 5,
        "min_split": 5,
    },
}


@dataclass
class MeanModel:
    value: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.value)

    def to_dict(self) -> dict:
        return {"value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "MeanModel":
        return cls(float(d["value"]))


_ESTIMATORS = {"mean": MeanModel, "lasso": LinearModel, "elastic_net": LinearModel,
               "random_forest": TreeEnsemble, "gbrt": TreeEnsemble}


@dataclass(frozen=True)
class FittedModel:
    family: str
    params: Mapping[str, Any]
    estimator: Any
    feature_set: str
    n_lags: int
    feature_names: tuple[str, ...]
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    train_end_t: float = float("nan")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return self.estimator.predict(X)

    def to_dict(self) -> dict:
        return {
            "format_version": ARTIFACT_VERSION,
            "family": self.family,
            "params": dict(self.params),
            "feature_set": self.feature_set,
            "n_lags": self.n_lags,
            "feature_names": list(self.feature_names),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "train_end_t": self.train_end_t,
            "estimator": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if d.get("format_version") != ARTIFACT_VERSION:
            raise DataError(f"unsupported model artifact version {d.get('format_version')!r}")
        family = d["family"]
        return cls(
            family=family,
            params=d["params"],
            estimator=_ESTIMATORS[family].from_dict(d["estimator"]),
            feature_set=d["feature_set"],
            n_lags=int(d["n_lags"]),
            feature_names=tuple(d["feature_names"]),
            lower=np.asarray(d["lower"], dtype=float),
            upper=np.asarray(d["upper"], dtype=float),
            train_end_t=float(d["train_end_t"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def fit_model(fm: FeatureMatrix, family: str, params: Mapping[str, Any] | None = None, seed: int = 0) -> FittedModel:
    """Fit one model family on a lagged feature matrix."""
    if family not in FAMILIES:
        raise ValueError(f"unknown model family {family!r}")
    p = dict(TUNED_DEFAULTS[family]) if params is None else dict(params)
    X, y = fm.X, fm.y
    if fm.n == 0:
        raise DataError("cannot fit on an empty feature matrix")
    if family == "mean":
        est: Any = MeanModel(float(y.mean()))
    elif family == "lasso":
        est = fit_enet(X, y, alpha=p["alpha"], l1_ratio=1.0)
    elif family == "elastic_net":
        est = fit_enet(X, y, alpha=p["alpha"], l1_ratio=p["l1_ratio"])
    elif family == "random_forest":
        est = fit_forest(
            X, y,
            n_trees=p["n_trees"],
            max_depth=p.get("max_depth"),
            min_split=p.get("min_split", 2),
            min_leaf=p.get("min_leaf", 1),
            bootstrap=p.get("bootstrap", True),
            seed=seed,
        )
    else:
        est = fit_gbrt(
            X, y,
            loss=p.get("loss", "huber"),
            learning_rate=p["learning_rate"],
            n_stages=p["n_stages"],
            max_depth=p.get("max_depth", 3),
            min_leaf=p.get("min_leaf", 1),
            min_split=p.get("min_split", 2),
            huber_alpha=p.get("huber_alpha", 0.9),
            seed=seed,
        )
    return FittedModel(
        family=family,
        params=p,
        estimator=est,
        feature_set=fm.feature_set,
        n_lags=fm.n_lags,
        feature_names=fm.feature_names,
        lower=fm.X.min(axis=0),
        upper=fm.X.max(axis=0),
        train_end_t=float(fm.t_index.max()),
    )


def fit_lasso(fm: FeatureMatrix, alpha: float) -> FittedModel:
    return fit_model(fm, "lasso", {"alpha": alpha})


def fit_elastic_net(fm: FeatureMatrix, alpha: float, l1_ratio: float) -> FittedModel:
    return fit_model(fm, "elastic_net", {"alpha": alpha, "l1_ratio": l1_ratio})


def fit_random_forest(fm, n_trees=10, max_depth=5, min_split=2, min_leaf=1, bootstrap=True, seed=0) -> FittedModel:
    params = dict(n_trees=n_trees, max_depth=max_depth, min_split=min_split, min_leaf=min_leaf, bootstrap=bootstrap)
    return fit_model(fm, "random_forest", params, seed=seed)


def fit_gbrt_model(fm, loss="huber", learning_rate=0.05, n_stages=10, max_depth=3, min_leaf=5, min_split=5,
                   huber_alpha=0.9, seed=0) -> FittedModel:
    params = dict(loss=loss, learning_rate=learning_rate, n_stages=n_stages, max_depth=max_depth,
                  min_leaf=min_leaf, min_split=min_split, huber_alpha=huber_alpha)
    return fit_model(fm, "gbrt", params, seed=seed)


@dataclass(frozen=True)
class ForecastRequest:
    horizon: int = 3

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("forecast horizon must be at least 1")


def forecast_inputs(model: FittedModel, block: Block, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X_future, predictions)``: the input row and clipped prediction per step.

    Sum-score lags are fed back recursively; any other feature set reuses the
    last observed lag window for every step.
    """
    if len(block) < model.n_lags:
        raise DataError(f"need at least {model.n_lags} observed points to forecast")
    if model.feature_set in ("sensors", "emas_sensors") and not block.has_sensors:
        raise DataError(f"model uses {model.feature_set} features but block has no sensor data")
    base = base_features(block, model.feature_set)
    if base.values.shape[1] * model.n_lags != model.n_features:
        raise DataError(
            f"feature mismatch: model has {model.n_features} inputs, block yields "
            f"{base.values.shape[1] * model.n_lags}"
        )
    rows = []
    preds = []
    if model.feature_set == "sum_score":
        history = list(base.values[:, 0])
        for _ in range(horizon):
            x = np.asarray(history[-model.n_lags:][::-1], dtype=float)
            y = float(np.clip(model.predict(x[None, :])[0], 0.0, MAX_SCORE))
            rows.append(x)
            preds.append(y)
            history.append(y)
    else:
        x = lag_window(base.values, len(block), model.n_lags)
        y = float(np.clip(model.predict(x[None, :])[0], 0.0, MAX_SCORE))
        rows = [x] * horizon
        preds = [y] * horizon
    return np.asarray(rows), np.asarray(preds)


def forecast(model: FittedModel, block: Block, req: ForecastRequest | int = ForecastRequest()) -> np.ndarray:
    """Predict the next ``horizon`` sum scores after the end of ``block``, clipped to [0, 30]."""
    horizon = req.horizon if isinstance(req, ForecastRequest) else ForecastRequest(int(req)).horizon
    return forecast_inputs(model, block, horizon)[1]

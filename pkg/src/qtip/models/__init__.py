"""Speed predictors and their JSON persistence."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from .gp import GPModel, fit_gp
from .linear import BayesianLinearModel, LinearModel, RankDeficientError, fit_bayes, fit_ols
from .mlp import MLPModel, fit_mlp
from .piecewise import PiecewiseAbnormalModel

__all__ = [
    "LinearModel", "BayesianLinearModel", "GPModel", "MLPModel", "PiecewiseAbnormalModel",
    "RankDeficientError", "FittedModel", "fit_ols", "fit_bayes", "fit_gp", "fit_mlp", "fit",
    "predict", "to_dict", "from_dict", "save", "load", "FORMAT_VERSION", "MODEL_KINDS",
]

FittedModel = Union[LinearModel, BayesianLinearModel, GPModel, MLPModel, PiecewiseAbnormalModel]
FORMAT_VERSION = 1
MODEL_KINDS = ("lr", "gp", "mlp")


def fit(kind: str, data, seed: int = 0, **kw):
    """Fit a model of the named family (``lr``, ``gp`` or ``mlp``)."""
    if kind == "lr":
        return fit_ols(data, **kw)
    if kind == "gp":
        return fit_gp(data, **kw)
    if kind == "mlp":
        return fit_mlp(data, seed=seed, **kw)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def predict(model: FittedModel, x):
    """Prediction for one feature vector (float) or a matrix of rows (array)."""
    out = model.predict(x)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite prediction")
    return out


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def _body(m) -> dict:
    if isinstance(m, LinearModel):
        return {"type": "linear", "beta": _arr(m.beta), "intercept": m.intercept,
                "columns": list(m.columns)}
    if isinstance(m, BayesianLinearModel):
        return {"type": "bayes_linear", "prior_mean": _arr(m.prior_mean),
                "sigma_beta": m.sigma_beta, "sigma_y": m.sigma_y,
                "posterior_mean": _arr(m.posterior_mean), "posterior_cov": _arr(m.posterior_cov),
                "columns": list(m.columns)}
    if isinstance(m, GPModel):
        return {"type": "gp", "tau": m.tau, "noise_var": m.noise_var,
                "X_train": _arr(m.X_train), "y_train": _arr(m.y_train),
                "log_likelihood": m.log_likelihood}
    if isinstance(m, MLPModel):
        return {"type": "mlp", "h": m.h, "g": m.g, "weights": [_arr(w) for w in m.weights],
                "x_mean": _arr(m.x_mean), "x_std": _arr(m.x_std), "y_mean": m.y_mean,
                "y_std": m.y_std, "epochs_trained": m.epochs_trained}
    if isinstance(m, PiecewiseAbnormalModel):
        return {"type": "piecewise", "split": m.split, "early": _body(m.early),
                "late": _body(m.late)}
    raise TypeError(f"cannot serialise {type(m).__name__}")


def _build(d: dict):
    t = d["type"]
    if t == "linear":
        return LinearModel(np.array(d["beta"]), float(d.get("intercept", 0.0)),
                           tuple(d.get("columns", ())))
    if t == "bayes_linear":
        return BayesianLinearModel(np.array(d["prior_mean"]), d["sigma_beta"], d["sigma_y"],
                                   np.array(d["posterior_mean"]), np.array(d["posterior_cov"]),
                                   tuple(d.get("columns", ())))
    if t == "gp":
        return GPModel.from_training(np.array(d["X_train"]), np.array(d["y_train"]), d["tau"],
                                     d["noise_var"], d.get("log_likelihood", float("nan")))
    if t == "mlp":
        return MLPModel(int(d["h"]), int(d["g"]), tuple(np.array(w) for w in d["weights"]),
                        np.array(d["x_mean"]), np.array(d["x_std"]), float(d["y_mean"]),
                        float(d["y_std"]), int(d.get("epochs_trained", 0)))
    if t == "piecewise":
        return PiecewiseAbnormalModel(_build(d["early"]), _build(d["late"]), int(d["split"]))
    raise ValueError(f"unknown model type {t!r}")


def to_dict(model: FittedModel) -> dict:
    return {"format": "qtip-model", "version": FORMAT_VERSION, "model": _body(model)}


def from_dict(doc: dict) -> FittedModel:
    if doc.get("format") != "qtip-model":
        raise ValueError("not a qtip model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')}")
    return _build(doc["model"])


def save(model: FittedModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=1), encoding="utf-8")


def load(path: str | Path) -> FittedModel:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

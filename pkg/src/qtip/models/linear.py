"""Linear speed models: ordinary least squares and conjugate Bayesian regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..features import RegressionDataset

__all__ = ["LinearModel", "BayesianLinearModel", "RankDeficientError", "fit_ols", "fit_bayes"]


class RankDeficientError(ValueError):
    """Design matrix lacks full column rank."""

    def __init__(self, msg, columns=()):
        super().__init__(msg)
        self.columns = tuple(columns)


def _as_xy(data, y=None):
    if isinstance(data, RegressionDataset):
        return data.X, data.y, data.columns
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(y, dtype=float).reshape(-1), tuple(f"x{i}" for i in range(X.shape[1]))


def _as_rows(x, k):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != k:
        raise ValueError(f"expected {k} features, got {X.shape[1]}")
    return X, single


@dataclass(frozen=True)
class LinearModel:
    """``S0 = beta . x (+ intercept)``; no intercept unless asked for."""

    beta: np.ndarray
    intercept: float = 0.0
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(b)):
            raise ValueError("non-finite coefficients")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    @property
    def n_features(self) -> int:
        return self.beta.size

    def predict(self, x):
        X, single = _as_rows(x, self.n_features)
        out = X @ self.beta + self.intercept
        return float(out[0]) if single else out


def _collinear_columns(X, columns, tol=None):
    _, s, vt = np.linalg.svd(X, full_matrices=True)
    if tol is None:
        tol = s.max(initial=0.0) * max(X.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    null = vt[rank:]
    involved = np.flatnonzero(np.abs(null).max(axis=0, initial=0.0) > 1e-8) if null.size else []
    return rank, [columns[i] for i in involved]


def fit_ols(data, y=None, *, intercept: bool = False, min_norm: bool = False) -> LinearModel:
    """Least-squares coefficients minimising ``sum (y - X beta)^2``.

    Raises :class:`RankDeficientError` when ``n < k`` or ``X`` is rank
    deficient, naming the columns involved, unless ``min_norm`` is set, in
    which case the minimum-norm least-squares solution is returned.
    """
    X, yv, columns = _as_xy(data, y)
    if intercept:
        X = np.column_stack([X, np.ones(len(X))])
        columns = columns + ("intercept",)
    n, k = X.shape
    if not min_norm:
        if n < k:
            raise RankDeficientError(f"need at least {k} rows to fit {k} coefficients, got {n}")
        rank, cols = _collinear_columns(X, columns)
        if rank < k:
            raise RankDeficientError(
                f"design matrix has rank {rank} < {k}; collinear columns: {', '.join(cols)}", cols
            )
    beta, *_ = np.linalg.lstsq(X, yv, rcond=None)
    if intercept:
        return LinearModel(beta[:-1], float(beta[-1]), columns[:-1])
    return LinearModel(beta, 0.0, columns)


@dataclass(frozen=True)
class BayesianLinearModel:
    """Gaussian posterior over linear coefficients.

    Prior ``N(prior_mean, sigma_beta^2 I)``, likelihood
    ``N(X beta, sigma_y^2 I)``. ``posterior_mean`` is what predictions use.
    """

    prior_mean: np.ndarray
    sigma_beta: float
    sigma_y: float
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    columns: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        return self.posterior_mean.size

    @property
    def beta(self) -> np.ndarray:
        return self.posterior_mean

    def predict(self, x):
        X, single = _as_rows(x, self.n_features)
        out = X @ self.posterior_mean
        return float(out[0]) if single else out


def fit_bayes(data, prior_mean, sigma_beta: float = 1.0, sigma_y: float = 1.0,
              y=None) -> BayesianLinearModel:
    """Exact conjugate posterior for linear coefficients.

    ``Sigma = (I/sigma_beta^2 + X^T X / sigma_y^2)^-1`` and
    ``mean = Sigma (X^T y / sigma_y^2 + prior_mean / sigma_beta^2)``.
    With no rows the prior is returned unchanged.
    """
    if not (sigma_beta > 0 and sigma_y > 0):
        raise ValueError("sigma_beta and sigma_y must be positive")
    mu = np.asarray(prior_mean, dtype=float).reshape(-1)
    k = mu.size
    if isinstance(data, RegressionDataset):
        X, yv, columns = data.X, data.y, data.columns
    elif data is None:
        X, yv, columns = np.zeros((0, k)), np.zeros(0), ()
    else:
        X, yv, columns = _as_xy(data, y)
    if X.shape[1] != k:
        raise ValueError(f"prior has {k} coefficients but data has {X.shape[1]} features")
    prec = np.eye(k) / sigma_beta**2 + (X.T @ X) / sigma_y**2
    rhs = X.T @ yv / sigma_y**2 + mu / sigma_beta**2
    c = linalg.cho_factor(prec, lower=True)
    cov = linalg.cho_solve(c, np.eye(k))
    cov = 0.5 * (cov + cov.T)
    mean = linalg.cho_solve(c, rhs)
    for a in (mu, mean, cov):
        a.setflags(write=False)
    return BayesianLinearModel(mu, float(sigma_beta), float(sigma_y), mean, cov, tuple(columns))

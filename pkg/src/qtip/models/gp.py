"""Zero-mean Gaussian-process regression with an RBF kernel.

Hyperparameters are chosen by exhaustive search over a grid of length
scales and noise variances, maximising the log marginal likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .linear import _as_rows, _as_xy

__all__ = ["GPModel", "fit_gp", "rbf_kernel", "log_marginal_likelihood",
           "DEFAULT_TAU_GRID", "DEFAULT_NOISE_GRID", "DEFAULT_MAX_POINTS"]

DEFAULT_TAU_GRID = (0.1, 1.0, 2.0, 4.0) + tuple(float(t) for t in range(8, 17))
DEFAULT_NOISE_GRID = (1e-4, 1e-2, 1e-1, 1.0, 10.0)
#: Training sets larger than this are thinned (evenly spaced rows) before
#: fitting; the dense Cholesky factorisation is O(n^3).
DEFAULT_MAX_POINTS = 2000


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def rbf_kernel(A, B, tau: float) -> np.ndarray:
    """``K_ij = exp(-0.5 * ||a_i/tau - b_j/tau||^2)``."""
    A = np.asarray(A, dtype=float) / tau
    B = np.asarray(B, dtype=float) / tau
    return np.exp(-0.5 * _sqdist(A, B))


def _factor(X, y, tau, noise):
    K = rbf_kernel(X, X, tau)
    K[np.diag_indices_from(K)] += noise
    c = linalg.cho_factor(K, lower=True, check_finite=False)
    alpha = linalg.cho_solve(c, y, check_finite=False)
    return c, alpha


def log_marginal_likelihood(X, y, tau: float, noise: float) -> float:
    """``log N(y | 0, K + noise I)``; raises ``LinAlgError`` when singular."""
    (L, _), alpha = _factor(np.asarray(X, float), np.asarray(y, float), tau, noise)
    n = len(y)
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))


@dataclass(frozen=True)
class GPModel:
    tau: float
    noise_var: float
    X_train: np.ndarray
    y_train: np.ndarray
    alpha: np.ndarray
    log_likelihood: float = float("nan")

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]

    @classmethod
    def from_training(cls, X, y, tau, noise_var, log_likelihood=float("nan")) -> "GPModel":
        X = np.array(X, dtype=float)
        y = np.array(y, dtype=float)
        _, alpha = _factor(X, y, tau, noise_var)
        for a in (X, y, alpha):
            a.setflags(write=False)
        return cls(float(tau), float(noise_var), X, y, alpha, float(log_likelihood))

    def predict(self, x):
        X, single = _as_rows(x, self.n_features)
        out = rbf_kernel(X, self.X_train, self.tau) @ self.alpha
        return float(out[0]) if single else out


def fit_gp(data, tau_grid: Sequence[float] = DEFAULT_TAU_GRID,
           noise_grid: Sequence[float] = DEFAULT_NOISE_GRID, *, y=None,
           max_points: int | None = DEFAULT_MAX_POINTS) -> GPModel:
    X, yv, _ = _as_xy(data, y)
    if len(yv) < 2:
        raise ValueError("GP fit needs at least 2 rows")
    if max_points is not None and len(yv) > max_points:
        keep = np.linspace(0, len(yv) - 1, max_points).round().astype(int)
        X, yv = X[keep], yv[keep]
    best = None
    for tau in tau_grid:
        if tau <= 0:
            raise ValueError("tau must be positive")
        for noise in noise_grid:
            try:
                ll = log_marginal_likelihood(X, yv, tau, noise)
            except (np.linalg.LinAlgError, linalg.LinAlgError):
                continue
            if np.isfinite(ll) and (best is None or ll > best[0]):
                best = (ll, tau, noise)
    if best is None:
        raise np.linalg.LinAlgError("Gram matrix singular at every grid point")
    ll, tau, noise = best
    return GPModel.from_training(X, yv, tau, noise, ll)

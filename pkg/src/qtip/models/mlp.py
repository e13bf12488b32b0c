"""Sigmoid multilayer perceptron whose output is the plain sum of the last
layer's activations.

Inputs are standardised per column. Targets are standardised too and then
shifted by ``g/2`` so that the middle of the reachable output range
``(0, g)`` corresponds to the training mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear import _as_rows, _as_xy

__all__ = ["MLPModel", "fit_mlp", "forward", "loss_and_grads"]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _aug(a):
    return np.hstack([a, np.ones((a.shape[0], 1))])


def forward(weights, X):
    """Raw output in (0, g) plus per-layer activations."""
    acts = [X]
    a = X
    for W in weights:
        a = _sigmoid(_aug(a) @ W)
        acts.append(a)
    return a.sum(axis=1), acts


def loss_and_grads(weights, X, y):
    """Mean squared error and its gradient with respect to every layer."""
    out, acts = forward(weights, X)
    n = X.shape[0]
    err = out - y
    loss = float(np.mean(err**2))
    da = np.repeat((2.0 / n) * err[:, None], acts[-1].shape[1], axis=1)
    grads = [None] * len(weights)
    for li in range(len(weights) - 1, -1, -1):
        a = acts[li + 1]
        dz = da * a * (1.0 - a)
        grads[li] = _aug(acts[li]).T @ dz
        da = dz @ weights[li][:-1].T
    return loss, grads


@dataclass(frozen=True)
class MLPModel:
    h: int
    g: int
    weights: tuple[np.ndarray, ...]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    epochs_trained: int = 0

    @property
    def n_features(self) -> int:
        return self.x_mean.size

    def raw(self, x) -> np.ndarray:
        X, _ = _as_rows(x, self.n_features)
        return forward(self.weights, (X - self.x_mean) / self.x_std)[0]

    def predict(self, x):
        X, single = _as_rows(x, self.n_features)
        out = (self.raw(X) - 0.5 * self.g) * self.y_std + self.y_mean
        return float(out[0]) if single else out


def _init(rng, k, h, g):
    ws = []
    fan_in = k
    for _ in range(h):
        lim = np.sqrt(6.0 / (fan_in + g))
        W = np.zeros((fan_in + 1, g))
        W[:-1] = rng.uniform(-lim, lim, size=(fan_in, g))
        ws.append(W)
        fan_in = g
    return ws


def fit_mlp(data, h: int = 1, g: int = 10, seed: int = 0, *, y=None, epochs: int = 100,
            batch_size: int = 100, lr: float = 1e-3, validation_split: float = 0.1,
            patience: int = 10) -> MLPModel:
    """Train with Adam on mean squared error.

    The last ``validation_split`` fraction of rows is held out; training
    stops once validation loss has not improved for ``patience`` epochs and
    the best weights seen are kept.
    """
    if h not in (1, 2) or g not in (5, 10):
        raise ValueError("h must be 1 or 2 and g must be 5 or 10")
    X, yv, _ = _as_xy(data, y)
    n, k = X.shape
    if n < 10:
        raise ValueError("MLP fit needs at least 10 rows")
    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std[x_std == 0] = 1.0
    y_mean = float(yv.mean())
    y_std = float(yv.std()) or 1.0
    Xs = (X - x_mean) / x_std
    ys = (yv - y_mean) / y_std + 0.5 * g

    n_val = max(1, int(round(n * validation_split)))
    Xt, yt, Xv, yvv = Xs[: n - n_val], ys[: n - n_val], Xs[n - n_val:], ys[n - n_val:]
    rng = np.random.default_rng(seed)
    ws = _init(rng, k, h, g)
    m = [np.zeros_like(w) for w in ws]
    v = [np.zeros_like(w) for w in ws]
    b1, b2, eps = 0.9, 0.999, 1e-7
    step = 0
    best_loss, best_ws, since, ep = np.inf, [w.copy() for w in ws], 0, 0
    for ep in range(1, epochs + 1):
        perm = rng.permutation(len(yt))
        for s in range(0, len(yt), batch_size):
            idx = perm[s: s + batch_size]
            _, grads = loss_and_grads(ws, Xt[idx], yt[idx])
            step += 1
            for i, gr in enumerate(grads):
                m[i] = b1 * m[i] + (1 - b1) * gr
                v[i] = b2 * v[i] + (1 - b2) * gr * gr
                mh = m[i] / (1 - b1**step)
                vh = v[i] / (1 - b2**step)
                ws[i] = ws[i] - lr * mh / (np.sqrt(vh) + eps)
        val = float(np.mean((forward(ws, Xv)[0] - yvv) ** 2))
        if val < best_loss - 1e-12:
            best_loss, best_ws, since = val, [w.copy() for w in ws], 0
        else:
            since += 1
            if since >= patience:
                break
    for w in best_ws:
        w.setflags(write=False)
    return MLPModel(h, g, tuple(best_ws), x_mean, x_std, y_mean, y_std, ep)

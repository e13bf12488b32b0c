"""Two-piece incident model routed on minutes since onset."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from ..features import EARLY_MINUTES
from .linear import _as_rows

__all__ = ["PiecewiseAbnormalModel"]


@dataclass(frozen=True)
class PiecewiseAbnormalModel:
    """``early`` serves rows with ``T_accident <= 6``, ``late`` the rest.

    Inputs always carry ``T_accident`` as the 7th column. A piece fitted on
    six features receives only the first six columns.
    """

    early: Any
    late: Any
    split: int = EARLY_MINUTES

    n_features = 7

    def route(self, t_accident) -> np.ndarray:
        return np.asarray(t_accident) <= self.split

    def predict(self, x):
        X, single = _as_rows(x, 7)
        out = np.empty(len(X))
        is_early = self.route(X[:, 6])
        for mask, piece in ((is_early, self.early), (~is_early, self.late)):
            if mask.any():
                out[mask] = piece.predict(X[mask][:, : piece.n_features])
        return float(out[0]) if single else out

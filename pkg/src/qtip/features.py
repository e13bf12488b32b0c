"""Lagged regression datasets built from simulated speed series.

The response is the study-link speed ``S0`` at minute ``t``; features are
the speeds 5 and 6 minutes earlier on S, U and D, in the order
``[S5, S6, U5, U6, D5, D6]``, optionally followed by ``T_accident``
(minutes since onset).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corridor import IncidentScenario
from .microsim import SpeedSeries

__all__ = [
    "FEATURES",
    "FEATURES_T",
    "PHASES",
    "EARLY_MINUTES",
    "RegressionDataset",
    "extract",
    "pool",
    "drop_updown",
]

FEATURES = ("S5", "S6", "U5", "U6", "D5", "D6")
FEATURES_T = FEATURES + ("T_accident",)
PHASES = ("normal", "incident_early", "incident_late")
LAGS = (5, 6)
LAG_DEPTH = max(LAGS)
#: Length of the first incident piece, in minutes after onset.
EARLY_MINUTES = 6


@dataclass(frozen=True)
class RegressionDataset:
    """Feature matrix ``X`` (n x k), response ``y`` and the minute of each row."""

    X: np.ndarray
    y: np.ndarray
    phase: str
    minutes: np.ndarray
    columns: tuple[str, ...] = FEATURES

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float).reshape(-1)
        minutes = np.array(self.minutes, dtype=int).reshape(-1)
        if X.shape[0] == 0 and X.shape[1] == 0 and len(self.columns) > 0:
            X = X.reshape(0, len(self.columns))
        if X.shape[0] != y.shape[0] or minutes.shape[0] != y.shape[0]:
            raise ValueError("X, y and minutes must have the same number of rows")
        if X.shape[1] != len(self.columns):
            raise ValueError("column names do not match X")
        if X.shape[1] not in (6, 7):
            raise ValueError("feature dimension must be 6 or 7")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        for a in (X, y, minutes):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "minutes", minutes)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def has_t(self) -> bool:
        return self.k == 7

    def without_t(self) -> "RegressionDataset":
        if not self.has_t:
            return self
        return RegressionDataset(self.X[:, :6], self.y, self.phase, self.minutes, FEATURES)

    def subset(self, mask) -> "RegressionDataset":
        return RegressionDataset(self.X[mask], self.y[mask], self.phase, self.minutes[mask],
                                 self.columns)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*self.columns, "S0", "phase", "minute"])
            for row, yv, m in zip(self.X, self.y, self.minutes):
                w.writerow([*(repr(float(v)) for v in row), repr(float(yv)), self.phase, int(m)])

    @staticmethod
    def read_csv(path: str | Path) -> list["RegressionDataset"]:
        """Read a dataset CSV; one dataset per phase found in the file."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        cols = tuple(header[:-3])
        out = []
        for ph in PHASES:
            sel = [r for r in rows if r[-2] == ph]
            if not sel:
                continue
            X = np.array([[float(v) for v in r[: len(cols)]] for r in sel]).reshape(-1, len(cols))
            out.append(RegressionDataset(X, [float(r[-3]) for r in sel], ph,
                                         [int(r[-1]) for r in sel], cols))
        return out


def _phase_of(t: int, onset: int, clearance: int) -> str | None:
    if t <= onset:
        return "normal"
    if t <= clearance:
        return "incident_early" if t <= onset + EARLY_MINUTES else "incident_late"
    if t >= clearance + LAG_DEPTH:
        return "normal"
    return None


def extract(series: SpeedSeries, incident: IncidentScenario | None = None,
            with_T: bool = False) -> dict[str, RegressionDataset]:
    """Split a speed series into per-phase regression datasets.

    Rows exist for every minute whose 5- and 6-minute lags are in the
    series. With an incident, minute ``t`` is ``incident_early`` when
    ``onset < t <= onset + 6``, ``incident_late`` when
    ``onset + 6 < t <= clearance``, and ``normal`` before onset or from 6
    minutes after clearance; the minutes in between are dropped because
    their lag window straddles the clearance. The onset minute itself is
    normal. Only phases with at least one row are returned.
    """
    if len(series) <= LAG_DEPTH:
        raise ValueError(f"series must cover more than {LAG_DEPTH} minutes")
    minutes = series.minutes
    if np.any(np.diff(minutes) != 1):
        raise ValueError("series minutes must be consecutive")
    S, U, D = series.S, series.U, series.D
    idx = np.arange(LAG_DEPTH, len(minutes))
    feats = np.column_stack([S[idx - 5], S[idx - 6], U[idx - 5], U[idx - 6], D[idx - 5], D[idx - 6]])
    y = S[idx]
    t = minutes[idx]
    if incident is None:
        phases = np.array(["normal"] * len(idx), dtype=object)
    else:
        phases = np.array([_phase_of(int(m), incident.start_time, incident.end_time) for m in t],
                          dtype=object)
    out = {}
    for ph in PHASES:
        mask = phases == ph
        if not mask.any():
            continue
        X = feats[mask]
        cols = FEATURES
        if with_T:
            if ph == "normal":
                # T_accident only exists for incident-phase rows
                pass
            else:
                X = np.column_stack([X, t[mask] - incident.start_time])
                cols = FEATURES_T
        out[ph] = RegressionDataset(X, y[mask], ph, t[mask], cols)
    return out


def pool(datasets: Sequence[RegressionDataset]) -> RegressionDataset:
    """Concatenate datasets row-wise in order."""
    if not datasets:
        raise ValueError("nothing to pool")
    first = datasets[0]
    for d in datasets[1:]:
        if d.k != first.k or d.columns != first.columns:
            raise ValueError(f"feature mismatch: k={first.k} vs k={d.k}")
        if d.phase != first.phase:
            raise ValueError(f"phase mismatch: {first.phase} vs {d.phase}")
    if len(datasets) == 1:
        return first
    return RegressionDataset(
        np.vstack([d.X for d in datasets]),
        np.concatenate([d.y for d in datasets]),
        first.phase,
        np.concatenate([d.minutes for d in datasets]),
        first.columns,
    )


def drop_updown(X: np.ndarray) -> np.ndarray:
    """Keep only the study-link lags (S5, S6) of a 6- or 7-column matrix."""
    X = np.asarray(X)
    keep = [0, 1] + ([6] if X.shape[1] == 7 else [])
    return X[:, keep]

"""Error measures for speed predictions and simulation calibration."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "residuals", "msd", "mae", "rmse", "relative_improvement", "rmsne", "geh", "GEHResult",
    "GEH_THRESHOLD", "MetricRow", "REPORT_COLUMNS", "write_report", "read_report",
]

GEH_THRESHOLD = 5.0


def _res(r) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size == 0:
        raise ValueError("empty residual set")
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite")
    return r


def residuals(pred, actual) -> np.ndarray:
    """Prediction minus actual."""
    return _res(np.asarray(pred, float) - np.asarray(actual, float))


def msd(r) -> float:
    """Mean signed deviation; positive means over-prediction."""
    return float(np.mean(_res(r)))


def mae(r) -> float:
    return float(np.mean(np.abs(_res(r))))


def rmse(r) -> float:
    return float(np.sqrt(np.mean(_res(r) ** 2)))


def relative_improvement(rmse_ord: float, rmse_abn: float) -> float:
    """``(rmse_ord - rmse_abn) / rmse_ord``; positive when the adapted model wins."""
    if rmse_ord == 0:
        raise ZeroDivisionError("reference RMSE is zero")
    if rmse_ord < 0 or rmse_abn < 0:
        raise ValueError("RMSE values must be non-negative")
    return (rmse_ord - rmse_abn) / rmse_ord


def _pairs(m, o):
    m = np.asarray(m, dtype=float).reshape(-1)
    o = np.asarray(o, dtype=float).reshape(-1)
    if m.shape != o.shape or m.size == 0:
        raise ValueError("need equally long, non-empty simulated and observed sequences")
    return m, o


def rmsne(simulated, observed, literal: bool = False) -> float:
    """Root mean squared normalised error ``sqrt(mean(((m - o)/o)^2))``.

    ``literal=True`` gives ``sqrt(mean((m - o)/o))`` instead, the variant
    without squaring; it is NaN when the mean normalised error is negative.
    """
    m, o = _pairs(simulated, observed)
    if np.any(o <= 0):
        raise ValueError("observed values must be positive")
    z = (m - o) / o
    if literal:
        s = float(np.mean(z))
        return float(np.sqrt(s)) if s >= 0 else float("nan")
    return float(np.sqrt(np.mean(z * z)))


@dataclass(frozen=True)
class GEHResult:
    values: np.ndarray
    max: float
    pass_fraction: float
    summed: float

    def passes(self, threshold: float = GEH_THRESHOLD) -> bool:
        return self.max < threshold


def geh(simulated, observed) -> GEHResult:
    """Per-pair ``sqrt(2 e^2 / p)`` with ``e = m - o`` and ``p = m + o``.

    ``summed`` is ``sqrt(sum(2 e^2) / sum(p))``, the single-radical form
    computed across all pairs at once.
    """
    m, o = _pairs(simulated, observed)
    e, p = m - o, m + o
    if np.any(p <= 0):
        raise ValueError("m + o must be positive")
    vals = np.sqrt(2 * e * e / p)
    vals.setflags(write=False)
    return GEHResult(vals, float(vals.max()), float(np.mean(vals < GEH_THRESHOLD)),
                     float(np.sqrt(np.sum(2 * e * e) / np.sum(p))))


REPORT_COLUMNS = ("scenario_id", "mode", "model", "phase", "msd", "mae", "rmse",
                  "rel_improvement")


@dataclass(frozen=True)
class MetricRow:
    scenario_id: str
    mode: str
    model: str
    phase: str
    msd: float
    mae: float
    rmse: float
    rel_improvement: float = float("nan")

    @classmethod
    def from_residuals(cls, r, scenario_id, mode, model, phase, rel_improvement=float("nan")):
        return cls(scenario_id, mode, model, phase, msd(r), mae(r), rmse(r), rel_improvement)


def write_report(rows: Iterable[MetricRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(asdict(row))


def read_report(path: str | Path) -> list[MetricRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for d in csv.DictReader(fh):
            out.append(MetricRow(d["scenario_id"], d["mode"], d["model"], d["phase"],
                                 *(float(d[c]) for c in REPORT_COLUMNS[4:])))
        return out

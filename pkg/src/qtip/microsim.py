"""Corridor microsimulator: IDM car following with MOBIL-style lane changes.

Vehicles enter at the head of link ``U`` as a Poisson stream, drive
``U -> S -> D`` and leave at the end of ``D``. Incident blocks are
stationary zero-speed obstacles that vehicles queue behind and merge
around. The output of every run is a :class:`SpeedSeries` of 1-minute
mean speeds per link.

Link speed for one minute is the arithmetic mean, over the time steps in
that minute, of the space-mean speed of vehicles on the link (steps with
an empty link are skipped; a minute with no vehicles at all records the
link's free-flow speed).
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernel as K
from .corridor import (
    CorridorSpec,
    IncidentScenario,
    ODMatrix,
    format_clock,
    parse_clock,
)

__all__ = [
    "SimConfig",
    "SpeedSeries",
    "SimDiagnostics",
    "CapacityError",
    "run",
    "run_with_diagnostics",
    "run_batch",
    "BatchJobError",
    "LAG_DEPTH_MIN",
]

LAG_DEPTH_MIN = 6
LINKS = ("U", "S", "D")


class CapacityError(ValueError):
    """Requested demand exceeds the configured saturation ceiling."""


class BatchJobError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"job {index} failed: {cause!r}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class SimConfig:
    """Simulation controls and behavioural parameters.

    ``clock_start``/``clock_end`` bound the *recorded* minutes; the engine
    starts ``warmup_min`` minutes earlier from an empty road.

    Car following: ``max_accel`` (m/s^2), ``comfort_decel`` (m/s^2),
    ``min_gap`` (standstill distance, m), ``headway`` (s). Lane changes:
    ``politeness`` and ``lc_threshold`` (m/s^2) for discretionary moves,
    ``keep_right_bias`` (m/s^2) favours moves to the right over the left,
    ``safe_decel``/``safe_decel_mandatory`` bound the braking imposed on
    the new follower, ``lookahead_m`` is how far ahead drivers react to a
    blocked lane. ``zone_speed_kmh`` caps desired speed near an active
    block (0 disables); with ``zone_adjacent_only`` the cap applies only to
    the blocked lane and its neighbours.
    """

    dt: float = 0.5
    clock_start: int = parse_clock("06:44")
    clock_end: int = parse_clock("08:00")
    warmup_min: int = 6
    seed: int = 0
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    min_gap: float = 3.0
    headway: float = 1.0
    accel_exponent: float = 4.0
    vehicle_length: float = 4.5
    max_decel: float = 9.0
    politeness: float = 0.2
    lc_threshold: float = 0.1
    keep_right_bias: float = 0.3
    safe_decel: float = 3.0
    safe_decel_mandatory: float = 4.5
    lookahead_m: float = 300.0
    lc_cooldown_s: float = 3.0
    lc_interval_s: float = 1.0
    zone_speed_kmh: float = 20.0
    zone_upstream_m: float = 100.0
    zone_downstream_m: float = 20.0
    zone_adjacent_only: bool = True
    desired_speed_kmh: tuple[float, float] = (80.0, 110.0)
    saturation_vph: float = 9000.0
    trace_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "clock_start", parse_clock(self.clock_start))
        object.__setattr__(self, "clock_end", parse_clock(self.clock_end))
        if not 0.0 < self.dt <= 1.0:
            raise ValueError("time step must be in (0, 1] s")
        if self.warmup_min < LAG_DEPTH_MIN:
            raise ValueError(f"warm-up must be at least {LAG_DEPTH_MIN} min")
        if self.clock_end <= self.clock_start:
            raise ValueError("clock_end must be after clock_start")
        if abs(60.0 / self.dt - round(60.0 / self.dt)) > 1e-9:
            raise ValueError("time step must divide one minute")
        lo, hi = self.desired_speed_kmh
        if not 0 < lo <= hi:
            raise ValueError("invalid desired speed range")

    @property
    def sim_start(self) -> int:
        return self.clock_start - self.warmup_min

    @property
    def n_minutes(self) -> int:
        return self.clock_end - self.clock_start

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class SpeedSeries:
    """1-minute mean speeds (km/h) on links U, S, D.

    ``minutes[i]`` is the clock minute (minutes after midnight) whose
    interval ``[m, m+1)`` produced row ``i``.
    """

    minutes: np.ndarray
    U: np.ndarray
    S: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        arrs = {}
        for name in ("minutes", *LINKS):
            a = np.array(getattr(self, name), dtype=int if name == "minutes" else float)
            a.setflags(write=False)
            arrs[name] = a
            object.__setattr__(self, name, a)
        n = len(arrs["minutes"])
        if any(len(arrs[k]) != n for k in LINKS):
            raise ValueError("link series must have equal length")

    def __len__(self):
        return len(self.minutes)

    def link(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def __eq__(self, other):
        if not isinstance(other, SpeedSeries):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("minutes", *LINKS))

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.U, self.S, self.D])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["minute", "clock", "U", "S", "D"])
            for i, m in enumerate(self.minutes):
                w.writerow([int(m), format_clock(int(m)),
                            repr(float(self.U[i])), repr(float(self.S[i])), repr(float(self.D[i]))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "SpeedSeries":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            minutes=[int(r["minute"]) for r in rows],
            U=[float(r["U"]) for r in rows],
            S=[float(r["S"]) for r in rows],
            D=[float(r["D"]) for r in rows],
        )

    @staticmethod
    def mean(series: Sequence["SpeedSeries"]) -> "SpeedSeries":
        """Minute-by-minute average of aligned series."""
        first = series[0]
        for s in series[1:]:
            if not np.array_equal(s.minutes, first.minutes):
                raise ValueError("series are not aligned")
        return SpeedSeries(
            first.minutes,
            *(np.mean([s.link(k) for s in series], axis=0) for k in LINKS),
        )


@dataclass
class SimDiagnostics:
    injected: int
    exited: int
    on_road: int
    pending: int
    min_gap: float
    conservation_ok: bool = field(init=False)

    def __post_init__(self):
        self.conservation_ok = self.injected == self.on_road + self.exited


def _params(corridor: CorridorSpec, cfg: SimConfig) -> np.ndarray:
    p = np.zeros(K.N_PARAMS)
    p[K.P_DT] = cfg.dt
    p[K.P_A] = cfg.max_accel
    p[K.P_B] = cfg.comfort_decel
    p[K.P_S0] = cfg.min_gap
    p[K.P_T] = cfg.headway
    p[K.P_DELTA] = cfg.accel_exponent
    p[K.P_LEN] = cfg.vehicle_length
    p[K.P_BMAX] = cfg.max_decel
    p[K.P_POLITE] = cfg.politeness
    p[K.P_THRESH] = cfg.lc_threshold
    p[K.P_BSAFE] = cfg.safe_decel
    p[K.P_BSAFE_MAND] = cfg.safe_decel_mandatory
    p[K.P_LOOKAHEAD] = cfg.lookahead_m
    p[K.P_COOLDOWN] = cfg.lc_cooldown_s
    p[K.P_ZONE_V] = cfg.zone_speed_kmh / 3.6
    p[K.P_ZONE_UP] = cfg.zone_upstream_m
    p[K.P_ZONE_DOWN] = cfg.zone_downstream_m
    p[K.P_ROAD_END] = corridor.total_length_m
    p[K.P_B_ACTIVATE] = 6.0
    p[K.P_LC_EVERY] = max(1, int(round(cfg.lc_interval_s / cfg.dt)))
    p[K.P_BIAS_RIGHT] = cfg.keep_right_bias
    p[K.P_ZONE_ADJ] = 1.0 if cfg.zone_adjacent_only else 0.0
    return p


def _arrivals(rate_vph: float, duration_s: float, nl: int, cfg: SimConfig, rng):
    """Poisson arrival times (s), preferred lanes and desired speeds (m/s)."""
    lam = rate_vph / 3600.0
    if lam <= 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0)
    n_guess = int(lam * duration_s + 10 * math.sqrt(lam * duration_s) + 20)
    gaps = rng.exponential(1.0 / lam, size=n_guess)
    t = np.cumsum(gaps)
    while t[-1] < duration_s:
        more = np.cumsum(rng.exponential(1.0 / lam, size=n_guess)) + t[-1]
        t = np.concatenate([t, more])
    t = t[t <= duration_s]
    lanes = rng.integers(0, nl, size=t.size).astype(np.int64)
    lo, hi = cfg.desired_speed_kmh
    vdes = rng.uniform(lo, hi, size=t.size) / 3.6
    return t, lanes, vdes


def run_with_diagnostics(corridor: CorridorSpec, od: ODMatrix,
                         incident: IncidentScenario | None, cfg: SimConfig,
                         ) -> tuple[SpeedSeries, SimDiagnostics]:
    """Run one simulation and also return conservation/gap diagnostics."""
    rate = od.total
    if rate > cfg.saturation_vph:
        raise CapacityError(
            f"OD rate {rate:.0f} veh/h exceeds saturation ceiling {cfg.saturation_vph:.0f} veh/h"
        )
    if incident is not None and not (
        cfg.clock_start <= incident.start_time < incident.end_time <= cfg.clock_end
    ):
        raise ValueError("incident lies outside the simulation horizon")
    rng = np.random.default_rng(cfg.seed)
    nl = corridor.lanes_per_link
    total_min = cfg.clock_end - cfg.sim_start
    arr_t, arr_lane, arr_vdes = _arrivals(rate, total_min * 60.0, nl, cfg, rng)

    cap = int(corridor.total_length_m * nl / (cfg.vehicle_length + cfg.min_gap)) + 4 * nl + 16
    x = np.zeros(cap)
    v = np.zeros(cap)
    vdes = np.ones(cap)
    lane = np.zeros(cap, dtype=np.int64)
    active = np.zeros(cap, dtype=np.bool_)
    vid = np.full(cap, -1, dtype=np.int64)
    cool = np.zeros(cap)
    order = np.zeros(cap, dtype=np.int64)
    free_stack = np.arange(cap - 1, -1, -1, dtype=np.int64)
    counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
    counters[K.C_FREE_TOP] = cap
    counters[K.C_NLANES] = nl

    if incident is not None:
        layout = incident.block_layout(corridor, cfg.vehicle_length)
        t_on = (incident.start_time - cfg.sim_start) * 60.0
        t_off = (incident.end_time - cfg.sim_start) * 60.0
    else:
        layout, t_on, t_off = [], 0.0, 0.0
    obs_lane = np.array([b[0] for b in layout], dtype=np.int64)
    obs_rear = np.array([b[1] for b in layout], dtype=float)
    obs_front = np.array([b[2] for b in layout], dtype=float)
    obs_start = np.full(len(layout), t_on)
    obs_end = np.full(len(layout), t_off)
    obs_on = np.zeros(len(layout), dtype=np.bool_)

    p = _params(corridor, cfg)
    bounds = corridor.link_bounds.astype(float)
    ffs = np.array([lk.free_flow_kmh for lk in corridor.links])
    steps_per_min = int(round(60.0 / cfg.dt))
    diag = np.array([np.inf])
    link_sum = np.zeros(3)
    link_steps = np.zeros(3, dtype=np.int64)
    out = np.empty((cfg.n_minutes, 3))
    trace = _TraceWriter(cfg.trace_path, corridor) if cfg.trace_path else None

    t = 0.0
    for m in range(total_min):
        link_sum[:] = 0.0
        link_steps[:] = 0
        if trace is None:
            t = K.advance(steps_per_min, t, order, x, v, vdes, lane, active, vid, cool,
                          obs_lane, obs_rear, obs_front, obs_start, obs_end, obs_on,
                          arr_t, arr_lane, arr_vdes, free_stack, counters, p,
                          bounds, link_sum, link_steps, diag)
        else:
            for _ in range(steps_per_min):
                t = K.advance(1, t, order, x, v, vdes, lane, active, vid, cool,
                              obs_lane, obs_rear, obs_front, obs_start, obs_end, obs_on,
                              arr_t, arr_lane, arr_vdes, free_stack, counters, p,
                              bounds, link_sum, link_steps, diag)
                trace.write(t, x, v, lane, active, vid)
        k = m - cfg.warmup_min
        if k >= 0:
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = np.where(link_steps > 0, link_sum / np.maximum(link_steps, 1) * 3.6, ffs)
            out[k] = mean
    if trace is not None:
        trace.close()

    minutes = np.arange(cfg.clock_start, cfg.clock_end)
    series = SpeedSeries(minutes, out[:, 0], out[:, 1], out[:, 2])
    on_road = int(active.sum())
    diagnostics = SimDiagnostics(
        injected=int(counters[K.C_INJECTED]),
        exited=int(counters[K.C_EXITED]),
        on_road=on_road,
        pending=int(np.searchsorted(arr_t, t, side="right") - counters[K.C_NEXT_ARRIVAL]),
        min_gap=float(diag[0]),
    )
    return series, diagnostics


def run(corridor: CorridorSpec, od: ODMatrix, incident: IncidentScenario | None,
        cfg: SimConfig) -> SpeedSeries:
    """Simulate one replication and return its 1-minute link speeds."""
    return run_with_diagnostics(corridor, od, incident, cfg)[0]


class _TraceWriter:
    """Per-step vehicle dump: t_s, vehicle_id, link, lane, pos_m, speed_mps."""

    def __init__(self, path, corridor: CorridorSpec):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.w = csv.writer(self.fh)
        self.w.writerow(["t_s", "vehicle_id", "link", "lane", "pos_m", "speed_mps"])
        self.bounds = corridor.link_bounds
        self.names = corridor.link_names

    def write(self, t, x, v, lane, active, vid):
        for i in np.flatnonzero(active):
            k = int(np.searchsorted(self.bounds, x[i], side="right") - 1)
            k = min(max(k, 0), 2)
            self.w.writerow([f"{t:.1f}", int(vid[i]), self.names[k], int(lane[i]),
                             f"{x[i]:.3f}", f"{v[i]:.4f}"])

    def close(self):
        self.fh.close()


def _run_job(args):
    corridor, od, incident, cfg = args
    return run(corridor, od, incident, cfg)


def default_workers() -> int:
    env = os.environ.get("QTIP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_batch(corridor: CorridorSpec, jobs: Sequence[tuple], cfg: SimConfig,
              workers: int | None = None) -> list[SpeedSeries]:
    """Run independent ``(od, incident, seed)`` jobs, preserving order.

    Results equal sequential :func:`run` calls job by job. With more than
    one worker the jobs are spread over a process pool.
    """
    tasks = [(corridor, od, inc, cfg.with_seed(seed)) for od, inc, seed in jobs]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) <= 1:
        out = []
        for i, task in enumerate(tasks):
            try:
                out.append(_run_job(task))
            except Exception as exc:
                raise BatchJobError(i, exc) from exc
        return out
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        futures = [pool.submit(_run_job, task) for task in tasks]
        out = []
        for i, fut in enumerate(futures):
            try:
                out.append(fut.result())
            except Exception as exc:
                for f in futures[i + 1:]:
                    f.cancel()
                raise BatchJobError(i, exc) from exc
        return out

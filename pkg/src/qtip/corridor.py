"""Corridor geometry, demand, incidents and the enumerable scenario space.

The corridor is three consecutive links, upstream ``U``, study ``S`` and
downstream ``D``, each with three lanes and traversed in one direction.
Demand enters at the head of ``U`` from a single source, so the OD matrix
is 1x1; the perturbation law is still applied entry-wise so general
matrices work too.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "LinkSpec",
    "CorridorSpec",
    "ODMatrix",
    "DemandLevel",
    "Position",
    "Lane",
    "IncidentScenario",
    "DistressSignal",
    "LANE_CONFIGS",
    "DEFAULT_DEMAND_VPH",
    "DEFAULT_INCIDENT_WINDOW",
    "parse_clock",
    "format_clock",
    "perturb_od",
    "enumerate_scenarios",
    "consistent_scenarios",
    "load_config",
    "CorridorConfig",
    "scenario_from_id",
]

#: Medium-demand source rate (veh/h) at the corridor entrance.
DEFAULT_DEMAND_VPH = 3171.0
#: Perturbation spread of the per-entry OD multiplier.
OD_NOISE_STD = 0.2
BLOCK_SPACING_M = 10.0


def parse_clock(text: str | int) -> int:
    """Map ``"HH:MM"`` to minutes after midnight (ints pass through)."""
    if isinstance(text, (int, np.integer)):
        return int(text)
    hh, mm = str(text).strip().split(":")
    hours, minutes = int(hh), int(mm)
    if not (0 <= hours < 24 and 0 <= minutes < 60):
        raise ValueError(f"invalid clock time {text!r}")
    return hours * 60 + minutes


def format_clock(minute: int) -> str:
    return f"{minute // 60:d}:{minute % 60:02d}"


#: Incident onset and clearance: 7:10 to 7:40.
DEFAULT_INCIDENT_WINDOW = (parse_clock("07:10"), parse_clock("07:40"))


@dataclass(frozen=True)
class LinkSpec:
    name: str
    length_m: float
    free_flow_kmh: float

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError(f"link {self.name}: length must be > 0")
        if self.free_flow_kmh <= 0:
            raise ValueError(f"link {self.name}: free-flow speed must be > 0")


@dataclass(frozen=True)
class CorridorSpec:
    """Three links U -> S -> D with a common lane count."""

    links: tuple[LinkSpec, LinkSpec, LinkSpec] = (
        LinkSpec("U", 1500.0, 100.0),
        LinkSpec("S", 1000.0, 100.0),
        LinkSpec("D", 1000.0, 100.0),
    )
    lanes_per_link: int = 3

    def __post_init__(self):
        links = tuple(self.links)
        object.__setattr__(self, "links", links)
        if len(links) != 3:
            raise ValueError("corridor must have exactly 3 links (U, S, D)")
        if [lk.name for lk in links] != ["U", "S", "D"]:
            raise ValueError("links must be ordered U, S, D")
        if self.lanes_per_link != 3:
            raise ValueError("corridor links have exactly 3 lanes")

    @property
    def link_names(self) -> tuple[str, ...]:
        return tuple(lk.name for lk in self.links)

    def link(self, name: str) -> LinkSpec:
        for lk in self.links:
            if lk.name == name:
                return lk
        raise KeyError(name)

    @property
    def link_bounds(self) -> np.ndarray:
        """Cumulative link boundaries in metres, shape (4,)."""
        return np.concatenate([[0.0], np.cumsum([lk.length_m for lk in self.links])])

    @property
    def total_length_m(self) -> float:
        return float(self.link_bounds[-1])

    @property
    def max_speed_kmh(self) -> float:
        return max(lk.free_flow_kmh for lk in self.links) * 1.1

    def study_offset(self, fraction: float) -> float:
        """Absolute position (m) of a fraction along the study link."""
        lo, hi = self.link_bounds[1], self.link_bounds[2]
        return float(lo + fraction * (hi - lo))


@dataclass(frozen=True)
class ODMatrix:
    """Non-negative demand rates in vehicles per hour."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, ndmin=2)
        if a.ndim != 2:
            raise ValueError("OD matrix must be 2-D")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("OD entries must be finite and non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def single(cls, rate_vph: float = DEFAULT_DEMAND_VPH) -> "ODMatrix":
        return cls(np.array([[rate_vph]]))

    @property
    def total(self) -> float:
        return float(self.entries.sum())

    def __eq__(self, other):
        if not isinstance(other, ODMatrix):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(
            np.array_equal(self.entries, other.entries)
        )

    def __hash__(self):
        return hash((self.entries.shape, self.entries.tobytes()))


class DemandLevel(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def scale(self) -> float:
        return _DEMAND_SCALE[self]

    @property
    def code(self) -> str:
        return self.value[0].upper()

    @classmethod
    def parse(cls, text: "str | DemandLevel") -> "DemandLevel":
        if isinstance(text, cls):
            return text
        return cls(str(text).lower())


_DEMAND_SCALE = {DemandLevel.LOW: 0.7, DemandLevel.MEDIUM: 1.0, DemandLevel.HIGH: 1.3}


class Position(enum.Enum):
    """Longitudinal location of the blocks on the study link."""

    START = "start"
    CENTER = "center"
    END = "end"

    @property
    def fraction(self) -> float:
        return _POSITION_FRACTION[self]

    @property
    def code(self) -> str:
        return self.value[0].upper()

    @classmethod
    def parse(cls, text: "str | Position") -> "Position":
        if isinstance(text, cls):
            return text
        return cls(str(text).lower())


_POSITION_FRACTION = {Position.START: 0.1, Position.CENTER: 0.5, Position.END: 0.9}


class Lane(enum.IntEnum):
    LEFT = 0
    MIDDLE = 1
    RIGHT = 2

    @property
    def code(self) -> str:
        return self.name[0]

    @classmethod
    def parse(cls, text: "str | int | Lane") -> "Lane":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        t = str(text).strip().upper()
        for lane in cls:
            if t in (lane.name, lane.code):
                return lane
        raise ValueError(f"unknown lane {text!r}")


def _canonical_blocks(lanes: Iterable[Lane]) -> tuple[Lane, ...]:
    return tuple(sorted(Lane.parse(x) for x in lanes))


#: Lane configurations in canonical order: singles, same-lane pairs, distinct pairs.
LANE_CONFIGS: tuple[tuple[Lane, ...], ...] = (
    tuple((lane,) for lane in Lane)
    + tuple((lane, lane) for lane in Lane)
    + tuple(itertools.combinations(Lane, 2))
)


@dataclass(frozen=True)
class IncidentScenario:
    """One incident: demand level, location on S, blocked lanes, time window.

    Two blocks on the same lane sit one behind the other, 10 m apart; two
    blocks on different lanes sit side by side.
    """

    demand: DemandLevel
    position: Position
    blocks: tuple[Lane, ...]
    start_time: int = DEFAULT_INCIDENT_WINDOW[0]
    end_time: int = DEFAULT_INCIDENT_WINDOW[1]

    def __post_init__(self):
        object.__setattr__(self, "demand", DemandLevel.parse(self.demand))
        object.__setattr__(self, "position", Position.parse(self.position))
        object.__setattr__(self, "blocks", _canonical_blocks(self.blocks))
        object.__setattr__(self, "start_time", parse_clock(self.start_time))
        object.__setattr__(self, "end_time", parse_clock(self.end_time))
        if not 1 <= len(self.blocks) <= 2:
            raise ValueError("an incident has 1 or 2 blocks")
        if self.start_time >= self.end_time:
            raise ValueError("incident start must precede its end")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def same_lane(self) -> bool:
        return len(self.blocks) == 2 and self.blocks[0] == self.blocks[1]

    @property
    def scenario_id(self) -> str:
        """Compact id, e.g. ``H-C-LM`` (demand, position, blocked lanes)."""
        lanes = "".join(b.code for b in self.blocks)
        return f"{self.demand.code}-{self.position.code}-{lanes}"

    def template_key(self) -> tuple:
        """Structural key ignoring the time window."""
        return (self.demand, self.position, self.blocks)

    def block_layout(self, corridor: CorridorSpec, length_m: float = 5.0):
        """Block footprints as ``(lane, rear_m, front_m)`` in corridor coordinates."""
        x = corridor.study_offset(self.position.fraction)
        if self.same_lane:
            lane = int(self.blocks[0])
            return [
                (lane, x, x + length_m),
                (lane, x + length_m + BLOCK_SPACING_M, x + 2 * length_m + BLOCK_SPACING_M),
            ]
        return [(int(b), x, x + length_m) for b in self.blocks]

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "demand": self.demand.value,
            "position": self.position.value,
            "blocks": [b.name.lower() for b in self.blocks],
            "start_time": format_clock(self.start_time),
            "end_time": format_clock(self.end_time),
        }


@dataclass(frozen=True)
class DistressSignal:
    """What the incident notification reveals: time, link and block count.

    ``lanes`` is only present in high-precision mode; the position of the
    blocks along the link is never observed.
    """

    link_id: str
    time: int
    n_blocks: int
    lanes: tuple[Lane, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "time", parse_clock(self.time))
        if self.n_blocks not in (1, 2):
            raise ValueError(f"n_blocks must be 1 or 2, got {self.n_blocks}")
        if self.lanes is not None:
            lanes = _canonical_blocks(self.lanes)
            if len(lanes) != self.n_blocks:
                raise ValueError("number of signalled lanes must equal n_blocks")
            object.__setattr__(self, "lanes", lanes)

    @classmethod
    def from_scenario(cls, scenario: IncidentScenario, known_lanes: bool) -> "DistressSignal":
        return cls(
            link_id="S",
            time=scenario.start_time,
            n_blocks=scenario.n_blocks,
            lanes=scenario.blocks if known_lanes else None,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "DistressSignal":
        lanes = d.get("lanes")
        return cls(
            link_id=d.get("link_id", "S"),
            time=d["time"],
            n_blocks=int(d["n_blocks"]),
            lanes=None if lanes is None else tuple(Lane.parse(x) for x in lanes),
        )

    def to_dict(self) -> dict:
        return {
            "link_id": self.link_id,
            "time": format_clock(self.time),
            "n_blocks": self.n_blocks,
            "lanes": None if self.lanes is None else [b.name.lower() for b in self.lanes],
        }

    @property
    def key(self) -> str:
        lanes = "?" if self.lanes is None else "".join(b.code for b in self.lanes)
        return f"{self.link_id}{self.time}-{self.n_blocks}-{lanes}"


def perturb_od(A: ODMatrix, demand: DemandLevel, seed) -> ODMatrix:
    """Draw a perturbed, demand-scaled OD matrix.

    Each entry is multiplied by an independent ``N(1, 0.2)`` draw and the
    whole matrix by the demand scale; negative draws are clipped to zero.
    """
    rng = np.random.default_rng(seed)
    c = rng.normal(1.0, OD_NOISE_STD, size=A.entries.shape)
    return ODMatrix(np.maximum(0.0, DemandLevel.parse(demand).scale * c * A.entries))


def enumerate_scenarios(
    incident_window: tuple[int | str, int | str] = DEFAULT_INCIDENT_WINDOW,
) -> list[IncidentScenario]:
    """All 81 incident scenarios in canonical (demand, position, lanes) order."""
    start, end = incident_window
    return [
        IncidentScenario(d, p, blocks, start, end)
        for d in DemandLevel
        for p in Position
        for blocks in LANE_CONFIGS
    ]


def consistent_scenarios(sig: DistressSignal, known_lanes: bool, duration: int | None = None
                         ) -> list[IncidentScenario]:
    """What-if templates compatible with a distress signal.

    Demand level and position are never observed, so all three of each are
    covered. Lanes are pinned to the signalled ones when ``known_lanes``,
    otherwise every configuration with ``sig.n_blocks`` blocks is used.
    """
    if sig.n_blocks not in (1, 2):
        raise ValueError(f"n_blocks must be 1 or 2, got {sig.n_blocks}")
    if known_lanes:
        if sig.lanes is None:
            raise ValueError("known-lanes mode needs a signal that carries lanes")
        configs = [sig.lanes]
    else:
        configs = [c for c in LANE_CONFIGS if len(c) == sig.n_blocks]
    if duration is None:
        duration = DEFAULT_INCIDENT_WINDOW[1] - DEFAULT_INCIDENT_WINDOW[0]
    return [
        IncidentScenario(d, p, c, sig.time, sig.time + duration)
        for d in DemandLevel
        for p in Position
        for c in configs
    ]


@dataclass(frozen=True)
class CorridorConfig:
    """Everything loaded from a corridor config file."""

    corridor: CorridorSpec = field(default_factory=CorridorSpec)
    demand_vph: float = DEFAULT_DEMAND_VPH
    incident_window: tuple[int, int] = DEFAULT_INCIDENT_WINDOW
    horizon: tuple[int, int] = (parse_clock("06:44"), parse_clock("08:00"))

    @property
    def od(self) -> ODMatrix:
        return ODMatrix.single(self.demand_vph)

    def to_dict(self) -> dict:
        return {
            "links": [
                {"name": lk.name, "length_m": lk.length_m, "free_flow_kmh": lk.free_flow_kmh}
                for lk in self.corridor.links
            ],
            "lanes": self.corridor.lanes_per_link,
            "demand_vph": self.demand_vph,
            "incident_window": [format_clock(t) for t in self.incident_window],
            "horizon": [format_clock(t) for t in self.horizon],
        }


def load_config(path: str | Path | None = None, data: dict | None = None) -> CorridorConfig:
    """Read a corridor config from JSON (or an already-parsed dict).

    Missing keys fall back to defaults. Example::

        {"links": [{"name": "U", "length_m": 1500, "free_flow_kmh": 100}, ...],
         "lanes": 3, "demand_vph": 3171,
         "incident_window": ["07:10", "07:40"], "horizon": ["06:44", "08:00"]}
    """
    if data is None:
        data = {} if path is None else json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("corridor config must be a JSON object")
    default = CorridorConfig()
    try:
        if "links" in data:
            links = tuple(
                LinkSpec(str(d["name"]), float(d["length_m"]), float(d["free_flow_kmh"]))
                for d in data["links"]
            )
        else:
            links = default.corridor.links
        corridor = CorridorSpec(links, int(data.get("lanes", 3)))
        window = tuple(parse_clock(t) for t in data.get("incident_window", default.incident_window))
        horizon = tuple(parse_clock(t) for t in data.get("horizon", default.horizon))
        demand = float(data.get("demand_vph", default.demand_vph))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed corridor config: {exc}") from exc
    if len(window) != 2 or window[0] >= window[1]:
        raise ValueError("incident_window must be [start, end] with start < end")
    if len(horizon) != 2 or not horizon[0] < window[0] < window[1] <= horizon[1]:
        raise ValueError("incident window must lie inside the horizon")
    if demand < 0:
        raise ValueError("demand_vph must be >= 0")
    return CorridorConfig(corridor, demand, window, horizon)


def scenario_from_id(scenario_id: str, window: Sequence[int] = DEFAULT_INCIDENT_WINDOW
                     ) -> IncidentScenario:
    """Inverse of :attr:`IncidentScenario.scenario_id`."""
    d, p, lanes = scenario_id.split("-")
    demand = {lvl.code: lvl for lvl in DemandLevel}[d]
    pos = {x.code: x for x in Position}[p]
    return IncidentScenario(demand, pos, tuple(Lane.parse(c) for c in lanes), window[0], window[1])

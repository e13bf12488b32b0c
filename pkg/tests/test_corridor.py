import json
from unittest import mock

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtip.corridor import (
    LANE_CONFIGS,
    CorridorSpec,
    DemandLevel,
    DistressSignal,
    IncidentScenario,
    Lane,
    LinkSpec,
    ODMatrix,
    Position,
    consistent_scenarios,
    enumerate_scenarios,
    format_clock,
    load_config,
    parse_clock,
    perturb_od,
    scenario_from_id,
)


def test_demand_scales():
    assert DemandLevel.LOW.scale == 0.7
    assert DemandLevel.MEDIUM.scale == 1.0
    assert DemandLevel.HIGH.scale == 1.3


def test_clock_round_trip():
    assert parse_clock("07:10") == 430
    assert format_clock(430) == "7:10"
    assert parse_clock(format_clock(475)) == 475


def test_corridor_shape():
    c = CorridorSpec()
    assert c.link_names == ("U", "S", "D")
    assert c.lanes_per_link == 3
    np.testing.assert_array_equal(c.link_bounds, [0, 1500, 2500, 3500])
    with pytest.raises(ValueError):
        CorridorSpec(links=(LinkSpec("U", 100, 100), LinkSpec("S", 100, 100)))
    with pytest.raises(ValueError):
        LinkSpec("U", -1.0, 100.0)


def test_od_rejects_negative():
    with pytest.raises(ValueError):
        ODMatrix(np.array([[-1.0]]))


def _draw(value):
    """Patch the N(1, 0.2) draw so perturb_od sees ``value``."""
    class FakeRng:
        def normal(self, loc, scale, size):
            return np.full(size, value)
    return mock.patch("qtip.corridor.np.random.default_rng", return_value=FakeRng())


@pytest.mark.parametrize("level,draw,expected", [
    ("medium", 1.0, 1000.0),
    ("high", 1.0, 1300.0),
    ("low", 0.9, 630.0),
])
def test_perturb_od_examples(level, draw, expected):
    with _draw(draw):
        out = perturb_od(ODMatrix(np.array([[1000.0]])), DemandLevel.parse(level), 0)
    assert out.entries[0, 0] == pytest.approx(expected, abs=1e-9)


def test_perturb_od_clips_negative_draws():
    with _draw(-0.5):
        out = perturb_od(ODMatrix(np.array([[1000.0]])), DemandLevel.HIGH, 0)
    assert out.entries[0, 0] == 0.0


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(DemandLevel)))
def test_perturb_od_reproducible(seed, level):
    A = ODMatrix(np.array([[800.0, 50.0], [0.0, 300.0]]))
    a, b = perturb_od(A, level, seed), perturb_od(A, level, seed)
    assert np.array_equal(a.entries, b.entries)
    assert np.all(a.entries >= 0)


def test_perturb_od_mean():
    A = ODMatrix.single(1000.0)
    draws = np.array([perturb_od(A, DemandLevel.HIGH, s).total for s in range(4000)])
    se = draws.std(ddof=1) / np.sqrt(draws.size)
    assert abs(draws.mean() - 1300.0) < 3 * se


def test_enumerate_81_distinct():
    scns = enumerate_scenarios()
    assert len(scns) == 81
    assert len(set(scns)) == 81
    assert len({s.scenario_id for s in scns}) == 81
    assert sum(s.demand is DemandLevel.LOW for s in scns) == 27
    assert sum(s.n_blocks == 2 and not s.same_lane for s in scns) == 27


def test_lane_configs():
    assert len(LANE_CONFIGS) == 9
    assert sum(len(c) == 1 for c in LANE_CONFIGS) == 3


@pytest.mark.parametrize("n_blocks,lanes,known,count", [
    (1, (Lane.MIDDLE,), True, 9),
    (1, None, False, 27),
    (2, None, False, 54),
    (2, (Lane.LEFT, Lane.RIGHT), True, 9),
])
def test_consistent_counts(n_blocks, lanes, known, count):
    sig = DistressSignal("S", 430, n_blocks, lanes)
    assert len(consistent_scenarios(sig, known)) == count


def test_consistent_rejects_bad_signal():
    with pytest.raises(ValueError):
        DistressSignal("S", 430, 3)
    with pytest.raises(ValueError):
        consistent_scenarios(DistressSignal("S", 430, 1), known_lanes=True)


@given(st.sampled_from(enumerate_scenarios()))
def test_consistent_subset_property(scn):
    grid = {s.template_key() for s in enumerate_scenarios()}
    known = consistent_scenarios(DistressSignal.from_scenario(scn, True), True)
    unknown = consistent_scenarios(DistressSignal.from_scenario(scn, False), False)
    kk = {s.template_key() for s in known}
    uk = {s.template_key() for s in unknown}
    assert kk <= uk <= grid
    assert scn.template_key() in kk


def test_block_layout():
    c = CorridorSpec()
    same = IncidentScenario("high", "center", (Lane.LEFT, Lane.LEFT))
    (l1, r1, f1), (l2, r2, f2) = same.block_layout(c, 5.0)
    assert l1 == l2 == 0
    assert r2 - f1 == pytest.approx(10.0)
    side = IncidentScenario("high", "start", (Lane.LEFT, Lane.RIGHT))
    (_, ra, _), (_, rb, _) = side.block_layout(c, 5.0)
    assert ra == rb == pytest.approx(1500 + 100)


def test_scenario_id_round_trip():
    for s in enumerate_scenarios():
        assert scenario_from_id(s.scenario_id) == s
    assert scenario_from_id("H-C-LM").position is Position.CENTER


def test_signal_dict_round_trip():
    sig = DistressSignal("S", "07:10", 2, (Lane.RIGHT, Lane.LEFT))
    assert sig.lanes == (Lane.LEFT, Lane.RIGHT)
    assert DistressSignal.from_dict(json.loads(json.dumps(sig.to_dict()))) == sig
    with pytest.raises(ValueError):
        DistressSignal("S", 430, 2, (Lane.LEFT,))


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"demand_vph": 2000, "incident_window": ["07:00", "07:20"]}))
    cfg = load_config(p)
    assert cfg.demand_vph == 2000
    assert cfg.incident_window == (420, 440)
    assert load_config(data=cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        load_config(data={"incident_window": ["07:40", "07:10"]})
    with pytest.raises(ValueError):
        load_config(data={"links": [{"name": "U"}]})
    with pytest.raises(ValueError):
        load_config(data=[1, 2])

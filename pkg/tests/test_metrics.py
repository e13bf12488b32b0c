import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtip.metrics import (
    MetricRow,
    geh,
    mae,
    msd,
    read_report,
    relative_improvement,
    residuals,
    rmse,
    rmsne,
    write_report,
)

finite = st.floats(-200, 200, allow_nan=False)
positive = st.floats(1, 200, allow_nan=False)


def test_zero_residuals():
    assert msd([0, 0, 0]) == mae([0, 0, 0]) == rmse([0, 0, 0]) == 0


def test_hand_values():
    r = [1, -1, 2]
    assert msd(r) == pytest.approx(2 / 3)
    assert mae(r) == pytest.approx(4 / 3)
    assert rmse(r) == pytest.approx(math.sqrt(2))


def test_residual_sign():
    np.testing.assert_array_equal(residuals([90, 80], [100, 70]), [-10, 10])


def test_rejects_empty_or_nan():
    with pytest.raises(ValueError):
        msd([])
    with pytest.raises(ValueError):
        rmse([1.0, float("nan")])


@given(st.lists(finite, min_size=1, max_size=40))
def test_error_ordering(r):
    assert abs(msd(r)) <= mae(r) + 1e-9 <= rmse(r) + 2e-9


@pytest.mark.parametrize("o,a,expected", [(10, 10, 0.0), (10, 5, 0.5), (5, 10, -1.0)])
def test_relative_improvement(o, a, expected):
    assert relative_improvement(o, a) == pytest.approx(expected)


def test_relative_improvement_zero_reference():
    with pytest.raises(ZeroDivisionError):
        relative_improvement(0.0, 1.0)


def test_rmsne_examples():
    assert rmsne([100, 50], [100, 50]) == 0
    assert rmsne([110], [100]) == pytest.approx(0.1)
    assert rmsne([110, 90], [100, 100]) == pytest.approx(0.1)
    assert rmsne([110, 90], [100, 100], literal=True) == pytest.approx(0.0)
    assert math.isnan(rmsne([90], [100], literal=True))
    assert rmsne([121], [100], literal=True) == pytest.approx(math.sqrt(0.21))
    with pytest.raises(ValueError):
        rmsne([1], [0])


def test_geh_examples():
    assert geh([100], [100]).max == 0
    assert geh([110], [90]).values[0] == pytest.approx(2.0)
    g = geh([130], [70])
    assert g.values[0] == pytest.approx(6.0)
    assert not g.passes()
    both = geh([110, 130], [90, 70])
    assert both.max == pytest.approx(6.0)
    assert both.pass_fraction == 0.5
    assert both.summed == pytest.approx(math.sqrt((800 + 7200) / 400))
    with pytest.raises(ValueError):
        geh([-5], [1])


@given(st.lists(st.tuples(positive, positive), min_size=1, max_size=20), st.randoms())
def test_permutation_invariance(pairs, rnd):
    m, o = map(np.array, zip(*pairs))
    perm = list(range(len(pairs)))
    rnd.shuffle(perm)
    assert rmsne(m[perm], o[perm]) == pytest.approx(rmsne(m, o), rel=1e-12)
    assert geh(m[perm], o[perm]).max == geh(m, o).max
    assert geh(m[perm], o[perm]).summed == pytest.approx(geh(m, o).summed, rel=1e-12)


@given(positive, st.floats(0, 50))
def test_geh_sign_symmetry(base, e):
    # same |e| and same p = m + o, opposite sign of e
    a = geh([base + e], [base]).values[0]
    b = geh([base], [base + e]).values[0]
    assert a == pytest.approx(b, rel=1e-12)


def test_report_round_trip(tmp_path):
    rows = [MetricRow.from_residuals([1, -1, 2], "H-C-LM", "known_lanes", "lr",
                                     "incident_early", 0.25),
            MetricRow("L-S-L", "unknown_lanes", "lr", "incident_early", 0.1, 0.2, 0.3)]
    path = tmp_path / "m.csv"
    write_report(rows, path)
    assert path.read_text().splitlines()[0] == (
        "scenario_id,mode,model,phase,msd,mae,rmse,rel_improvement")
    back = read_report(path)
    assert back[0] == rows[0]
    assert math.isnan(back[1].rel_improvement)

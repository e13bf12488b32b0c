import json

import numpy as np
import pytest

from qtip.corridor import CorridorConfig, DistressSignal, Lane, scenario_from_id
from qtip.models import LinearModel, PiecewiseAbnormalModel
from qtip import orchestrator as orch

SMALL_CFG = CorridorConfig(incident_window=(420, 432), horizon=(404, 440))


def small_plan(tmp_path, **kw):
    base = dict(n_ordinary_sims=3, n_ground_truth=2, whatif_budget=9, workers=1,
                config=SMALL_CFG, cache_dir=str(tmp_path / "cache"),
                scenarios=("H-C-LM", "M-S-R"))
    base.update(kw)
    return orch.ExperimentPlan(**base)


@pytest.mark.parametrize("n,budget,expected", [
    (9, 100, [12] + [11] * 8),
    (54, 100, [2] * 46 + [1] * 8),
    (27, 27, [1] * 27),
])
def test_allocate_budget(n, budget, expected):
    assert orch.allocate_budget(n, budget) == expected


def test_allocate_budget_too_small():
    with pytest.raises(ValueError, match="at least 54"):
        orch.allocate_budget(54, 20)


def test_derive_seed():
    a = orch.derive_seed(0, "whatif", 1, 2)
    assert a == orch.derive_seed(0, "whatif", 1, 2)
    assert a != orch.derive_seed(1, "whatif", 1, 2)
    assert a != orch.derive_seed(0, "ordinary", 1, 2)
    assert a != orch.derive_seed(0, "whatif", 2, 1)
    assert 0 <= a < 2**63


def test_plan_validation():
    with pytest.raises(ValueError):
        orch.ExperimentPlan(n_ordinary_sims=100)
    with pytest.raises(ValueError):
        orch.ExperimentPlan(mode="precise")
    with pytest.raises(ValueError):
        orch.ExperimentPlan(n_ground_truth=0)
    assert len(orch.ExperimentPlan().scenario_list()) == 81


def test_train_ordinary_deterministic(tmp_path):
    plan = small_plan(tmp_path)
    a = orch.train_ordinary(plan)
    b = orch.train_ordinary(small_plan(tmp_path, cache_dir=None))
    assert isinstance(a, LinearModel) and a.n_features == 6
    np.testing.assert_array_equal(a.beta, b.beta)
    c = orch.train_ordinary(small_plan(tmp_path, cache_dir=None, master_seed=1))
    assert not np.array_equal(a.beta, c.beta)


def test_adapt_fresh_and_bayes(tmp_path):
    plan = small_plan(tmp_path)
    m_ord = orch.train_ordinary(plan)
    sig = DistressSignal("S", 420, 1, (Lane.MIDDLE,))
    fresh = orch.adapt(m_ord, sig, plan, "fresh")
    assert isinstance(fresh, PiecewiseAbnormalModel)
    assert fresh.early.n_features == 7 and fresh.late.n_features == 7
    bayes = orch.adapt(m_ord, sig, plan, "bayes")
    assert bayes.early.n_features == 6
    np.testing.assert_array_equal(bayes.early.prior_mean, m_ord.beta)


def test_adapt_budget_checks(tmp_path):
    plan = small_plan(tmp_path, mode="unknown_lanes")
    m_ord = LinearModel(np.full(6, 1 / 6))
    sig = DistressSignal("S", 420, 2)
    with pytest.raises(ValueError, match="at least 54"):
        orch.adapt(m_ord, sig, plan, "fresh")
    with pytest.raises(ValueError):
        orch.adapt(m_ord, sig, plan, "fresh", budget=0)


def test_adapt_bayes_zero_budget_returns_prior(tmp_path):
    plan = small_plan(tmp_path)
    m_ord = LinearModel(np.array([0.3, 0.2, 0.2, 0.1, 0.1, 0.1]))
    model = orch.adapt(m_ord, DistressSignal("S", 420, 1, (Lane.LEFT,)), plan, "bayes", budget=0)
    X = np.column_stack([np.random.default_rng(0).normal(80, 5, (12, 6)), np.arange(1, 13)])
    np.testing.assert_allclose(model.predict(X), m_ord.predict(X[:, :6]))


def test_improvement_study_layout_and_determinism(tmp_path):
    plan = small_plan(tmp_path, whatif_budget=27, scenarios=("H-C-M", "M-S-R"))
    out = tmp_path / "improvement"
    res = orch.run_improvement_study(plan, modes=orch.MODES, out=out)
    assert len(res.rows) == 2 * 2
    assert {r.mode for r in res.rows} == set(orch.MODES)
    for r in res.rows:
        assert r.rmse_ord > 0 and r.rmse_abn > 0
        assert r.rel_improvement == pytest.approx((r.rmse_ord - r.rmse_abn) / r.rmse_ord)
        d = out / r.scenario_id / r.mode
        for name in ("speeds.csv", "dataset.csv", "model.json", "metrics.csv"):
            assert (d / name).exists()
    summ = json.loads((out / "summary.json").read_text())
    assert set(summ) == set(orch.MODES)
    assert (out / "summary.csv").read_text().startswith("scenario_id,mode,rmse_ord")
    # a fresh cache and two workers give the same table
    again = orch.run_improvement_study(
        small_plan(tmp_path, whatif_budget=27, scenarios=("H-C-M", "M-S-R"),
                   cache_dir=str(tmp_path / "other"), workers=2), modes=orch.MODES)
    assert again.rows == res.rows


def test_single_mode_summary(tmp_path):
    plan = small_plan(tmp_path, scenarios=("H-C-LM",))
    orch.run_improvement_study(plan, out=tmp_path / "imp")
    summ = json.loads((tmp_path / "imp" / "summary.json").read_text())
    assert summ["mode"] == "known_lanes"
    assert "mean_relative_improvement" in summ


def test_degradation_study(tmp_path):
    plan = small_plan(tmp_path, n_ordinary_sims=30)
    rows = orch.run_degradation_study(plan, out=tmp_path / "deg")
    conds = {(r.features, r.condition) for r in rows}
    for f in ("with_ud", "without_ud"):
        assert {(f, "normal_cv"), (f, "incident"), (f, "incident_early")} <= conds
    assert all(r.n > 0 and r.rmse >= r.mae >= abs(r.msd) for r in rows)
    assert (tmp_path / "deg" / "timeseries.csv").exists()


def test_degradation_needs_enough_sims(tmp_path):
    with pytest.raises(ValueError):
        orch.run_degradation_study(small_plan(tmp_path))


def test_transfer_study_shape(tmp_path):
    plan = small_plan(tmp_path, whatif_budget=27, scenarios=("H-C-L",))
    rows = orch.run_transfer_study(plan, j_max=3, repeats=2, modes=orch.MODES,
                                   out=tmp_path / "tr")
    assert len(rows) == 1 * 3 * 2 * 2
    assert {r.model for r in rows} == {"fresh", "bayes"}
    assert all(r.std_rmse >= 0 and r.mean_rmse > 0 for r in rows)
    again = orch.run_transfer_study(plan, j_max=3, repeats=2, modes=orch.MODES)
    assert again == rows
    with pytest.raises(ValueError):
        orch.run_transfer_study(plan, j_max=28)


def test_cache_round_trip(tmp_path):
    plan = small_plan(tmp_path)
    jobs = orch._ordinary_jobs(plan)[:2]
    first = orch.simulate(plan, jobs)
    assert len(list((tmp_path / "cache").glob("*.csv"))) == 2
    assert orch.simulate(plan, jobs) == first

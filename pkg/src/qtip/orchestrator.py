"""Experiment pipeline: ordinary-model training, incident adaptation and the
three studies (degradation, improvement, transfer).

Seeds
-----
Every simulation gets its seeds from :func:`derive_seed`, which feeds
``(master_seed, purpose, *indices)`` into :class:`numpy.random.SeedSequence`
(``entropy=master_seed``, ``spawn_key=(purpose_id, *indices)``) and takes the
first 63 bits of the generated state. Purposes are numbered
``ordinary=0, ground_truth=1, whatif=2, repeats=3, folds=4``. Scenario- and
signal-level indices are CRC-32 checksums of their string identifiers, so a
scenario's draws do not depend on which other scenarios are in a run. Each
simulation job draws two seeds, index ``0`` for the OD perturbation and
index ``1`` for the simulator itself.
"""
from __future__ import annotations

import csv
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import metrics
from .corridor import (
    CorridorConfig,
    DemandLevel,
    DistressSignal,
    IncidentScenario,
    ODMatrix,
    consistent_scenarios,
    enumerate_scenarios,
    perturb_od,
    scenario_from_id,
)
from .features import RegressionDataset, extract, pool
from .microsim import SimConfig, SpeedSeries, default_workers, run_batch
from .models import (
    BayesianLinearModel,
    LinearModel,
    PiecewiseAbnormalModel,
    fit,
    fit_bayes,
    fit_ols,
    save,
)

__all__ = [
    "MODES", "ADAPT_MODES", "ExperimentPlan", "derive_seed", "allocate_budget", "SimCache",
    "simulate", "ordinary_series", "train_ordinary", "ground_truth", "whatif_runs", "adapt",
    "ImprovementRow", "ExperimentResult", "run_improvement_study", "DegradationRow",
    "run_degradation_study", "TransferRow", "run_transfer_study", "write_rows",
]

MODES = ("known_lanes", "unknown_lanes")
ADAPT_MODES = ("fresh", "bayes")
_PURPOSES = {"ordinary": 0, "ground_truth": 1, "whatif": 2, "repeats": 3, "folds": 4}
#: Bumped whenever simulator output for a given job changes.
CACHE_VERSION = 5


def derive_seed(master: int, purpose: str, *indices: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(_PURPOSES[purpose], *map(int, indices)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _crc(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def allocate_budget(n_templates: int, budget: int) -> list[int]:
    """Round-robin split of ``budget`` runs; the remainder goes to the first templates."""
    if n_templates <= 0:
        raise ValueError("no templates")
    if budget < n_templates:
        raise ValueError(
            f"budget {budget} is smaller than the {n_templates} consistent templates; "
            f"use a budget of at least {n_templates}"
        )
    q, r = divmod(budget, n_templates)
    return [q + (i < r) for i in range(n_templates)]


@dataclass(frozen=True)
class ExperimentPlan:
    """Sizes, seeds and execution settings shared by every study."""

    n_ordinary_sims: int = 150
    n_ground_truth: int = 5
    whatif_budget: int = 100
    mode: str = "known_lanes"
    master_seed: int = 0
    model_kind: str = "lr"
    config: CorridorConfig = field(default_factory=CorridorConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    workers: int | None = None
    cache_dir: str | None = None
    #: Scenario ids to study; ``None`` means the full 81-scenario grid.
    scenarios: tuple[str, ...] | None = None
    #: What-if runs stop at clearance; nothing after it is used.
    whatif_until_clearance: bool = True

    def __post_init__(self):
        if min(self.n_ordinary_sims, self.n_ground_truth) <= 0 or self.whatif_budget < 0:
            raise ValueError("simulation counts must be positive")
        if self.n_ordinary_sims % len(DemandLevel):
            raise ValueError("ordinary simulations must split equally over the 3 demand levels")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.model_kind not in ("lr", "gp", "mlp"):
            raise ValueError("model_kind must be lr, gp or mlp")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.scenarios is not None:
            object.__setattr__(self, "scenarios", tuple(self.scenarios))

    @property
    def known_lanes(self) -> bool:
        return self.mode == "known_lanes"

    def sim_config(self) -> SimConfig:
        h0, h1 = self.config.horizon
        return replace(self.sim, clock_start=h0, clock_end=h1)

    def scenario_list(self) -> list[IncidentScenario]:
        window = self.config.incident_window
        if self.scenarios is None:
            return enumerate_scenarios(window)
        return [scenario_from_id(s, window) for s in self.scenarios]


# --------------------------------------------------------------------------
# simulation with an on-disk cache


@dataclass(frozen=True)
class _Job:
    od: ODMatrix
    incident: IncidentScenario | None
    seed: int
    cfg: SimConfig


class SimCache:
    """Speed series keyed by a hash of everything that determines them."""

    def __init__(self, root: str | Path | None):
        self.root = None if root is None else Path(root)
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(corridor_cfg: CorridorConfig, job: _Job) -> str:
        cfg = {f.name: getattr(job.cfg, f.name) for f in fields(job.cfg) if f.name != "trace_path"}
        cfg["seed"] = job.seed
        doc = {
            "v": CACHE_VERSION,
            "corridor": corridor_cfg.to_dict()["links"],
            "lanes": corridor_cfg.corridor.lanes_per_link,
            "od": [repr(float(e)) for e in np.ravel(job.od.entries)],
            "incident": None if job.incident is None else job.incident.to_dict(),
            "cfg": cfg,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()

    def get(self, key: str) -> SpeedSeries | None:
        if self.root is None:
            return None
        p = self.root / f"{key}.csv"
        return SpeedSeries.from_csv(p) if p.exists() else None

    def put(self, key: str, series: SpeedSeries) -> None:
        if self.root is None:
            return
        tmp = self.root / f".{key}.tmp"
        series.to_csv(tmp)
        tmp.replace(self.root / f"{key}.csv")


def simulate(plan: ExperimentPlan, jobs: Sequence[_Job]) -> list[SpeedSeries]:
    """Run jobs (in parallel where possible), reusing cached results."""
    cache = SimCache(plan.cache_dir)
    keys = [cache.key(plan.config, j) for j in jobs]
    out: list[SpeedSeries | None] = [cache.get(k) for k in keys]
    todo = [i for i, s in enumerate(out) if s is None]
    by_cfg: dict[SimConfig, list[int]] = {}
    for i in todo:
        by_cfg.setdefault(jobs[i].cfg, []).append(i)
    workers = plan.workers if plan.workers is not None else default_workers()
    # chunks keep the cache filling up during long batches, so interrupted studies resume
    chunk = max(16, 8 * workers)
    for cfg, all_idx in by_cfg.items():
        for c in range(0, len(all_idx), chunk):
            idx = all_idx[c:c + chunk]
            res = run_batch(plan.config.corridor,
                            [(jobs[i].od, jobs[i].incident, jobs[i].seed) for i in idx],
                            cfg, workers)
            for i, s in zip(idx, res):
                cache.put(keys[i], s)
                out[i] = s
    return out  # type: ignore[return-value]


def _job(plan, purpose, idx, demand, incident, cfg=None) -> _Job:
    od = perturb_od(plan.config.od, demand, derive_seed(plan.master_seed, purpose, *idx, 0))
    return _Job(od, incident, derive_seed(plan.master_seed, purpose, *idx, 1),
                cfg or plan.sim_config())


# --------------------------------------------------------------------------
# ordinary model


def _ordinary_jobs(plan):
    per = plan.n_ordinary_sims // len(DemandLevel)
    return [_job(plan, "ordinary", (d_i, i), d, None)
            for d_i, d in enumerate(DemandLevel) for i in range(per)]


def ordinary_series(plan: ExperimentPlan) -> list[SpeedSeries]:
    """Incident-free runs, equally many per demand level."""
    return simulate(plan, _ordinary_jobs(plan))


def _ordinary_data(plan) -> list[RegressionDataset]:
    return [extract(s)["normal"] for s in ordinary_series(plan)]


def train_ordinary(plan: ExperimentPlan, model_kind: str | None = None):
    """Fit the incident-free model on pooled normal-phase rows."""
    data = pool(_ordinary_data(plan))
    return fit(model_kind or plan.model_kind, data, seed=derive_seed(plan.master_seed, "folds", 99))


# --------------------------------------------------------------------------
# ground truth and what-if runs


def ground_truth(plan: ExperimentPlan, scenarios: Sequence[IncidentScenario]
                 ) -> dict[str, list[SpeedSeries]]:
    jobs = [_job(plan, "ground_truth", (_crc(s.scenario_id), r), s.demand, s)
            for s in scenarios for r in range(plan.n_ground_truth)]
    res = simulate(plan, jobs)
    g = plan.n_ground_truth
    return {s.scenario_id: res[i * g:(i + 1) * g] for i, s in enumerate(scenarios)}


def _whatif_jobs(plan, sig, budget):
    templates = consistent_scenarios(sig, plan.known_lanes,
                                     plan.config.incident_window[1] - plan.config.incident_window[0])
    counts = allocate_budget(len(templates), budget) if budget else [0] * len(templates)
    sig_idx = _crc(f"{plan.mode}:{sig.key}")
    jobs, tpl = [], []
    for t_i, (t, c) in enumerate(zip(templates, counts)):
        cfg = plan.sim_config()
        if plan.whatif_until_clearance:
            cfg = replace(cfg, clock_end=t.end_time)
        for r in range(c):
            jobs.append(_job(plan, "whatif", (sig_idx, t_i, r), t.demand, t, cfg))
            tpl.append(t)
    return jobs, tpl


def whatif_runs(plan: ExperimentPlan, sig: DistressSignal, budget: int | None = None
                ) -> list[tuple[IncidentScenario, SpeedSeries]]:
    """The what-if simulations for a signal, with the template behind each."""
    budget = plan.whatif_budget if budget is None else budget
    jobs, tpl = _whatif_jobs(plan, sig, budget)
    return list(zip(tpl, simulate(plan, jobs)))


def _incident_pieces(runs, with_T: bool):
    early, late = [], []
    for t, s in runs:
        d = extract(s, t, with_T=with_T)
        if "incident_early" in d:
            early.append(d["incident_early"])
        if "incident_late" in d:
            late.append(d["incident_late"])
    return early, late


def _fit_pieces(m_ord, runs, mode, kind="lr", seed=0, min_norm=False,
                sigma_beta=1.0, sigma_y=1.0) -> PiecewiseAbnormalModel:
    if mode == "bayes":
        if not isinstance(m_ord, (LinearModel, BayesianLinearModel)):
            raise TypeError("Bayesian adaptation needs a linear ordinary model")
        early, late = _incident_pieces(runs, with_T=False)
        prior = m_ord.beta
        pieces = [fit_bayes(pool(p) if p else None, prior, sigma_beta, sigma_y)
                  for p in (early, late)]
        return PiecewiseAbnormalModel(*pieces)
    if mode != "fresh":
        raise ValueError(f"adapt mode must be one of {ADAPT_MODES}")
    early, late = _incident_pieces(runs, with_T=True)
    if not early or not late:
        raise ValueError("what-if runs produced no incident rows")
    if kind == "lr":
        pieces = [fit_ols(pool(p), min_norm=min_norm) for p in (early, late)]
    else:
        pieces = [fit(kind, pool(p), seed=seed) for p in (early, late)]
    return PiecewiseAbnormalModel(*pieces)


def adapt(m_ord, sig: DistressSignal, plan: ExperimentPlan, mode: str = "fresh",
          budget: int | None = None) -> PiecewiseAbnormalModel:
    """Build the incident model from what-if runs consistent with ``sig``.

    ``fresh`` fits each piece from scratch on seven features (with
    ``T_accident``) using ``plan.model_kind``; ``bayes`` updates the ordinary
    linear model's coefficients on six features. A zero budget is only
    meaningful for ``bayes`` and returns the prior.
    """
    if mode not in ADAPT_MODES:
        raise ValueError(f"adapt mode must be one of {ADAPT_MODES}")
    budget = plan.whatif_budget if budget is None else budget
    if budget == 0 and mode == "fresh":
        raise ValueError("fresh adaptation needs a positive budget")
    runs = whatif_runs(plan, sig, budget)
    return _fit_pieces(m_ord, runs, mode, plan.model_kind,
                       seed=derive_seed(plan.master_seed, "whatif", _crc(sig.key), 10**6))


# --------------------------------------------------------------------------
# scoring helpers


def _early(series: SpeedSeries, scn: IncidentScenario) -> RegressionDataset:
    return extract(series, scn, with_T=True)["incident_early"]


def _rmse_pair(m_ord, m_abn, data: RegressionDataset):
    r_ord = metrics.residuals(m_ord.predict(data.X[:, :6]), data.y)
    r_abn = metrics.residuals(m_abn.predict(data.X), data.y)
    return r_ord, r_abn


def write_rows(rows: Iterable, path: str | Path) -> None:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])))
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")


# --------------------------------------------------------------------------
# improvement study


@dataclass(frozen=True)
class ImprovementRow:
    scenario_id: str
    mode: str
    rmse_ord: float
    rmse_abn: float
    rel_improvement: float
    msd_ord: float
    msd_abn: float
    rmse_ord_avg_series: float
    rmse_abn_avg_series: float
    rel_improvement_avg_series: float


@dataclass(frozen=True)
class ExperimentResult:
    rows: tuple[ImprovementRow, ...]

    def for_mode(self, mode: str) -> list[ImprovementRow]:
        return [r for r in self.rows if r.mode == mode]

    def summary(self) -> dict:
        out = {}
        for mode in MODES:
            rows = self.for_mode(mode)
            if not rows:
                continue
            out[mode] = {
                "n_scenarios": len(rows),
                "mean_relative_improvement": float(np.mean([r.rel_improvement for r in rows])),
                "median_relative_improvement": float(np.median([r.rel_improvement for r in rows])),
                "mean_rmse_ord": float(np.mean([r.rmse_ord for r in rows])),
                "mean_rmse_abn": float(np.mean([r.rmse_abn for r in rows])),
                "mean_relative_improvement_avg_series": float(
                    np.mean([r.rel_improvement_avg_series for r in rows])),
                "share_improved": float(np.mean([r.rel_improvement > 0 for r in rows])),
            }
        return out


def run_improvement_study(plan: ExperimentPlan, modes: Sequence[str] | None = None,
                          adapt_mode: str = "fresh", out: str | Path | None = None,
                          m_ord=None) -> ExperimentResult:
    """Score the ordinary and adapted models on the first six incident minutes.

    Per scenario, each ground-truth replication is scored separately and the
    RMSEs averaged; the same is also reported for the averaged series.
    """
    modes = tuple(modes) if modes is not None else (plan.mode,)
    scenarios = plan.scenario_list()
    m_ord = m_ord if m_ord is not None else train_ordinary(plan)
    gts = ground_truth(plan, scenarios)
    rows = []
    for mode in modes:
        p = replace(plan, mode=mode)
        signals = {}
        for s in scenarios:
            sig = DistressSignal.from_scenario(s, p.known_lanes)
            signals.setdefault(sig.key, sig)
        # gather all what-if jobs first so they share one worker pool
        all_jobs = {k: _whatif_jobs(p, sig, p.whatif_budget) for k, sig in signals.items()}
        flat = [j for jobs, _ in all_jobs.values() for j in jobs]
        simulate(p, flat)
        models = {k: adapt(m_ord, sig, p, adapt_mode) for k, sig in signals.items()}
        for s in scenarios:
            sig_key = DistressSignal.from_scenario(s, p.known_lanes).key
            m_abn = models[sig_key]
            per = [_rmse_pair(m_ord, m_abn, _early(g, s)) for g in gts[s.scenario_id]]
            ro = float(np.mean([metrics.rmse(a) for a, _ in per]))
            ra = float(np.mean([metrics.rmse(b) for _, b in per]))
            avg = SpeedSeries.mean(gts[s.scenario_id])
            a_ord, a_abn = _rmse_pair(m_ord, m_abn, _early(avg, s))
            ao, aa = metrics.rmse(a_ord), metrics.rmse(a_abn)
            row = ImprovementRow(
                s.scenario_id, mode, ro, ra, metrics.relative_improvement(ro, ra),
                float(np.mean([metrics.msd(a) for a, _ in per])),
                float(np.mean([metrics.msd(b) for _, b in per])),
                ao, aa, metrics.relative_improvement(ao, aa),
            )
            rows.append(row)
            if out is not None:
                d = Path(out) / s.scenario_id / mode
                d.mkdir(parents=True, exist_ok=True)
                avg.to_csv(d / "speeds.csv")
                pool([_early(g, s) for g in gts[s.scenario_id]]).to_csv(d / "dataset.csv")
                save(m_abn, d / "model.json")
                r_ord = np.concatenate([a for a, _ in per])
                r_abn = np.concatenate([b for _, b in per])
                metrics.write_report([
                    metrics.MetricRow.from_residuals(r_ord, s.scenario_id, mode, "ordinary",
                                                     "incident_early"),
                    metrics.MetricRow.from_residuals(r_abn, s.scenario_id, mode, "abnormal",
                                                     "incident_early", row.rel_improvement),
                ], d / "metrics.csv")
    result = ExperimentResult(tuple(rows))
    if out is not None:
        write_rows(rows, Path(out) / "summary.csv")
        summ = result.summary()
        if len(summ) == 1:
            summ = {**next(iter(summ.values())), "mode": next(iter(summ))}
        _write_json(summ, Path(out) / "summary.json")
    return result


# --------------------------------------------------------------------------
# degradation study


@dataclass(frozen=True)
class DegradationRow:
    features: str
    condition: str
    n: int
    msd: float
    mae: float
    rmse: float


def _fit_cols(data: RegressionDataset, cols):
    return fit_ols(data.X[:, cols], y=data.y)


def run_degradation_study(plan: ExperimentPlan, n_folds: int = 10,
                          out: str | Path | None = None) -> list[DegradationRow]:
    """Ordinary linear model under normal (cross-validated) vs incident conditions.

    Folds are formed from whole simulations so no run contributes to both
    training and test rows.
    """
    per_sim = _ordinary_data(plan)
    n = len(per_sim)
    if n < n_folds:
        raise ValueError("fewer ordinary simulations than folds")
    rng = np.random.default_rng(derive_seed(plan.master_seed, "folds", 0))
    fold = np.empty(n, dtype=int)
    fold[rng.permutation(n)] = np.arange(n) % n_folds
    scenarios = plan.scenario_list()
    gts = ground_truth(plan, scenarios)
    inc = {"incident_early": [], "incident_late": []}
    for s in scenarios:
        for g in gts[s.scenario_id]:
            d = extract(g, s)
            for ph in inc:
                if ph in d:
                    inc[ph].append(d[ph])
    full = pool(per_sim)
    rows = []
    per_sim_models = {}
    for name, cols in (("with_ud", list(range(6))), ("without_ud", [0, 1])):
        res = []
        for f in range(n_folds):
            train = pool([d for d, k in zip(per_sim, fold) if k != f])
            test = pool([d for d, k in zip(per_sim, fold) if k == f])
            m = _fit_cols(train, cols)
            res.append(metrics.residuals(m.predict(test.X[:, cols]), test.y))
        r = np.concatenate(res)
        rows.append(DegradationRow(name, "normal_cv", r.size, metrics.msd(r), metrics.mae(r),
                                   metrics.rmse(r)))
        m = _fit_cols(full, cols)
        per_sim_models[name] = (m, cols)
        both = []
        for ph, ds in inc.items():
            if not ds:
                continue
            d = pool(ds)
            r = metrics.residuals(m.predict(d.X[:, cols]), d.y)
            both.append(r)
            rows.append(DegradationRow(name, ph, r.size, metrics.msd(r), metrics.mae(r),
                                       metrics.rmse(r)))
        r = np.concatenate(both)
        rows.append(DegradationRow(name, "incident", r.size, metrics.msd(r), metrics.mae(r),
                                   metrics.rmse(r)))
    if out is not None:
        write_rows(rows, Path(out) / "summary.csv")
        _write_json([asdict(r) for r in rows], Path(out) / "summary.json")
        _write_average_incident(per_sim_models, scenarios, gts, Path(out) / "timeseries.csv")
    return rows


def _write_average_incident(ms, scenarios, gts, path: Path) -> None:
    """Ordinary-model predictions on the ground-truth series averaged over all runs."""
    runs = [g for s in scenarios for g in gts[s.scenario_id]]
    avg = SpeedSeries.mean(runs)
    onset = scenarios[0].start_time
    data = extract(avg)["normal"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "t_accident", "S", *(f"pred_{k}" for k in ms)])
        preds = {k: m.predict(data.X[:, cols]) for k, (m, cols) in ms.items()}
        for i, minute in enumerate(data.minutes):
            w.writerow([int(minute), int(minute) - onset, repr(float(data.y[i])),
                        *(repr(float(preds[k][i])) for k in ms)])


# --------------------------------------------------------------------------
# transfer study


@dataclass(frozen=True)
class TransferRow:
    scenario_id: str
    mode: str
    j: int
    model: str
    mean_rmse: float
    std_rmse: float
    ordinary_rmse: float


def run_transfer_study(plan: ExperimentPlan, j_max: int = 10, repeats: int = 30,
                       modes: Sequence[str] | None = None, out: str | Path | None = None,
                       m_ord=None) -> list[TransferRow]:
    """Fresh vs Bayesian incident models trained on only ``j`` what-if runs.

    Each repeat draws ``j_max`` runs without replacement from the signal's
    what-if pool and uses the first ``j`` of them, so training sets are
    nested in ``j``. RMSE is over the first six incident minutes of every
    ground-truth replication.
    """
    modes = tuple(modes) if modes is not None else (plan.mode,)
    if not 1 <= j_max <= plan.whatif_budget:
        raise ValueError("j_max must be between 1 and the what-if budget")
    scenarios = plan.scenario_list()
    m_ord = m_ord if m_ord is not None else train_ordinary(plan, "lr")
    gts = ground_truth(plan, scenarios)
    rows = []
    for mode_i, mode in enumerate(modes):
        p = replace(plan, mode=mode)
        sigs = {s.scenario_id: DistressSignal.from_scenario(s, p.known_lanes) for s in scenarios}
        uniq = {sig.key: sig for sig in sigs.values()}
        simulate(p, [j for sig in uniq.values() for j in _whatif_jobs(p, sig, p.whatif_budget)[0]])
        pools = {k: whatif_runs(p, sig) for k, sig in uniq.items()}
        for s in scenarios:
            runs = pools[sigs[s.scenario_id].key]
            tests = [_early(g, s) for g in gts[s.scenario_id]]
            ord_rmse = float(np.mean([metrics.rmse(metrics.residuals(m_ord.predict(t.X[:, :6]), t.y))
                                      for t in tests]))
            scores = {(j, m): [] for j in range(1, j_max + 1) for m in ADAPT_MODES}
            for r in range(repeats):
                rng = np.random.default_rng(
                    derive_seed(plan.master_seed, "repeats", _crc(s.scenario_id), mode_i, r))
                pick = rng.choice(len(runs), size=j_max, replace=False)
                for j in range(1, j_max + 1):
                    sub = [runs[i] for i in pick[:j]]
                    for m in ADAPT_MODES:
                        model = _fit_pieces(m_ord, sub, m, min_norm=True)
                        scores[(j, m)].append(np.mean(
                            [metrics.rmse(metrics.residuals(model.predict(t.X), t.y))
                             for t in tests]))
            for (j, m), v in scores.items():
                rows.append(TransferRow(s.scenario_id, mode, j, m, float(np.mean(v)),
                                        float(np.std(v)), ord_rmse))
    rows.sort(key=lambda r: (r.mode, r.scenario_id, r.j, r.model))
    if out is not None:
        write_rows(rows, Path(out) / "summary.csv")
        _write_json([asdict(r) for r in rows], Path(out) / "summary.json")
    return rows

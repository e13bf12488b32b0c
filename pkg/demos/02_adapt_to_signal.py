"""Train the incident-free model, adapt it to one distress signal, compare both.

A small plan keeps this under a couple of minutes on one core.
Run: python demos/02_adapt_to_signal.py
"""
from dataclasses import replace

import numpy as np

from qtip import metrics
from qtip.corridor import DistressSignal, scenario_from_id
from qtip.features import extract
from qtip.orchestrator import ExperimentPlan, adapt, ground_truth, train_ordinary

plan = ExperimentPlan(n_ordinary_sims=30, n_ground_truth=3, whatif_budget=27,
                      scenarios=("H-C-L",))
truth = scenario_from_id("H-C-L")

m_ord = train_ordinary(plan)
print("ordinary coefficients [S5 S6 U5 U6 D5 D6]:", np.round(m_ord.beta, 3))

for known in (True, False):
    sig = DistressSignal.from_scenario(truth, known_lanes=known)
    mode = "known_lanes" if known else "unknown_lanes"
    m_abn = adapt(m_ord, sig, replace(plan, mode=mode))
    r_ord, r_abn = [], []
    for g in ground_truth(plan, [truth])[truth.scenario_id]:
        early = extract(g, truth, with_T=True)["incident_early"]
        r_ord.append(m_ord.predict(early.X[:, :6]) - early.y)
        r_abn.append(m_abn.predict(early.X) - early.y)
    ro, ra = metrics.rmse(np.concatenate(r_ord)), metrics.rmse(np.concatenate(r_abn))
    label = "lanes known  " if known else "lanes unknown"
    print(f"{label}: RMSE ordinary {ro:6.2f}  adapted {ra:6.2f}  "
          f"improvement {metrics.relative_improvement(ro, ra):+.1%}")

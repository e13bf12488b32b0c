"""How many what-if runs does the adapted model need?

Compares a fresh fit with a Bayesian update of the ordinary coefficients
as the number of training simulations j grows, on two scenarios.
Run: python demos/03_transfer_learning.py
"""
from collections import defaultdict

from qtip.orchestrator import ExperimentPlan, run_transfer_study

plan = ExperimentPlan(n_ordinary_sims=30, n_ground_truth=3, whatif_budget=27,
                      scenarios=("M-S-L", "H-C-R"))
rows = run_transfer_study(plan, j_max=6, repeats=5)

table = defaultdict(dict)
for r in rows:
    table[(r.scenario_id, r.j)][r.model] = r.mean_rmse
print("scenario  j   fresh   bayes")
for (sid, j), v in sorted(table.items()):
    print(f"{sid:8s} {j:2d}  {v['fresh']:6.2f}  {v['bayes']:6.2f}")

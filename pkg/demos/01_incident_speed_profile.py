"""Simulate one morning with a two-lane block and print the study-link speeds.

Run: python demos/01_incident_speed_profile.py [SCENARIO_ID]
"""
import sys

from qtip.corridor import format_clock, load_config, perturb_od, scenario_from_id
from qtip.microsim import SimConfig, run
from qtip.orchestrator import derive_seed

scenario_id = sys.argv[1] if len(sys.argv) > 1 else "H-C-LM"
cfg = load_config()
incident = scenario_from_id(scenario_id, cfg.incident_window)
od = perturb_od(cfg.od, incident.demand, derive_seed(0, "ground_truth", 0))
series = run(cfg.corridor, od, incident,
             SimConfig(clock_start=cfg.horizon[0], clock_end=cfg.horizon[1], seed=1))

print(f"{scenario_id}: blocks from {format_clock(incident.start_time)} "
      f"to {format_clock(incident.end_time)}")
print(" clock     U      S      D")
for m, u, s, d in zip(series.minutes, series.U, series.S, series.D):
    mark = " *" if incident.start_time <= m < incident.end_time else ""
    print(f"{format_clock(int(m))}  {u:5.1f}  {s:5.1f}  {d:5.1f}{mark}")

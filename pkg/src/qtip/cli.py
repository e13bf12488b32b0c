"""Command-line entry point (``qtip``)."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import orchestrator as orch
from .corridor import (
    DemandLevel,
    DistressSignal,
    enumerate_scenarios,
    format_clock,
    load_config,
    perturb_od,
    scenario_from_id,
)
from .features import extract
from .microsim import SimConfig, SpeedSeries, run
from .models import load, save

__all__ = ["main", "build_parser"]

_MODEL_KIND = {"ols": "lr", "gp": "gp", "mlp": "mlp", "bayes": "lr"}


def _add_common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", help="corridor config JSON (defaults are built in)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (QTIP_WORKERS overrides)")


def _add_plan(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=sorted(_MODEL_KIND), default="ols")
    p.add_argument("--budget", type=int, default=100, help="what-if simulations per adaptation")
    p.add_argument("--n-ordinary", type=int, default=150)
    p.add_argument("--n-ground-truth", type=int, default=5)
    p.add_argument("--scenarios", help="comma-separated scenario ids (default: all 81)")
    p.add_argument("--cache", help="directory for cached simulation output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qtip", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation and write speeds.csv")
    _add_common(p, "out")
    p.add_argument("--demand", choices=[d.name.lower() for d in DemandLevel], default="medium")
    p.add_argument("--scenario", help="incident scenario id such as H-C-LM (default: none)")
    p.add_argument("--no-perturb", action="store_true", help="use the demand-scaled OD as is")
    p.add_argument("--trace", action="store_true", help="also write a per-vehicle trace.csv")

    p = sub.add_parser("enumerate", help="list the incident scenarios as CSV")
    p.add_argument("--config")
    p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("train-ordinary", help="fit the incident-free model")
    _add_common(p, "out")
    _add_plan(p)

    p = sub.add_parser("adapt", help="build an incident model from a distress signal")
    _add_common(p, "out")
    _add_plan(p)
    p.add_argument("signal", help="distress-signal JSON file")
    p.add_argument("--ordinary", help="ordinary model JSON (default: OUT/ordinary.json)")
    p.add_argument("--mode", choices=orch.MODES, default=None,
                   help="default: known_lanes if the signal names lanes")

    p = sub.add_parser("study", help="run one of the experiments")
    p.add_argument("study", choices=["degradation", "improvement", "transfer"])
    _add_common(p, "results")
    _add_plan(p)
    p.add_argument("--mode", choices=orch.MODES, default=None, help="default: both modes")
    p.add_argument("--j-max", type=int, default=10)
    p.add_argument("--repeats", type=int, default=30)

    p = sub.add_parser("report", help="turn study results into plot-ready CSVs")
    p.add_argument("--results", default="results", help="results root written by `study`")
    p.add_argument("--out", default=None, help="default: RESULTS/figures")
    return ap


def _workers(args) -> int | None:
    env = os.environ.get("QTIP_WORKERS")
    w = int(env) if env else args.workers
    if w is not None and w < 1:
        raise ValueError("worker count must be at least 1")
    return w


def _plan(args, mode: str | None = None) -> orch.ExperimentPlan:
    cfg = load_config(args.config) if args.config else load_config()
    return orch.ExperimentPlan(
        n_ordinary_sims=args.n_ordinary,
        n_ground_truth=args.n_ground_truth,
        whatif_budget=args.budget,
        mode=mode or "known_lanes",
        master_seed=args.seed,
        model_kind=_MODEL_KIND[args.model],
        config=cfg,
        workers=_workers(args),
        cache_dir=args.cache,
        scenarios=tuple(s.strip() for s in args.scenarios.split(",")) if args.scenarios else None,
    )


def _cmd_simulate(args) -> None:
    cfg = load_config(args.config) if args.config else load_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    demand = DemandLevel.parse(args.demand)
    incident = scenario_from_id(args.scenario, cfg.incident_window) if args.scenario else None
    if incident is not None:
        demand = incident.demand
    if args.no_perturb:
        od = type(cfg.od)(cfg.od.entries * demand.scale)
    else:
        od = perturb_od(cfg.od, demand, orch.derive_seed(args.seed, "ordinary", 0))
    sim = SimConfig(clock_start=cfg.horizon[0], clock_end=cfg.horizon[1], seed=args.seed,
                    trace_path=str(out / "trace.csv") if args.trace else None)
    run(cfg.corridor, od, incident, sim).to_csv(out / "speeds.csv")
    print(out / "speeds.csv")


def _cmd_enumerate(args) -> None:
    cfg = load_config(args.config) if args.config else load_config()
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "demand", "position", "blocks", "start", "end"])
        for s in enumerate_scenarios(cfg.incident_window):
            w.writerow([s.scenario_id, s.demand.name.lower(), s.position.name.lower(),
                        "+".join(b.name.lower() for b in s.blocks),
                        format_clock(s.start_time), format_clock(s.end_time)])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _cmd_train(args) -> None:
    plan = _plan(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = orch.train_ordinary(plan)
    save(model, out / "ordinary.json")
    print(out / "ordinary.json")


def _cmd_adapt(args) -> None:
    sig = DistressSignal.from_dict(json.loads(Path(args.signal).read_text(encoding="utf-8")))
    mode = args.mode or ("known_lanes" if sig.lanes is not None else "unknown_lanes")
    plan = _plan(args, mode)
    out = Path(args.out)
    ord_path = Path(args.ordinary) if args.ordinary else out / "ordinary.json"
    if not ord_path.exists():
        raise FileNotFoundError(f"{ord_path} not found; run `qtip train-ordinary` first")
    m_ord = load(ord_path)
    m_abn = orch.adapt(m_ord, sig, plan, "bayes" if args.model == "bayes" else "fresh")
    out.mkdir(parents=True, exist_ok=True)
    save(m_abn, out / "abnormal.json")
    print(out / "abnormal.json")


def _cmd_study(args) -> None:
    modes = (args.mode,) if args.mode else orch.MODES
    plan = _plan(args, modes[0])
    out = Path(args.out) / args.study
    out.mkdir(parents=True, exist_ok=True)
    if args.study == "degradation":
        rows = orch.run_degradation_study(plan, out=out)
        for r in rows:
            print(f"{r.features:10s} {r.condition:15s} msd={r.msd:7.3f} mae={r.mae:7.3f} "
                  f"rmse={r.rmse:7.3f}")
    elif args.study == "improvement":
        res = orch.run_improvement_study(
            plan, modes=modes, adapt_mode="bayes" if args.model == "bayes" else "fresh", out=out)
        print(json.dumps(res.summary(), indent=2))
    else:
        rows = orch.run_transfer_study(plan, j_max=args.j_max, repeats=args.repeats,
                                       modes=modes, out=out)
        print(f"{len(rows)} rows written to {out / 'summary.csv'}")
    (out / "plan.json").write_text(json.dumps(
        {"seed": args.seed, "modes": list(modes), "model": args.model, "budget": args.budget,
         "n_ordinary": args.n_ordinary, "n_ground_truth": args.n_ground_truth,
         "scenarios": args.scenarios}, indent=2), encoding="utf-8")


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _cmd_report(args) -> None:
    root = Path(args.results)
    out = Path(args.out) if args.out else root / "figures"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    imp = root / "improvement"
    if (imp / "summary.csv").exists():
        rows = _read_csv(imp / "summary.csv")
        _write_csv(out / "fig11_improvement.csv",
                   ["scenario_id", "mode", "rmse_ordinary", "rmse_abnormal", "rel_improvement"],
                   [[r["scenario_id"], r["mode"], r["rmse_ord"], r["rmse_abn"],
                     r["rel_improvement"]] for r in rows])
        written.append("fig11_improvement.csv")
        series = []
        for r in rows:
            d = imp / r["scenario_id"] / r["mode"]
            if not (d / "speeds.csv").exists():
                continue
            s = SpeedSeries.from_csv(d / "speeds.csv")
            scn = scenario_from_id(r["scenario_id"])
            pred = {}
            if (d / "model.json").exists():
                m = load(d / "model.json")
                for ph, ds in extract(s, scn, with_T=True).items():
                    if ph == "normal":
                        continue
                    for minute, p in zip(ds.minutes, m.predict(ds.X)):
                        pred[int(minute)] = float(p)
            for minute, v in zip(s.minutes, s.S):
                series.append([r["scenario_id"], r["mode"], int(minute), format_clock(int(minute)),
                               repr(float(v)), repr(pred[int(minute)]) if int(minute) in pred else ""])
        if series:
            _write_csv(out / "fig08_scenarios.csv",
                       ["scenario_id", "mode", "minute", "clock", "S", "pred_abnormal"], series)
            written.append("fig08_scenarios.csv")
    deg = root / "degradation"
    if (deg / "summary.csv").exists():
        rows = _read_csv(deg / "summary.csv")
        _write_csv(out / "fig09_degradation.csv", list(rows[0]), [list(r.values()) for r in rows])
        written.append("fig09_degradation.csv")
        if (deg / "timeseries.csv").exists():
            rows = _read_csv(deg / "timeseries.csv")
            _write_csv(out / "fig10_average_incident.csv", list(rows[0]),
                       [list(r.values()) for r in rows])
            written.append("fig10_average_incident.csv")
    tr = root / "transfer"
    if (tr / "summary.csv").exists():
        rows = _read_csv(tr / "summary.csv")
        for mode, name in (("known_lanes", "fig12_transfer_known.csv"),
                           ("unknown_lanes", "fig13_transfer_unknown.csv")):
            sel = [r for r in rows if r["mode"] == mode]
            if sel:
                _write_csv(out / name, ["scenario_id", "j", "model", "mean_rmse", "std_rmse",
                                        "ordinary_rmse"],
                           [[r["scenario_id"], r["j"], r["model"], r["mean_rmse"], r["std_rmse"],
                             r["ordinary_rmse"]] for r in sel])
                written.append(name)
    if not written:
        raise FileNotFoundError(f"no study results under {root}; run `qtip study ...` first")
    for w in written:
        print(out / w)


_COMMANDS = {
    "simulate": _cmd_simulate,
    "enumerate": _cmd_enumerate,
    "train-ordinary": _cmd_train,
    "adapt": _cmd_adapt,
    "study": _cmd_study,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError, TypeError, OSError) as exc:
        print(f"qtip {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

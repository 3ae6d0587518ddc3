"""Command-line front end.

Exit codes: 0 success, 2 input/validation problem, 3 solver failure.
The thread count for the underlying linear algebra can be pinned with
the PEVPLAN_THREADS environment variable (set before heavy imports).
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path as FsPath

_threads = os.environ.get("PEVPLAN_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

import click

from .errors import PevPlanError, SolverError, ValidationError
from . import caseio, report
from .planner import evaluate_plan, solve_plan, sweep
from .simulate import ClassSpec, StationConfig, simulate_fifo, simulate_queue
from .sizing import ChargeClass, required_spots

EXIT_VALIDATION = 2
EXIT_SOLVER = 3


def _fail(exc: Exception) -> None:
    code = EXIT_SOLVER if isinstance(exc, SolverError) else EXIT_VALIDATION
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Plan and validate fast-charging station networks."""


@main.command("plan")
@click.argument("bundle", type=click.Path())
@click.option("--out", "-o", type=click.Path(), default="plan",
              help="Output directory for plan.json, table and figure.")
@click.option("--alpha", type=float, default=None, help="Service level.")
@click.option("--gap", type=float, default=None, help="Relative MIP gap.")
@click.option("--seed", type=int, default=None)
@click.option("--speed-kmh", type=float, default=None)
@click.option("--share/--no-share", "share", default=None,
              help="Share charge choices over common path prefixes.")
def cmd_plan(bundle, out, alpha, gap, seed, speed_kmh, share):
    """Site and size stations for a case bundle."""
    try:
        cb = caseio.load_bundle(bundle, alpha=alpha, seed=seed,
                                speed_kmh=speed_kmh, share_choices=share)
        rel_gap = gap if gap is not None else float(cb.options.get("gap", 0.005))
        plan = solve_plan(cb.inputs, rel_gap=rel_gap)
    except PevPlanError as exc:
        _fail(exc)
    outdir = FsPath(out)
    outdir.mkdir(parents=True, exist_ok=True)
    caseio.write_plan(plan, outdir / "plan.json")
    report.write_table([report.plan_row(FsPath(bundle).stem, plan)],
                       outdir / "plan_summary.csv")
    report.render_plan_map(plan, cb.inputs, outdir / "plan_map.png")
    click.echo(f"plan written to {outdir}/plan.json "
               f"({len(plan.built_nodes())} stations, "
               f"objective {plan.objective:.0f} $/yr, gap {plan.gap:.4f})")


@main.command("evaluate")
@click.argument("plan_file", type=click.Path())
@click.argument("bundle", type=click.Path())
@click.option("--out", "-o", type=click.Path(), default="evaluation.json")
@click.option("--alpha", type=float, default=None)
def cmd_evaluate(plan_file, bundle, out, alpha):
    """Re-solve operations with a frozen plan and report actual costs."""
    try:
        cb = caseio.load_bundle(bundle, alpha=alpha)
        plan = caseio.read_plan(plan_file)
        rep = evaluate_plan(plan, cb.inputs)
    except PevPlanError as exc:
        _fail(exc)
    payload = {
        "format_version": caseio.FORMAT_VERSION,
        "feasible": rep.feasible,
        "objective": rep.objective,
        "energy_cost": rep.energy_cost,
        "penalty_cost": rep.penalty_cost,
        "unsatisfied_ratio": rep.unsatisfied_ratio,
        "losses_kwh_per_day": rep.losses_kwh_per_day,
        "violations": rep.violations,
    }
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"evaluation written to {out} (feasible={rep.feasible})")
    if not rep.feasible:
        for v in rep.violations:
            click.echo(f"  violated: {v}", err=True)
        sys.exit(EXIT_SOLVER)


@main.command("simulate")
@click.option("--rate", "-l", "rates", type=float, multiple=True,
              required=True, help="Arrival rate per hour (repeatable).")
@click.option("--charge-hours", "-t", "hours", type=float, multiple=True,
              help="Charge duration per class; defaults to 1 h each.")
@click.option("--alpha", type=float, default=0.8)
@click.option("--spots", type=int, default=None,
              help="Override the service-level sizing.")
@click.option("--mode", type=click.Choice(["fifo", "queue"]), default="fifo")
@click.option("--horizon-hours", type=float, default=1000.0)
@click.option("--replications", type=int, default=20)
@click.option("--seed", type=int, default=0)
@click.option("--out", "-o", type=click.Path(), default="simulation.csv")
def cmd_simulate(rates, hours, alpha, spots, mode, horizon_hours,
                 replications, seed, out):
    """Monte Carlo check of a station sized for the requested service level."""
    try:
        if hours and len(hours) != len(rates):
            raise ValidationError("--charge-hours count must match --rate count")
        hours = hours or tuple(1.0 for _ in rates)
        classes = [ChargeClass(t, r) for t, r in zip(hours, rates)]
        y = spots if spots is not None else required_spots(classes, alpha).spots
        cfg = StationConfig(y, [ClassSpec(t, r) for t, r in zip(hours, rates)],
                            horizon_hours, seed, replications)
        rep = simulate_fifo(cfg) if mode == "fifo" else simulate_queue(cfg)
    except PevPlanError as exc:
        _fail(exc)
    label = f"y={y},alpha={alpha},lambda={'+'.join(str(r) for r in rates)}"
    rows = [report.sim_row(label, rep)]
    report.write_table(rows, out)
    fig = FsPath(out).with_suffix(".png")
    report.render_service_levels(rows, fig)
    click.echo(f"{label}: service level {rep.service_level:.4f} "
               f"(3-sigma {rep.half_width:.4f}), report {out}, figure {fig}")


@main.command("sweep")
@click.argument("bundle", type=click.Path())
@click.option("--out", "-o", type=click.Path(), default="sweep")
@click.option("--gap", type=float, default=None)
def cmd_sweep(bundle, out, gap):
    """Compare planning variants (sharing, traffic, homogeneous fleet)."""
    try:
        cb = caseio.load_bundle(bundle)
        rel_gap = gap if gap is not None else float(cb.options.get("gap", 0.005))
        rows = sweep(cb.inputs, rel_gap=rel_gap)
    except PevPlanError as exc:
        _fail(exc)
    outdir = FsPath(out)
    outdir.mkdir(parents=True, exist_ok=True)
    report.write_table(rows, outdir / "sweep.csv")
    click.echo(f"sweep table written to {outdir}/sweep.csv ({len(rows)} rows)")


@main.command("report")
@click.argument("inputs", nargs=-1, type=click.Path())
@click.option("--out", "-o", type=click.Path(), default="report")
def cmd_report(inputs, out):
    """Combine plan/evaluation JSON files into a comparison table + figure."""
    rows = []
    try:
        for item in inputs:
            p = FsPath(item)
            data = caseio._load_json(p)
            if "stations" in data:
                rows.append(report.plan_row(p.stem,
                                            caseio.plan_from_dict(data)))
            else:
                rows.append({"case": p.stem,
                             "objective_usd_per_year": data.get("objective"),
                             "energy_usd_per_year": data.get("energy_cost"),
                             "penalty_usd_per_year": data.get("penalty_cost"),
                             "unsatisfied_ratio": data.get("unsatisfied_ratio")})
    except PevPlanError as exc:
        _fail(exc)
    outdir = FsPath(out)
    outdir.mkdir(parents=True, exist_ok=True)
    columns = ["case", "objective_usd_per_year", "stations", "spots",
               "investment_usd_per_year", "energy_usd_per_year",
               "penalty_usd_per_year", "unsatisfied_ratio", "gap"]
    report.write_table(rows, outdir / "comparison.csv", columns)
    report.render_cost_bars(rows, outdir / "comparison.png")
    click.echo(f"report written to {outdir}/comparison.csv ({len(rows)} rows)")


if __name__ == "__main__":
    main()

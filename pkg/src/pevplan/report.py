"""Tabular and graphical output: CSV tables plus rendered PNG figures."""

from __future__ import annotations

import csv
from pathlib import Path as FsPath

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .planner import Plan, PlanningInputs
from .simulate import SimReport


def write_table(rows: list[dict], path: FsPath | str,
                columns: list[str] | None = None) -> None:
    """CSV with a stable header; the header is written even with no rows."""
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def plan_row(name: str, plan: Plan) -> dict:
    invest = sum(v for k, v in plan.cost_breakdown.items()
                 if k.endswith("capital"))
    return {
        "case": name,
        "objective_usd_per_year": round(plan.objective, 2),
        "stations": len(plan.built_nodes()),
        "spots": round(sum(s.spots for s in plan.stations.values()), 3),
        "investment_usd_per_year": round(invest, 2),
        "energy_usd_per_year": round(plan.cost_breakdown.get("energy", 0.0), 2),
        "penalty_usd_per_year": round(plan.cost_breakdown.get("penalty", 0.0), 2),
        "unsatisfied_ratio": round(plan.unsatisfied_ratio, 6),
        "gap": round(plan.gap, 6),
    }


def sim_row(cfg_label: str, rep: SimReport) -> dict:
    return {
        "case": cfg_label,
        "mode": rep.mode,
        "arrivals": rep.arrivals,
        "service_level": round(rep.service_level, 5),
        "half_width_3sigma": round(rep.half_width, 5),
        "instant_service_prob": round(rep.instant_service_prob, 5),
        "mean_wait_hours": round(rep.mean_wait_hours, 5),
    }


def render_plan_map(plan: Plan, inputs: PlanningInputs,
                    path: FsPath | str) -> None:
    """Scatter map of the road network with built stations highlighted."""
    net = inputs.transport
    fig, ax = plt.subplots(figsize=(7, 6))
    for arc in net.arcs:
        a, b = net.nodes[arc.a], net.nodes[arc.b]
        ax.plot([a.x, b.x], [a.y, b.y], color="0.8", lw=1, zorder=1)
    xs = [n.x for n in net.nodes.values() if not n.auxiliary]
    ys = [n.y for n in net.nodes.values() if not n.auxiliary]
    ax.scatter(xs, ys, s=18, color="0.5", zorder=2, label="node")
    built = plan.built_nodes()
    if built:
        bx = [net.nodes[i].x for i in built]
        by = [net.nodes[i].y for i in built]
        ax.scatter(bx, by, s=90, color="tab:red", marker="^", zorder=3,
                   label="station")
        for i in built:
            n = net.nodes[i]
            ax.annotate(f"{i}: {plan.stations[i].spots:.0f}", (n.x, n.y),
                        textcoords="offset points", xytext=(5, 5), fontsize=8)
    ax.set_xlabel("x (km)")
    ax.set_ylabel("y (km)")
    ax.set_title("Charging station placement")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_cost_bars(rows: list[dict], path: FsPath | str) -> None:
    """Grouped bars of annualized cost components per case row."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    cases = [str(r.get("case", i)) for i, r in enumerate(rows)]
    parts = ["investment_usd_per_year", "energy_usd_per_year",
             "penalty_usd_per_year"]
    bottom = [0.0] * len(rows)
    for part in parts:
        vals = [float(r.get(part, 0.0)) for r in rows]
        ax.bar(cases, vals, bottom=bottom, label=part.split("_")[0])
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("$ per year")
    ax.set_title("Cost comparison")
    if rows:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_service_levels(rows: list[dict], path: FsPath | str) -> None:
    """Measured service level per simulation run with error bars."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = range(len(rows))
    ys = [float(r["service_level"]) for r in rows]
    errs = [float(r.get("half_width_3sigma", 0.0)) for r in rows]
    ax.errorbar(list(xs), ys, yerr=errs, fmt="o-", capsize=3)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([str(r.get("case", i)) for i, r in enumerate(rows)],
                       rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("service level")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

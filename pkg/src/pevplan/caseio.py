"""File formats: case bundles in, plans and reports out.

All structured data is JSON with a ``format_version`` field and explicit
units in the schema (km, kW, kVA, ohm, $, hours).  A case bundle is a
small JSON index pointing at the network, grid, scenario, vehicle-type
and cost files plus run options; loading it produces validated
:class:`~pevplan.planner.PlanningInputs`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

from .errors import ValidationError
from .grid import Coupling, DistributionNetwork, GridBus, GridLine
from .planner import (CostParameters, Plan, PlanningInputs, StationDecision)
from .transport import (Arc, Path, PevType, Scenario, TransportNetwork,
                        TransportNode, densify, gravity_od_flows,
                        shortest_paths)

FORMAT_VERSION = 1


def _load_json(path: FsPath) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"missing input file: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON in {path}: {exc}")
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object at top level")
    ver = data.get("format_version")
    if ver != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format_version {ver!r}")
    return data


def load_transport(path: FsPath) -> tuple[TransportNetwork, dict]:
    data = _load_json(path)
    nodes = [TransportNode(int(n["id"]), float(n.get("weight", 0.0)),
                           float(n.get("x", 0.0)), float(n.get("y", 0.0)),
                           float(n.get("spare_substation_kva", 0.0)),
                           bool(n.get("auxiliary", False)))
             for n in data["nodes"]]
    arcs = [Arc(int(a["a"]), int(a["b"]), float(a["length_km"]))
            for a in data["arcs"]]
    return TransportNetwork(nodes, arcs), data


def load_types(path: FsPath) -> list[PevType]:
    data = _load_json(path)
    return [PevType(str(t["id"]), float(t["range_km"]),
                    float(t["kwh_per_km"]), float(t["share"]))
            for t in data["types"]]


def load_scenarios(path: FsPath) -> list[Scenario]:
    data = _load_json(path)
    out = []
    for s in data["scenarios"]:
        out.append(Scenario(
            str(s["id"]), float(s["probability"]),
            tuple(float(v) for v in s["traffic_shape"]),
            {int(b): tuple(map(float, prof))
             for b, prof in s.get("base_load_kw", {}).items()},
            {int(b): tuple(map(float, prof))
             for b, prof in s.get("base_load_kvar", {}).items()}))
    return out


def load_grid(path: FsPath) -> DistributionNetwork:
    data = _load_json(path)
    buses = [GridBus(int(b["id"]), float(b.get("vmin_pu", 0.95)),
                     float(b.get("vmax_pu", 1.05))) for b in data["buses"]]
    lines = [GridLine(int(l["child"]), int(l["parent"]), float(l["r_ohm"]),
                      float(l["x_ohm"]), float(l["rating_ka"]))
             for l in data["lines"]]
    coup = [Coupling(int(c["bus"]), int(c["node"]), float(c["line_km"]))
            for c in data.get("couplings", [])]
    return DistributionNetwork(float(data["base_mva"]), float(data["base_kv"]),
                               buses, lines, coup,
                               float(data.get("current_derate", 0.85)))


def load_costs(path: FsPath) -> CostParameters:
    data = _load_json(path)
    kwargs = {k: v for k, v in data.items()
              if k not in ("format_version", "units", "comment")}
    return CostParameters(**kwargs)


@dataclass
class CaseBundle:
    """A loaded case: planning inputs plus run options from the bundle file."""
    inputs: PlanningInputs
    options: dict = field(default_factory=dict)


def load_bundle(path: FsPath | str, **overrides) -> CaseBundle:
    """Read a bundle index file and assemble validated planning inputs.

    ``overrides`` replace individual bundle options (alpha, seed, gap,
    speed_kmh, share_choices, ...), which is how CLI flags reach the model.
    """
    path = FsPath(path)
    data = _load_json(path)
    base = path.parent
    files = data.get("files", {})
    for key in ("network", "grid", "scenarios", "pev_types", "costs"):
        if key not in files:
            raise ValidationError(f"{path}: bundle lacks files.{key}")
    net, net_data = load_transport(base / files["network"])
    grid = load_grid(base / files["grid"])
    scenarios = load_scenarios(base / files["scenarios"])
    types = load_types(base / files["pev_types"])
    costs = load_costs(base / files["costs"])

    opts = dict(data.get("options", {}))
    opts.update({k: v for k, v in overrides.items() if v is not None})

    max_arc = opts.get("densify_max_arc_km")
    if max_arc:
        net = densify(net, float(max_arc))

    # Travel demand: explicit OD rows, or a gravity model over node weights.
    if "od" in net_data:
        od_flows = {(int(r["origin"]), int(r["destination"])): float(r["daily_flow"])
                    for r in net_data["od"]}
    else:
        total = float(opts.get("total_daily_flow", 0.0))
        if total <= 0:
            raise ValidationError(
                "network file has no od table and the bundle sets no "
                "total_daily_flow for the gravity model")
        od_flows = gravity_od_flows(net, total,
                                    float(opts.get("gravity_exponent", 2.0)))
    paths = shortest_paths(net, sorted(od_flows), od_flows, types)

    inputs = PlanningInputs(
        transport=net, types=types, paths=paths, scenarios=scenarios,
        grid=grid, costs=costs,
        alpha=float(opts.get("alpha", 0.8)),
        entry_margin_km=float(opts.get("entry_margin_km", 100.0)),
        exit_margin_km=float(opts.get("exit_margin_km", 100.0)),
        efficiency=float(opts.get("efficiency", 0.92)),
        max_spots=float(opts.get("max_spots", 200.0)),
        share_choices=bool(opts.get("share_choices", True)),
        speed_kmh=float(opts.get("speed_kmh", 100.0)),
        tan_phi=float(opts.get("tan_phi", 0.0)))
    return CaseBundle(inputs, opts)


# -- plan round trip ---------------------------------------------------------

def plan_to_dict(plan: Plan) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "units": {"spots": "count", "expansion": "kVA", "costs": "$/year"},
        "stations": [asdict(s) for _, s in sorted(plan.stations.items())],
        "choices": [{"origin": o, "destination": d, "type": t,
                     "nodes": list(nodes)}
                    for (o, d, t), nodes in sorted(plan.choices.items())],
        "objective": plan.objective,
        "bound": plan.bound,
        "gap": plan.gap,
        "nodes_explored": plan.nodes_explored,
        "cost_breakdown": plan.cost_breakdown,
        "unsatisfied_ratio": plan.unsatisfied_ratio,
    }


def plan_from_dict(data: dict) -> Plan:
    if data.get("format_version") != FORMAT_VERSION:
        raise ValidationError("unsupported plan format_version")
    stations = {int(s["node"]): StationDecision(
        int(s["node"]), bool(s["built"]), float(s["spots"]),
        int(s["spots_ceil"]), float(s["expansion_kva"]))
        for s in data["stations"]}
    choices = {(int(c["origin"]), int(c["destination"]), str(c["type"])):
               tuple(int(n) for n in c["nodes"]) for c in data["choices"]}
    return Plan(stations, choices, float(data["objective"]),
                float(data["bound"]), float(data["gap"]),
                int(data["nodes_explored"]),
                {k: float(v) for k, v in data["cost_breakdown"].items()},
                float(data["unsatisfied_ratio"]))


def write_plan(plan: Plan, path: FsPath | str) -> None:
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_plan(path: FsPath | str) -> Plan:
    return plan_from_dict(_load_json(FsPath(path)))

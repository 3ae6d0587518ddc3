"""Assembly and evaluation of the station-planning optimization model.

Investment variables: station build flags ``x_i``, continuous spot counts
``y_i``, binary charge choices ``gamma`` (whether a type on a path tops up
at a node), and substation expansions.  Operational variables per
(scenario, hour): station draw, unsatisfied demand, and a branch-flow
snapshot of the feeder.  The model is a mixed-binary SOCP solved by the
bundled branch-and-bound; panel evaluation re-solves operations with the
investment frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bnb import BnbResult, branch_and_bound
from .conic import ModelBuilder, MixedConicProgram, solve_socp
from .errors import InfeasibleRangeError, SolverError, ValidationError
from .grid import DistributionNetwork, add_branch_flow
from .sizing import charge_time, inv_std_normal
from .transport import (HOURS_PER_DAY, ChoiceTrie, Path, PevType, Scenario,
                        SubPathConstraint, TransportNetwork, augment,
                        enumerate_subpaths, temporal_node_rates,
                        validate_scenarios, validate_type_shares)


@dataclass
class CostParameters:
    """Investment and operating unit costs, with the annualization factor."""

    station_fixed: float = 163_000.0        # $ per new station
    per_spot: float = 31_640.0              # $ per charging spot
    line_per_kva_km: float = 120.0          # $ per kVA-km of service line
    substation_per_kva: float = 788.0       # $ per kVA of expansion
    energy_per_kwh: float = 0.094
    penalty_per_kwh: float = 1000.0         # unsatisfied-demand penalty
    interest_rate: float = 0.08
    lifetime_years: int = 20
    spot_kw: float = 44.0                   # rated power of one spot

    def __post_init__(self):
        vals = (self.station_fixed, self.per_spot, self.line_per_kva_km,
                self.substation_per_kva, self.energy_per_kwh,
                self.penalty_per_kwh, self.spot_kw)
        if any(v < 0 for v in vals):
            raise ValidationError("costs must be non-negative")
        if self.interest_rate < 0 or self.lifetime_years <= 0:
            raise ValidationError("bad discount rate or lifetime")
        if self.interest_rate > 0 and not 0 < self.annuity_factor <= 1:
            raise ValidationError("annualization factor out of range")

    @property
    def annuity_factor(self) -> float:
        """Converts a present investment into equal annual payments."""
        r, n = self.interest_rate, self.lifetime_years
        if r == 0:
            return 1.0 / n
        return r * (1 + r) ** n / ((1 + r) ** n - 1)


@dataclass
class PlanningInputs:
    transport: TransportNetwork
    types: list[PevType]
    paths: list[Path]
    scenarios: list[Scenario]
    grid: DistributionNetwork
    costs: CostParameters = field(default_factory=CostParameters)
    alpha: float = 0.8
    entry_margin_km: float = 100.0        # range held when entering the network
    exit_margin_km: float = 100.0         # range required past the last node
    efficiency: float = 0.92              # charger efficiency for charge times
    max_spots: float = 200.0
    share_choices: bool = True
    speed_kmh: float = 100.0
    tan_phi: float = 0.0                  # reactive draw per kW of charging

    def __post_init__(self):
        validate_type_shares(self.types)
        validate_scenarios(self.scenarios)
        if not 0.5 <= self.alpha < 1.0:
            raise ValidationError("service level must lie in [0.5, 1)")
        if self.max_spots <= 0:
            raise ValidationError("max_spots must be positive")

    def charge_hours(self, t: PevType) -> float:
        return charge_time(t.range_km, t.kwh_per_km, self.costs.spot_kw,
                           self.efficiency)


@dataclass
class StationDecision:
    node: int
    built: bool
    spots: float
    spots_ceil: int
    expansion_kva: float


@dataclass
class Plan:
    stations: dict[int, StationDecision]
    choices: dict[tuple[int, int, str], tuple[int, ...]]  # (o, d, type) -> nodes
    objective: float
    bound: float
    gap: float
    nodes_explored: int
    cost_breakdown: dict[str, float] = field(default_factory=dict)
    unsatisfied_ratio: float = 0.0

    def built_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(n for n, s in self.stations.items() if s.built))


@dataclass
class OperationReport:
    feasible: bool
    objective: float | None
    energy_cost: float | None          # annual expected $, charging + base
    penalty_cost: float | None
    unsatisfied_ratio: float | None
    losses_kwh_per_day: float | None   # probability-weighted feeder losses
    violations: list[str] = field(default_factory=list)


class PlannerModel:
    """A built optimization model plus the bookkeeping to read it back."""

    def __init__(self, inputs: PlanningInputs, include_sizing: bool = True):
        self.inputs = inputs
        self.mb = ModelBuilder()
        self.constraints: list[SubPathConstraint] = []
        self.gamma_vars: dict[tuple[int, str, int], str] = {}  # (path idx, type, node)
        self.candidate_nodes: list[int] = []
        self.node_bus: dict[int, int] = {}
        self.node_line_km: dict[int, float] = {}
        self.root_vars: list[tuple[str, str]] = []       # (scenario id, p0 name)
        self.unserved_vars: list[str] = []
        self.demand_terms: list[tuple[float, str]] = []  # prob-weighted kW terms
        self._build(include_sizing)
        self.program: MixedConicProgram = self.mb.build()

    # -- construction ------------------------------------------------------
    def _build(self, include_sizing: bool) -> None:
        inp = self.inputs
        mb = self.mb
        costs = inp.costs
        zeta = costs.annuity_factor
        z_alpha = inv_std_normal(inp.alpha)

        for cp in inp.grid.couplings:
            if cp.node in self.node_bus:
                raise ValidationError(
                    f"transport node {cp.node} is coupled to two buses")
            if cp.node not in inp.transport.nodes:
                raise ValidationError(
                    f"coupling references unknown transport node {cp.node}")
            self.node_bus[cp.node] = cp.bus
            self.node_line_km[cp.node] = cp.line_km
        coupled = set(self.node_bus)

        # Covering structure: paths * types -> minimal violating windows.
        active: list[tuple[int, Path, PevType]] = []
        for qi, path in enumerate(inp.paths):
            for t in inp.types:
                if path.daily_flow.get(t.id, 0.0) <= 0:
                    continue
                active.append((qi, path, t))
                ap = augment(path, t, inp.entry_margin_km, inp.exit_margin_km)
                for con in enumerate_subpaths(ap):
                    usable = tuple(n for n in con.candidate_nodes if n in coupled)
                    if not usable:
                        raise InfeasibleRangeError(
                            f"type {t.id} on path {path.key} has a stretch "
                            f"where no candidate node reaches the feeder "
                            f"(nodes {con.candidate_nodes})",
                            path=path, pev_type=t)
                    self.constraints.append(
                        SubPathConstraint(con.path_key, t.id, usable))

        # Charge-choice variables, optionally shared over common prefixes.
        trie = ChoiceTrie() if inp.share_choices else None
        for qi, path, t in active:
            if trie is not None:
                handles = trie.add_path(path, t)
            for j, node in enumerate(path.nodes):
                if node not in coupled:
                    continue
                name = (f"gam[h{handles[j]}]" if trie is not None
                        else f"gam[{qi},{t.id},{node}]")
                if name not in mb:
                    mb.add_var(name, lb=0.0, ub=1.0)
                    mb.mark_binary(name)
                self.gamma_vars[(qi, t.id, node)] = name

        used_nodes = sorted({n for (_, _, n) in self.gamma_vars})
        self.candidate_nodes = used_nodes

        # Station build / size / expansion variables + annualized costs.
        for i in used_nodes:
            w = inp.transport.nodes[i].weight
            mult = 1.0 + 5.0 * w
            spare = inp.transport.nodes[i].spare_substation_kva
            mb.add_var(f"x[{i}]", lb=0.0, ub=1.0,
                       obj=zeta * mult * costs.station_fixed)
            mb.mark_binary(f"x[{i}]")
            mb.add_var(f"y[{i}]", lb=0.0, ub=inp.max_spots,
                       obj=zeta * (mult * costs.per_spot
                                   + costs.line_per_kva_km
                                   * self.node_line_km[i] * costs.spot_kw))
            mb.add_var(f"psub[{i}]", lb=0.0,
                       obj=zeta * mult * costs.substation_per_kva)
            # y <= max_spots * x ; expansion >= spot power beyond the spare
            mb.add_le([(1.0, f"y[{i}]"), (-inp.max_spots, f"x[{i}]")], 0.0)
            mb.add_le([(costs.spot_kw, f"y[{i}]"), (-1.0, f"psub[{i}]")], spare)

        # Linking and covering.
        linked: set[tuple[str, int]] = set()
        for (qi, tid, node), g in self.gamma_vars.items():
            if (g, node) not in linked:
                mb.add_le([(1.0, g), (-1.0, f"x[{node}]")], 0.0)
                linked.add((g, node))
        for ci, con in enumerate(self.constraints):
            qi = self._path_index(con.path_key)
            terms = []
            seen = set()
            for n in con.candidate_nodes:
                g = self.gamma_vars[(qi, con.pev_type_id, n)]
                if g not in seen:
                    terms.append((-1.0, g))
                    seen.add(g)
            mb.add_le(terms, -1.0)

        # Hourly Poisson rates of charge demand per node.
        rates = temporal_node_rates(inp.paths, inp.scenarios, inp.speed_kmh)
        charge_hours = {t.id: inp.charge_hours(t) for t in inp.types}
        # workload[(i, scen, t)] -> {gamma var: expected occupied spots}
        workload: dict[tuple[int, str, int], dict[str, float]] = {}
        for (qi, node, tid, sid, t), lam in rates.items():
            key = (qi, tid, node)
            if key not in self.gamma_vars:
                continue
            cell = workload.setdefault((node, sid, t), {})
            g = self.gamma_vars[key]
            cell[g] = cell.get(g, 0.0) + charge_hours[tid] * lam

        # Operational blocks per (scenario, hour).
        day_weight = 365.0  # operating days per year at scenario weights
        for scen in inp.scenarios:
            for t in range(HOURS_PER_DAY):
                tag = f"{scen.id}@{t}"
                extra_p: dict[int, list[tuple[float, str]]] = {}
                extra_q: dict[int, list[tuple[float, str]]] = {}
                for i in used_nodes:
                    cell = workload.get((i, scen.id, t))
                    if not cell:
                        continue
                    pev = f"pev[{i},{tag}]"
                    pun = f"pun[{i},{tag}]"
                    mb.add_var(pev, lb=0.0)
                    mb.add_var(pun, lb=0.0,
                               obj=day_weight * scen.probability
                               * costs.penalty_per_kwh)
                    self.unserved_vars.append(pun)
                    # demanded power = rated power * expected occupied spots
                    mb.add_eq([(1.0, pev), (1.0, pun)]
                              + [(-costs.spot_kw * c, g) for g, c in sorted(cell.items())],
                              0.0)
                    mb.add_le([(1.0, pev), (-costs.spot_kw, f"y[{i}]")], 0.0)
                    bus = self.node_bus[i]
                    extra_p.setdefault(bus, []).append((1.0, pev))
                    if inp.tan_phi:
                        extra_q.setdefault(bus, []).append((inp.tan_phi, pev))
                    for g, c in sorted(cell.items()):
                        self.demand_terms.append(
                            (scen.probability * costs.spot_kw * c, g))
                    if include_sizing:
                        self._sizing_cone(i, tag, cell, z_alpha)
                ploads = {b: prof[t] for b, prof in scen.base_load_kw.items()}
                qloads = {b: prof[t] for b, prof in scen.base_load_kvar.items()}
                h = add_branch_flow(mb, inp.grid, tag, ploads, qloads,
                                    extra_p, extra_q)
                mb.add_obj(h.p_root, day_weight * scen.probability
                           * costs.energy_per_kwh
                           * inp.grid.pu_to_kw(1.0))
                self.root_vars.append((scen.id, h.p_root))

    def _sizing_cone(self, i: int, tag: str, cell: dict[str, float],
                     z_alpha: float) -> None:
        """Service-level spot requirement at one node for one hour."""
        mb = self.mb
        mean_terms = [(c, g) for g, c in sorted(cell.items())]
        if z_alpha <= 0.0:
            mb.add_le(mean_terms + [(-1.0, f"y[{i}]")], 0.0)
            return
        head = f"siz+[{i},{tag}]"
        mb.add_var(head, lb=0.0)
        # y - mean workload = z_alpha * head
        mb.add_eq([(1.0, f"y[{i}]"), (-z_alpha, head)]
                  + [(-c, g) for c, g in mean_terms], 0.0)
        tail = []
        for j, (c, g) in enumerate(mean_terms):
            w = f"siz.w[{i},{tag},{j}]"
            mb.add_var(w)
            mb.add_eq([(1.0, w), (-math.sqrt(c), g)], 0.0)
            tail.append(w)
        mb.add_soc(head, tail)

    def _path_index(self, key: tuple[int, int]) -> int:
        for qi, p in enumerate(self.inputs.paths):
            if p.key == key:
                return qi
        raise KeyError(key)

    # -- solution readback ---------------------------------------------------
    def extract_plan(self, res: BnbResult) -> Plan:
        if res.status not in ("optimal", "node_limit") or res.x is None:
            raise SolverError(f"no plan available (search status {res.status!r})")
        x = res.x
        mb = self.mb
        inp = self.inputs
        stations: dict[int, StationDecision] = {}
        for i in self.candidate_nodes:
            built = mb.value(x, f"x[{i}]") > 0.5
            spots = mb.value(x, f"y[{i}]") if built else 0.0
            stations[i] = StationDecision(
                i, built, spots, int(math.ceil(spots - 1e-6)) if built else 0,
                mb.value(x, f"psub[{i}]") if built else 0.0)
        choices: dict[tuple[int, int, str], tuple[int, ...]] = {}
        for (qi, tid, node), g in sorted(self.gamma_vars.items()):
            if mb.value(x, g) > 0.5:
                key = inp.paths[qi].key + (tid,)
                choices.setdefault(key, ())
                choices[key] = tuple(sorted(set(choices[key]) | {node}))
        self._check_covering(choices)
        breakdown = self.cost_breakdown(x)
        recon = sum(breakdown.values())
        if abs(recon - res.objective) > 1e-6 * max(1.0, abs(res.objective)):
            raise SolverError(
                f"objective recomputation mismatch: {recon} vs {res.objective}")
        return Plan(stations, choices, res.objective, res.bound, res.gap,
                    res.nodes, breakdown, self.unsatisfied_ratio(x))

    def _check_covering(self, choices) -> None:
        for con in self.constraints:
            key = con.path_key + (con.pev_type_id,)
            got = set(choices.get(key, ()))
            if not got & set(con.candidate_nodes):
                raise SolverError(
                    f"returned plan leaves type {con.pev_type_id} uncovered on "
                    f"path {con.path_key} over nodes {con.candidate_nodes}")

    def cost_breakdown(self, x: np.ndarray) -> dict[str, float]:
        inp, mb = self.inputs, self.mb
        costs = inp.costs
        zeta = costs.annuity_factor
        out = {"station_capital": 0.0, "spot_capital": 0.0,
               "line_capital": 0.0, "substation_capital": 0.0,
               "energy": 0.0, "penalty": 0.0}
        for i in self.candidate_nodes:
            mult = 1.0 + 5.0 * inp.transport.nodes[i].weight
            xi = mb.value(x, f"x[{i}]")
            yi = mb.value(x, f"y[{i}]")
            out["station_capital"] += zeta * mult * costs.station_fixed * xi
            out["spot_capital"] += zeta * mult * costs.per_spot * yi
            out["line_capital"] += (zeta * costs.line_per_kva_km
                                    * self.node_line_km[i] * costs.spot_kw * yi)
            out["substation_capital"] += (zeta * mult * costs.substation_per_kva
                                          * mb.value(x, f"psub[{i}]"))
        probs = {s.id: s.probability for s in self.inputs.scenarios}
        for sid, name in self.root_vars:
            out["energy"] += (365.0 * probs[sid] * costs.energy_per_kwh
                              * inp.grid.pu_to_kw(mb.value(x, name)))
        for name in self.unserved_vars:
            sid = name.split(",", 1)[1].split("@")[0]
            out["penalty"] += (365.0 * probs[sid] * costs.penalty_per_kwh
                               * mb.value(x, name))
        return out

    def unsatisfied_ratio(self, x: np.ndarray) -> float:
        probs = {s.id: s.probability for s in self.inputs.scenarios}
        unserved = 0.0
        for name in self.unserved_vars:
            sid = name.split(",", 1)[1].split("@")[0]
            unserved += probs[sid] * self.mb.value(x, name)
        demand = sum(c * self.mb.value(x, g) for c, g in self.demand_terms)
        return unserved / demand if demand > 1e-12 else 0.0


def assemble(inputs: PlanningInputs) -> PlannerModel:
    """Build the full investment + operations model for the given inputs."""
    return PlannerModel(inputs, include_sizing=True)


def solve_plan(inputs: PlanningInputs, rel_gap: float = 0.005,
               tol: float = 1e-8, max_nodes: int = 50000) -> Plan:
    model = assemble(inputs)
    res = branch_and_bound(model.program, rel_gap=rel_gap, tol=tol,
                           max_nodes=max_nodes)
    if res.status == "infeasible":
        raise SolverError("planning model is infeasible; check base loads")
    return model.extract_plan(res)


def evaluate_plan(plan: Plan, inputs: PlanningInputs,
                  tol: float = 1e-8) -> OperationReport:
    """Freeze a plan's investment and re-solve the operational problem.

    The spot-requirement cones are investment-stage constraints and are
    dropped here: an undersized plan shows up as unsatisfied demand (with
    its penalty), not as infeasibility.
    """
    model = PlannerModel(inputs, include_sizing=False)
    mb = model.mb
    prog = model.program.program
    violations: list[str] = []
    for i in model.candidate_nodes:
        st = plan.stations.get(i)
        built = bool(st and st.built)
        spots = st.spots if built and st else 0.0
        for name, val in ((f"x[{i}]", 1.0 if built else 0.0),
                          (f"y[{i}]", spots)):
            idx = mb.index(name)
            prog.lb[idx] = prog.ub[idx] = val
    for (qi, tid, node), g in model.gamma_vars.items():
        key = inputs.paths[qi].key + (tid,)
        val = 1.0 if node in plan.choices.get(key, ()) else 0.0
        idx = mb.index(g)
        # shared variables must be fixed consistently across their paths
        if prog.lb[idx] == prog.ub[idx] and prog.lb[idx] not in (val,):
            violations.append(f"conflicting shared choice at node {node}")
        prog.lb[idx] = prog.ub[idx] = val
    for con in model.constraints:
        key = con.path_key + (con.pev_type_id,)
        if not set(plan.choices.get(key, ())) & set(con.candidate_nodes):
            violations.append(
                f"type {con.pev_type_id} uncovered on path {con.path_key} "
                f"(candidates {con.candidate_nodes})")
    res = solve_socp(prog, tol=tol)
    if res.status != "optimal":
        violations.append(f"operational solve status {res.status!r}")
        return OperationReport(False, None, None, None, None, None, violations)
    x = res.x
    breakdown = model.cost_breakdown(x)
    probs = {s.id: s.probability for s in inputs.scenarios}
    loads = {sid: 0.0 for sid in probs}
    for scen in inputs.scenarios:
        for prof in scen.base_load_kw.values():
            loads[scen.id] += sum(prof)
    imports = {sid: 0.0 for sid in probs}
    for sid, name in model.root_vars:
        imports[sid] += inputs.grid.pu_to_kw(mb.value(x, name))
    station_kwh = 0.0
    for i in model.candidate_nodes:
        for scen in inputs.scenarios:
            for t in range(HOURS_PER_DAY):
                name = f"pev[{i},{scen.id}@{t}]"
                if name in mb:
                    station_kwh += probs[scen.id] * mb.value(x, name)
    losses = sum(probs[sid] * imports[sid] for sid in probs) - station_kwh \
        - sum(probs[sid] * loads[sid] for sid in probs)
    return OperationReport(
        feasible=not violations,
        objective=res.objective,
        energy_cost=breakdown["energy"],
        penalty_cost=breakdown["penalty"],
        unsatisfied_ratio=model.unsatisfied_ratio(x),
        losses_kwh_per_day=losses,
        violations=violations)


def sweep(inputs: PlanningInputs, rel_gap: float = 0.005,
          variants: tuple[str, ...] = ("baseline", "no_sharing",
                                       "traffic_x2", "homogeneous"),
          ) -> list[dict[str, float | str]]:
    """Side-by-side comparison of standard planning variants."""
    rows = []
    for name in variants:
        inp = _variant(inputs, name)
        plan = solve_plan(inp, rel_gap=rel_gap)
        stations = len(plan.built_nodes())
        spots = sum(s.spots for s in plan.stations.values())
        invest = sum(v for k, v in plan.cost_breakdown.items()
                     if k.endswith("capital"))
        rows.append({
            "variant": name,
            "objective": plan.objective,
            "stations": stations,
            "spots": spots,
            "investment": invest,
            "energy": plan.cost_breakdown["energy"],
            "penalty": plan.cost_breakdown["penalty"],
            "unsatisfied_ratio": plan.unsatisfied_ratio,
        })
    return rows


def _variant(inputs: PlanningInputs, name: str) -> PlanningInputs:
    if name == "baseline":
        return inputs
    if name == "no_sharing":
        return replace(inputs, share_choices=False)
    if name == "traffic_x2":
        paths = [replace(p, daily_flow={k: 2.0 * v
                                        for k, v in p.daily_flow.items()})
                 for p in inputs.paths]
        return replace(inputs, paths=paths)
    if name == "homogeneous":
        shortest = min(inputs.types, key=lambda t: t.range_km)
        merged = replace(shortest, share=1.0)
        paths = [replace(p, daily_flow={merged.id: sum(p.daily_flow.values())})
                 for p in inputs.paths]
        return replace(inputs, types=[merged], paths=paths)
    raise ValidationError(f"unknown sweep variant {name!r}")

"""Radial distribution feeder model and its convex power-flow relaxation.

The feeder is a tree rooted at the substation bus (id 0).  Power flow is
written in the branch-flow (DistFlow) variables: squared voltage ``v`` per
bus, squared current ``l`` and sending-end flows ``P, Q`` per line, with
the quadratic coupling relaxed to a second-order cone.  All equations are
kept in per-unit; loads cross the boundary in kW/kvar.

Line orientation is child towards parent, with injections positive for
generation.  A leaf serving load therefore carries negative ``P`` and the
child voltage sits below the parent voltage, as expected on a feeder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ModelBuilder, solve_socp
from .errors import SolverError, ValidationError

ROOT_BUS = 0


@dataclass(frozen=True)
class GridBus:
    id: int
    vmin_pu: float = 0.95
    vmax_pu: float = 1.05


@dataclass(frozen=True)
class GridLine:
    """Feeder segment; ``child`` is the bus farther from the substation."""
    child: int
    parent: int
    r_ohm: float
    x_ohm: float
    rating_ka: float


@dataclass(frozen=True)
class Coupling:
    """A candidate station site wired to a feeder bus."""
    bus: int
    node: int          # transport network node id
    line_km: float     # length of the dedicated service line


class DistributionNetwork:
    """Balanced radial feeder with per-unit conversion helpers."""

    def __init__(self, base_mva: float, base_kv: float,
                 buses: list[GridBus], lines: list[GridLine],
                 couplings: list[Coupling] | None = None,
                 current_derate: float = 0.85):
        if base_mva <= 0 or base_kv <= 0:
            raise ValidationError("per-unit bases must be positive")
        if not 0 < current_derate <= 1:
            raise ValidationError("current derate must be in (0, 1]")
        self.base_mva = base_mva
        self.base_kv = base_kv
        self.current_derate = current_derate
        self.buses = {b.id: b for b in buses}
        if len(self.buses) != len(buses):
            raise ValidationError("duplicate bus ids")
        if ROOT_BUS not in self.buses:
            raise ValidationError(f"feeder must contain the substation bus {ROOT_BUS}")
        for b in buses:
            if not 0 < b.vmin_pu < b.vmax_pu:
                raise ValidationError(f"bad voltage band at bus {b.id}")
        self.lines = self._orient(lines)
        self.couplings = list(couplings or [])
        for cp in self.couplings:
            if cp.bus not in self.buses:
                raise ValidationError(f"coupling references unknown bus {cp.bus}")
            if cp.line_km < 0:
                raise ValidationError("coupling line length must be non-negative")
        self.children: dict[int, list[GridLine]] = {b: [] for b in self.buses}
        self.parent_line: dict[int, GridLine] = {}
        for ln in self.lines:
            self.children[ln.parent].append(ln)
            self.parent_line[ln.child] = ln
        for b in self.children:
            self.children[b].sort(key=lambda ln: ln.child)

    def _orient(self, lines: list[GridLine]) -> list[GridLine]:
        """BFS from the root; flip any line given in parent->child order."""
        if len(lines) != len(self.buses) - 1:
            raise ValidationError(
                f"a radial feeder over {len(self.buses)} buses needs "
                f"{len(self.buses) - 1} lines, got {len(lines)}")
        adj: dict[int, list[GridLine]] = {b: [] for b in self.buses}
        for ln in lines:
            if ln.child not in self.buses or ln.parent not in self.buses:
                raise ValidationError("line endpoint is not a bus")
            if ln.r_ohm < 0 or ln.x_ohm < 0 or ln.rating_ka <= 0:
                raise ValidationError("line impedance/rating out of range")
            adj[ln.child].append(ln)
            adj[ln.parent].append(ln)
        oriented = []
        seen = {ROOT_BUS}
        queue = [ROOT_BUS]
        while queue:
            bus = queue.pop()
            for ln in adj[bus]:
                other = ln.parent if ln.child == bus else ln.child
                if other in seen:
                    continue
                seen.add(other)
                queue.append(other)
                if ln.parent == bus:
                    oriented.append(ln)
                else:
                    raise ValidationError(
                        f"line ({ln.child}, {ln.parent}) is oriented away from "
                        f"the substation; bus {bus} is nearer the root")
        if len(seen) != len(self.buses):
            missing = sorted(set(self.buses) - seen)
            raise ValidationError(f"feeder is not connected; unreachable buses {missing}")
        if len(oriented) != len(lines):
            extra = [(l.child, l.parent) for l in lines
                     if l not in oriented]
            raise ValidationError(f"feeder contains a cycle through lines {extra}")
        return oriented

    # per-unit conversion -------------------------------------------------
    @property
    def z_base_ohm(self) -> float:
        return self.base_kv ** 2 / self.base_mva

    @property
    def i_base_ka(self) -> float:
        return self.base_mva / (math.sqrt(3.0) * self.base_kv)

    def kw_to_pu(self, kw: float) -> float:
        return kw / (1000.0 * self.base_mva)

    def pu_to_kw(self, pu: float) -> float:
        return pu * 1000.0 * self.base_mva

    def line_pu(self, ln: GridLine) -> tuple[float, float, float]:
        """(r, x, l_max) of a line in per-unit, with the thermal derate."""
        r = ln.r_ohm / self.z_base_ohm
        x = ln.x_ohm / self.z_base_ohm
        lmax = (self.current_derate * ln.rating_ka / self.i_base_ka) ** 2
        return r, x, lmax


@dataclass
class BranchFlowHandles:
    tag: str
    v: dict[int, str]
    p_flow: dict[tuple[int, int], str]
    q_flow: dict[tuple[int, int], str]
    l_sq: dict[tuple[int, int], str]
    p_root: str
    q_root: str


def add_branch_flow(mb: ModelBuilder, net: DistributionNetwork, tag: str,
                    p_load_kw: dict[int, float], q_load_kvar: dict[int, float],
                    extra_load_kw: dict[int, list[tuple[float, str]]] | None = None,
                    extra_load_kvar: dict[int, list[tuple[float, str]]] | None = None,
                    ) -> BranchFlowHandles:
    """Emit one branch-flow snapshot into a model under construction.

    ``extra_load_kw[bus]`` lists (kW-per-unit coefficient, variable name)
    terms added to the fixed load, which is how station charging demand
    enters the feeder.  Returns the generated variable names.
    """
    extra_load_kw = extra_load_kw or {}
    extra_load_kvar = extra_load_kvar or {}
    h = BranchFlowHandles(tag, {}, {}, {}, {}, f"{tag}.p0", f"{tag}.q0")
    for bid, bus in sorted(net.buses.items()):
        name = f"{tag}.v[{bid}]"
        if bid == ROOT_BUS:
            mb.add_var(name, lb=1.0, ub=1.0)
        else:
            mb.add_var(name, lb=bus.vmin_pu ** 2, ub=bus.vmax_pu ** 2)
        h.v[bid] = name
    for ln in net.lines:
        key = (ln.child, ln.parent)
        r, x, lmax = net.line_pu(ln)
        h.p_flow[key] = f"{tag}.P[{ln.child},{ln.parent}]"
        mb.add_var(h.p_flow[key])
        h.q_flow[key] = f"{tag}.Q[{ln.child},{ln.parent}]"
        mb.add_var(h.q_flow[key])
        h.l_sq[key] = f"{tag}.l[{ln.child},{ln.parent}]"
        mb.add_var(h.l_sq[key], lb=0.0, ub=lmax)
    mb.add_var(h.p_root)
    mb.add_var(h.q_root)

    def load_terms(bid: int, sign: float) -> list[tuple[float, str]]:
        terms = []
        for coef, var in extra_load_kw.get(bid, []):
            terms.append((sign * net.kw_to_pu(coef), var))
        return terms

    def load_terms_q(bid: int, sign: float) -> list[tuple[float, str]]:
        terms = []
        for coef, var in extra_load_kvar.get(bid, []):
            terms.append((sign * net.kw_to_pu(coef), var))
        return terms

    for bid in sorted(net.buses):
        pl = net.kw_to_pu(p_load_kw.get(bid, 0.0))
        ql = net.kw_to_pu(q_load_kvar.get(bid, 0.0))
        inflow_p: list[tuple[float, str]] = []
        inflow_q: list[tuple[float, str]] = []
        for ch in net.children[bid]:
            ck = (ch.child, ch.parent)
            r, x, _ = net.line_pu(ch)
            inflow_p += [(1.0, h.p_flow[ck]), (-r, h.l_sq[ck])]
            inflow_q += [(1.0, h.q_flow[ck]), (-x, h.l_sq[ck])]
        if bid == ROOT_BUS:
            # substation import balances the root load and upstream flows
            mb.add_eq([(1.0, h.p_root)] + inflow_p + load_terms(bid, -1.0), pl)
            mb.add_eq([(1.0, h.q_root)] + inflow_q + load_terms_q(bid, -1.0), ql)
        else:
            key = (bid, net.parent_line[bid].parent)
            mb.add_eq([(1.0, h.p_flow[key])] + [(-c, v) for c, v in inflow_p]
                      + load_terms(bid, 1.0), -pl)
            mb.add_eq([(1.0, h.q_flow[key])] + [(-c, v) for c, v in inflow_q]
                      + load_terms_q(bid, 1.0), -ql)

    for ln in net.lines:
        key = (ln.child, ln.parent)
        r, x, _ = net.line_pu(ln)
        z2 = r * r + x * x
        mb.add_eq([(1.0, h.v[ln.child]), (-1.0, h.v[ln.parent]),
                   (-2.0 * r, h.p_flow[key]), (-2.0 * x, h.q_flow[key]),
                   (z2, h.l_sq[key])], 0.0)
        # P^2 + Q^2 <= l * v(child), written as a standard cone on aux vars
        head = f"{tag}.cone+[{ln.child}]"
        t1 = f"{tag}.cone.p[{ln.child}]"
        t2 = f"{tag}.cone.q[{ln.child}]"
        t3 = f"{tag}.cone-[{ln.child}]"
        mb.add_var(head, lb=0.0)
        mb.add_var(t1)
        mb.add_var(t2)
        mb.add_var(t3)
        mb.add_eq([(1.0, head), (-1.0, h.l_sq[key]), (-1.0, h.v[ln.child])], 0.0)
        mb.add_eq([(1.0, t1), (-2.0, h.p_flow[key])], 0.0)
        mb.add_eq([(1.0, t2), (-2.0, h.q_flow[key])], 0.0)
        mb.add_eq([(1.0, t3), (-1.0, h.l_sq[key]), (1.0, h.v[ln.child])], 0.0)
        mb.add_soc(head, [t1, t2, t3])
    return h


@dataclass
class DispatchResult:
    v_pu: dict[int, float]          # bus voltage magnitudes (not squared)
    p_flow_kw: dict[tuple[int, int], float]
    q_flow_kvar: dict[tuple[int, int], float]
    current_ka: dict[tuple[int, int], float]
    p_root_kw: float
    q_root_kvar: float
    losses_kw: float
    cone_gap: float                 # max |P^2+Q^2 - l v| over lines, pu


def min_loss_dispatch(net: DistributionNetwork, p_load_kw: dict[int, float],
                      q_load_kvar: dict[int, float], tol: float = 1e-9
                      ) -> DispatchResult:
    """Solve the feeder snapshot minimizing substation import.

    With loss-minimizing objective the cone relaxation is tight on a
    radial feeder, so the result is an exact AC power-flow solution
    (useful on its own and as a correctness check for the planner blocks).
    """
    mb = ModelBuilder()
    h = add_branch_flow(mb, net, "pf", p_load_kw, q_load_kvar)
    mb.add_obj(h.p_root, 1.0)
    res = solve_socp(mb.build().program, tol=tol)
    if res.status != "optimal":
        raise SolverError(f"power flow solve ended with status {res.status!r}")
    x = res.x
    vals_v = {b: math.sqrt(max(mb.value(x, h.v[b]), 0.0)) for b in net.buses}
    pf, qf, cur = {}, {}, {}
    gap = 0.0
    for ln in net.lines:
        key = (ln.child, ln.parent)
        p = mb.value(x, h.p_flow[key])
        q = mb.value(x, h.q_flow[key])
        l = mb.value(x, h.l_sq[key])
        v = mb.value(x, h.v[ln.child])
        gap = max(gap, abs(p * p + q * q - l * v))
        pf[key] = net.pu_to_kw(p)
        qf[key] = net.pu_to_kw(q)
        cur[key] = math.sqrt(max(l, 0.0)) * net.i_base_ka
    p0 = net.pu_to_kw(mb.value(x, h.p_root))
    q0 = net.pu_to_kw(mb.value(x, h.q_root))
    losses = p0 - sum(p_load_kw.values())
    return DispatchResult(vals_v, pf, qf, cur, p0, q0, losses, gap)

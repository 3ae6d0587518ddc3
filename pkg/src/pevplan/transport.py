"""Highway network model: OD flows, driving-range covering constraints.

The driving-range logic works on *augmented* paths: two pseudo nodes are
appended so that the entrance margin (a vehicle enters the network with
range left for ``entry_margin_km``) and the exit margin become plain arc
lengths, and the whole feasibility question reduces to interval covering.

A window (u, w) of an augmented path *violates* the range when a vehicle
cannot ride from u to w on one charge.  Between two in-network charging
stops a span of exactly the driving range already violates (a driver will
not plan to arrive at the next charge with an empty battery), while the
boundary legs, whose margins are safety buffers by construction, tolerate
equality.  Only the minimal violating windows are emitted; every other
violating window contains one of them, so the covering constraints are
equivalent and far fewer.
"""

from __future__ import annotations

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InfeasibleRangeError, UnreachableODError, ValidationError

#: Sentinel ids for the pseudo origin/destination of an augmented path.
PSEUDO_ORIGIN = -1
PSEUDO_DESTINATION = -2

HOURS_PER_DAY = 24


@dataclass(frozen=True)
class TransportNode:
    id: int
    weight: float = 0.0
    x: float | None = None
    y: float | None = None
    spare_substation_kva: float = 0.0
    auxiliary: bool = False


@dataclass(frozen=True)
class Arc:
    a: int
    b: int
    length_km: float


class TransportNetwork:
    """Undirected highway network with weighted nodes and km arcs."""

    def __init__(self, nodes: Iterable[TransportNode], arcs: Iterable[Arc]):
        self.nodes: dict[int, TransportNode] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise ValidationError(f"duplicate node id {n.id}")
            if n.weight < 0:
                raise ValidationError(f"node {n.id} has negative weight")
            self.nodes[n.id] = n
        self.arcs: list[Arc] = []
        self._adj: dict[int, list[tuple[int, float]]] = {i: [] for i in self.nodes}
        for a in arcs:
            if a.length_km <= 0:
                raise ValidationError(f"arc ({a.a},{a.b}) has non-positive length")
            if a.a not in self.nodes or a.b not in self.nodes:
                raise ValidationError(f"arc ({a.a},{a.b}) references unknown node")
            self.arcs.append(a)
            self._adj[a.a].append((a.b, a.length_km))
            self._adj[a.b].append((a.a, a.length_km))
        for i in self._adj:
            self._adj[i].sort()
        if self.nodes and not self._connected():
            raise ValidationError("transport network is not connected")

    def _connected(self) -> bool:
        start = next(iter(self.nodes))
        seen = {start}
        stack = [start]
        while stack:
            for nb, _ in self._adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.nodes)

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        return self._adj[i]

    def original_nodes(self) -> list[TransportNode]:
        return [n for n in self.nodes.values() if not n.auxiliary]

    def dijkstra(self, source: int) -> dict[int, float]:
        """Shortest distances from ``source`` to every reachable node."""
        dist = {source: 0.0}
        heap = [(0.0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, math.inf):
                continue
            for v, w in self._adj[u]:
                nd = d + w
                if nd < dist.get(v, math.inf) - 1e-12:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist


@dataclass(frozen=True)
class PevType:
    id: str
    range_km: float
    kwh_per_km: float
    share: float

    def __post_init__(self):
        if self.range_km <= 0:
            raise ValidationError(f"PEV type {self.id}: driving range must be positive")
        if self.kwh_per_km < 0 or not 0 <= self.share <= 1:
            raise ValidationError(f"PEV type {self.id}: bad energy rate or share")


def validate_type_shares(types: Sequence[PevType], tol: float = 1e-9) -> None:
    total = sum(t.share for t in types)
    if abs(total - 1.0) > tol:
        raise ValidationError(f"PEV type shares sum to {total}, expected 1")


@dataclass(frozen=True)
class Path:
    """One OD route: ordered node sequence with cumulative km positions."""

    origin: int
    destination: int
    nodes: tuple[int, ...]
    positions: tuple[float, ...]
    daily_flow: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.nodes) != len(self.positions):
            raise ValidationError("node/position length mismatch")
        if any(b <= a + 1e-12 for a, b in zip(self.positions, self.positions[1:])):
            raise ValidationError("path positions must be strictly increasing")
        if self.nodes[0] != self.origin or self.nodes[-1] != self.destination:
            raise ValidationError("path endpoints do not match its OD pair")

    @property
    def length_km(self) -> float:
        return self.positions[-1]

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin, self.destination)


@dataclass(frozen=True)
class AugmentedPath:
    """A path extended with pseudo endpoints for one vehicle type.

    The pseudo-origin arc equals ``range - entry_margin``: a vehicle that
    is notionally full at the pseudo origin holds exactly the entrance
    margin of range when it reaches the first real node.  The
    pseudo-destination arc equals the exit margin.
    """

    path: Path
    pev_type: PevType
    entry_arc_km: float
    exit_arc_km: float

    def __post_init__(self):
        if self.entry_arc_km < 0 or self.exit_arc_km < 0:
            raise ValidationError("pseudo arc lengths must be non-negative")

    @property
    def node_ids(self) -> tuple[int, ...]:
        return (PSEUDO_ORIGIN,) + self.path.nodes + (PSEUDO_DESTINATION,)

    @property
    def positions(self) -> tuple[float, ...]:
        shift = self.entry_arc_km
        mid = tuple(p + shift for p in self.path.positions)
        return (0.0,) + mid + (mid[-1] + self.exit_arc_km,)


def augment(path: Path, pev_type: PevType,
            entry_margin_km: float, exit_margin_km: float) -> AugmentedPath:
    if pev_type.range_km < entry_margin_km:
        raise InfeasibleRangeError(
            f"type {pev_type.id} (range {pev_type.range_km} km) cannot enter the "
            f"network: the entrance margin is {entry_margin_km} km",
            path=path, pev_type=pev_type)
    return AugmentedPath(path, pev_type,
                         entry_arc_km=pev_type.range_km - entry_margin_km,
                         exit_arc_km=exit_margin_km)


@dataclass(frozen=True)
class SubPathConstraint:
    """At least one of ``candidate_nodes`` must host a charge choice."""

    path_key: tuple[int, int]
    pev_type_id: str
    candidate_nodes: tuple[int, ...]

    def __post_init__(self):
        if not self.candidate_nodes:
            raise ValidationError("a covering constraint cannot be empty")


def _window_violates(pos_u: float, pos_w: float, u_real: bool, w_real: bool,
                     range_km: float) -> bool:
    span = pos_w - pos_u
    if u_real and w_real:
        # A ride between two in-network charging stops must be strictly
        # shorter than the range; the boundary legs tolerate equality.
        return span >= range_km - 1e-9
    return span > range_km + 1e-9


def enumerate_subpaths(ap: AugmentedPath) -> list[SubPathConstraint]:
    """Interiors of all minimal violating windows of an augmented path.

    Raises :class:`InfeasibleRangeError` when a minimal violating window
    has an empty interior: no station placement can serve this type on
    this path.
    """
    ids = ap.node_ids
    pos = ap.positions
    real = [i not in (PSEUDO_ORIGIN, PSEUDO_DESTINATION) for i in ids]
    n = len(ids)
    r = ap.pev_type.range_km

    def violates(u: int, w: int) -> bool:
        return _window_violates(pos[u], pos[w], real[u], real[w], r)

    minimal: list[tuple[int, int]] = []
    for u in range(n - 1):
        # Smallest w for which (u, w) violates; any larger w is dominated.
        for w in range(u + 1, n):
            if violates(u, w):
                if not (u + 1 < w and violates(u + 1, w)):
                    minimal.append((u, w))
                break

    interiors = [tuple(ids[j] for j in range(u + 1, w)) for u, w in minimal]
    # Guard against threshold asymmetry near zero-length pseudo arcs: keep
    # only interiors that do not strictly contain another one.
    keep: list[int] = []
    for a, ia in enumerate(interiors):
        sa = set(ia)
        if not any(b != a and set(ib) < sa for b, ib in enumerate(interiors)):
            keep.append(a)
    out = []
    for a in keep:
        if not interiors[a]:
            u, w = minimal[a]
            raise InfeasibleRangeError(
                f"type {ap.pev_type.id} cannot traverse path "
                f"{ap.path.origin}->{ap.path.destination}: the segment between "
                f"positions {pos[u]:.1f} km and {pos[w]:.1f} km exceeds the range "
                f"with no candidate node inside",
                window=(pos[u], pos[w]), path=ap.path, pev_type=ap.pev_type)
        out.append(SubPathConstraint(ap.path.key, ap.pev_type.id, interiors[a]))
    return out


def min_cover_witness(constraints: Sequence[SubPathConstraint],
                      ) -> tuple[int, list[tuple[int, ...]]]:
    """Minimum hitting-set size and *all* minimum hitting sets.

    Exhaustive search; intended for desk-scale paths only.
    """
    if not constraints:
        return 0, [()]
    universe = sorted({i for c in constraints for i in c.candidate_nodes})
    sets = [frozenset(c.candidate_nodes) for c in constraints]
    for k in range(1, len(universe) + 1):
        hits = [combo for combo in itertools.combinations(universe, k)
                if all(s.intersection(combo) for s in sets)]
        if hits:
            return k, hits
    raise ValidationError("constraints cannot be hit by any node subset")


class ChoiceTrie:
    """Shared charge-choice variable handles over common path prefixes.

    PEVs of one type entering the network at the same node and riding an
    identical leading sub-path keep identical charge choices until the
    paths separate, so one binary variable serves every such path.
    """

    def __init__(self):
        self._handles: dict[tuple[int, str, tuple[int, ...]], int] = {}
        self._info: list[tuple[str, int]] = []  # handle -> (type id, node)

    def add_path(self, path: Path, pev_type: PevType) -> list[int]:
        """Register a path and return the handle for each of its nodes."""
        out = []
        for j in range(len(path.nodes)):
            key = (path.nodes[0], pev_type.id, path.nodes[:j + 1])
            h = self._handles.get(key)
            if h is None:
                h = len(self._info)
                self._handles[key] = h
                self._info.append((pev_type.id, path.nodes[j]))
            out.append(h)
        return out

    @property
    def num_handles(self) -> int:
        return len(self._info)

    def handle_node(self, handle: int) -> int:
        return self._info[handle][1]

    def handle_type(self, handle: int) -> str:
        return self._info[handle][0]


def build_choice_trie(paths_by_type: Iterable[tuple[Path, PevType]]) -> ChoiceTrie:
    trie = ChoiceTrie()
    for path, t in paths_by_type:
        trie.add_path(path, t)
    return trie


def densify(net: TransportNetwork, max_arc_km: float) -> TransportNetwork:
    """Split arcs longer than ``max_arc_km`` with equally spaced auxiliary nodes.

    Auxiliary nodes carry zero weight and zero spare substation capacity;
    original node ids are preserved, so pairwise distances between
    original nodes are unchanged.
    """
    if max_arc_km <= 0:
        raise ValidationError("max_arc_km must be positive")
    nodes = list(net.nodes.values())
    arcs: list[Arc] = []
    next_id = max(net.nodes) + 1 if net.nodes else 0
    for arc in net.arcs:
        segments = math.ceil(arc.length_km / max_arc_km - 1e-12)
        if segments <= 1:
            arcs.append(arc)
            continue
        seg_len = arc.length_km / segments
        chain = [arc.a]
        for _ in range(segments - 1):
            nodes.append(TransportNode(next_id, weight=0.0,
                                       spare_substation_kva=0.0, auxiliary=True))
            chain.append(next_id)
            next_id += 1
        chain.append(arc.b)
        for a, b in zip(chain, chain[1:]):
            arcs.append(Arc(a, b, seg_len))
    return TransportNetwork(nodes, arcs)


def gravity_od_flows(net: TransportNetwork, total_daily_flow: float,
                     exponent: float = 2.0) -> dict[tuple[int, int], float]:
    """Gravity-model OD flows over ordered pairs of original weighted nodes.

    flow(o, d) is proportional to W_o * W_d / dist(o, d)**exponent and the
    table is normalized so the flows sum to ``total_daily_flow``.
    Disconnected pairs are excluded with a warning.
    """
    if total_daily_flow < 0:
        raise ValidationError("total_daily_flow must be non-negative")
    candidates = sorted(n.id for n in net.original_nodes() if net.nodes[n.id].weight > 0)
    raw: dict[tuple[int, int], float] = {}
    for o in candidates:
        dist = net.dijkstra(o)
        for d in candidates:
            if d == o:
                continue
            if d not in dist or not math.isfinite(dist[d]):
                warnings.warn(f"OD pair ({o},{d}) is disconnected; excluded")
                continue
            w = net.nodes[o].weight * net.nodes[d].weight
            raw[(o, d)] = w / dist[d] ** exponent
    total = sum(raw.values())
    if total == 0:
        return {k: 0.0 for k in raw}
    return {k: v / total * total_daily_flow for k, v in raw.items()}


def shortest_paths(net: TransportNetwork,
                   od_pairs: Sequence[tuple[int, int]],
                   od_flows: Mapping[tuple[int, int], float] | None = None,
                   types: Sequence[PevType] = ()) -> list[Path]:
    """One shortest path per OD pair, lexicographic node-id tie-break.

    When ``od_flows`` and ``types`` are given, each path carries a daily
    flow per type split by fleet share.
    """
    paths = []
    dist_cache: dict[int, dict[int, float]] = {}

    def dist_from(s: int) -> dict[int, float]:
        if s not in dist_cache:
            dist_cache[s] = net.dijkstra(s)
        return dist_cache[s]

    for o, d in od_pairs:
        fwd = dist_from(o)
        if d not in fwd:
            raise UnreachableODError(o, d)
        back = dist_from(d)
        total = fwd[d]
        tol = 1e-9 * max(1.0, total)
        seq = [o]
        pos = [0.0]
        cur = o
        while cur != d:
            nxt = None
            for nb, w in net.neighbors(cur):  # neighbors sorted by id
                if abs(pos[-1] + w + back.get(nb, math.inf) - total) <= tol:
                    nxt = (nb, w)
                    break
            if nxt is None:  # numerical corner: fall back to loosest match
                raise UnreachableODError(o, d)
            seq.append(nxt[0])
            pos.append(pos[-1] + nxt[1])
            cur = nxt[0]
        flow = {}
        if od_flows is not None:
            base = od_flows.get((o, d), 0.0)
            flow = {t.id: base * t.share for t in types}
        paths.append(Path(o, d, tuple(seq), tuple(pos), flow))
    return paths


@dataclass(frozen=True)
class Scenario:
    """One future scenario: probability, base-load profiles, traffic shape."""

    id: str
    probability: float
    traffic_shape: tuple[float, ...]
    base_load_kw: Mapping[int, tuple[float, ...]] = field(default_factory=dict)
    base_load_kvar: Mapping[int, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.probability <= 1:
            raise ValidationError(f"scenario {self.id}: bad probability")
        if len(self.traffic_shape) != HOURS_PER_DAY:
            raise ValidationError(f"scenario {self.id}: traffic shape must have 24 entries")
        if any(v < 0 for v in self.traffic_shape):
            raise ValidationError(f"scenario {self.id}: negative traffic shape entry")
        for prof in list(self.base_load_kw.values()) + list(self.base_load_kvar.values()):
            if len(prof) != HOURS_PER_DAY:
                raise ValidationError(f"scenario {self.id}: base-load profile must have 24 entries")

    def normalized_shape(self) -> tuple[float, ...]:
        s = sum(self.traffic_shape)
        if s == 0:
            return (0.0,) * HOURS_PER_DAY
        return tuple(v / s for v in self.traffic_shape)


def validate_scenarios(scenarios: Sequence[Scenario], tol: float = 1e-9) -> None:
    total = sum(s.probability for s in scenarios)
    if abs(total - 1.0) > tol:
        raise ValidationError(f"scenario probabilities sum to {total}, expected 1")


def temporal_node_rates(paths: Sequence[Path], scenarios: Sequence[Scenario],
                        speed_kmh: float = 100.0,
                        ) -> dict[tuple[int, int, str, str, int], float]:
    """Hourly Poisson rates per (path index, node, type, scenario, hour).

    A node ``pos`` km down a path sees the origin's departure-hour rate
    shifted by the whole hours of travel time, wrapping within the day,
    so the daily flow is conserved per path.  Zero entries are omitted.
    """
    if speed_kmh <= 0:
        raise ValidationError("speed_kmh must be positive")
    rates: dict[tuple[int, int, str, str, int], float] = {}
    for qi, path in enumerate(paths):
        for scen in scenarios:
            shape = scen.normalized_shape()
            for node, pos in zip(path.nodes, path.positions):
                shift = int(pos / speed_kmh)  # containing hour of the travel time
                for t in range(HOURS_PER_DAY):
                    w = shape[(t - shift) % HOURS_PER_DAY]
                    if w == 0:
                        continue
                    for type_id, daily in path.daily_flow.items():
                        lam = daily * w
                        if lam > 0:
                            rates[(qi, node, type_id, scen.id, t)] = lam
    return rates

import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pevplan.errors import (InfeasibleRangeError, UnreachableODError,
                            ValidationError)
from pevplan.transport import (Arc, ChoiceTrie, Path, PevType, Scenario,
                               TransportNetwork, TransportNode, augment,
                               densify, enumerate_subpaths, gravity_od_flows,
                               min_cover_witness, shortest_paths,
                               temporal_node_rates, validate_scenarios,
                               validate_type_shares)


def line_network(lengths):
    n = len(lengths) + 1
    nodes = [TransportNode(i, weight=1.0) for i in range(1, n + 1)]
    arcs = [Arc(i, i + 1, w) for i, w in enumerate(lengths, start=1)]
    return TransportNetwork(nodes, arcs)


def line_path(positions, flow=None):
    nodes = tuple(range(1, len(positions) + 1))
    return Path(nodes[0], nodes[-1], nodes, tuple(positions),
                flow or {})


class TestNetworkValidation:
    def test_duplicate_node(self):
        with pytest.raises(ValidationError):
            TransportNetwork([TransportNode(1), TransportNode(1)], [])

    def test_unknown_arc_endpoint(self):
        with pytest.raises(ValidationError):
            TransportNetwork([TransportNode(1)], [Arc(1, 2, 5.0)])

    def test_nonpositive_arc(self):
        with pytest.raises(ValidationError):
            TransportNetwork([TransportNode(1), TransportNode(2)],
                             [Arc(1, 2, 0.0)])

    def test_disconnected(self):
        with pytest.raises(ValidationError):
            TransportNetwork([TransportNode(1), TransportNode(2),
                              TransportNode(3)], [Arc(1, 2, 1.0)])

    def test_type_shares_must_sum_to_one(self):
        ts = [PevType("a", 100, 0.1, 0.6), PevType("b", 200, 0.1, 0.6)]
        with pytest.raises(ValidationError):
            validate_type_shares(ts)


class TestAugment:
    def test_pseudo_arc_lengths(self):
        p = line_path([0.0, 50.0, 120.0])
        ap = augment(p, PevType("t", 100, 0.14, 1.0), 30.0, 45.0)
        assert ap.entry_arc_km == 70.0
        assert ap.exit_arc_km == 45.0
        assert ap.positions == (0.0, 70.0, 120.0, 190.0, 235.0)

    def test_range_below_entry_margin(self):
        p = line_path([0.0, 10.0])
        with pytest.raises(InfeasibleRangeError):
            augment(p, PevType("t", 40, 0.14, 1.0), 50.0, 50.0)


class TestSubpathEnumeration:
    def test_reference_line_minimum_covers(self):
        # augmented positions (0,50,75,100,125,150,175,225): 50 km pseudo
        # arcs around a 6-node line with 25 km spacing, range 100 km
        p = line_path([0, 25, 50, 75, 100, 125])
        ap = augment(p, PevType("t", 100, 0.14, 1.0), 50.0, 50.0)
        assert ap.positions == (0, 50, 75, 100, 125, 150, 175, 225)
        cons = enumerate_subpaths(ap)
        size, covers = min_cover_witness(cons)
        assert size == 2
        assert sorted(covers) == [(1, 4), (2, 4), (2, 5), (3, 4), (3, 5),
                                  (3, 6)]

    def test_uncoverable_long_arc(self):
        p = line_path([0.0, 10.0, 400.0])
        ap = augment(p, PevType("t", 100, 0.14, 1.0), 50.0, 50.0)
        with pytest.raises(InfeasibleRangeError):
            enumerate_subpaths(ap)

    def test_short_path_needs_no_station(self):
        p = line_path([0.0, 30.0])
        ap = augment(p, PevType("t", 200, 0.14, 1.0), 100.0, 50.0)
        assert enumerate_subpaths(ap) == []

    @given(st.lists(st.floats(min_value=5.0, max_value=60.0),
                    min_size=2, max_size=9),
           st.floats(min_value=30.0, max_value=150.0),
           st.floats(min_value=0.0, max_value=1.0),
           st.floats(min_value=5.0, max_value=100.0))
    @settings(max_examples=80, deadline=None)
    def test_covering_equals_greedy_refueling(self, gaps, rng_km,
                                              margin_frac, exit_margin):
        """A set hits every violating window iff the drive completes."""
        positions = [0.0]
        for g in gaps:
            positions.append(positions[-1] + g)
        path = line_path(positions)
        t = PevType("t", rng_km, 0.2, 1.0)
        entry_margin = margin_frac * rng_km
        ap = augment(path, t, entry_margin, exit_margin)
        real = [False] + [True] * len(positions) + [False]
        pos = ap.positions
        interior = range(1, len(pos) - 1)
        try:
            cons = enumerate_subpaths(ap)
        except InfeasibleRangeError:
            assert not oracles.greedy_refuel(pos, real, set(interior), rng_km)
            return
        sets = [set(c.candidate_nodes) for c in cons]
        for k in range(len(positions) + 1):
            for combo in itertools.combinations(interior, k):
                # node id == augmented index for a line path built here
                hit = all(s & set(combo) for s in sets)
                drove = oracles.greedy_refuel(pos, real, set(combo), rng_km)
                assert hit == drove, (positions, rng_km, entry_margin,
                                      exit_margin, combo)


class TestChoiceTrie:
    def test_shared_prefix_handles(self):
        t = PevType("t", 300, 0.2, 1.0)
        p1 = Path(1, 4, (1, 2, 3, 4), (0.0, 10.0, 20.0, 30.0))
        p2 = Path(1, 5, (1, 2, 3, 5), (0.0, 10.0, 20.0, 30.0))
        trie = ChoiceTrie()
        h1 = trie.add_path(p1, t)
        h2 = trie.add_path(p2, t)
        assert h1[:3] == h2[:3]
        assert h1[3] != h2[3]
        assert trie.num_handles == 5

    def test_no_sharing_across_types_or_entries(self):
        ta = PevType("a", 300, 0.2, 0.5)
        tb = PevType("b", 200, 0.2, 0.5)
        p1 = Path(1, 3, (1, 2, 3), (0.0, 10.0, 20.0))
        p2 = Path(2, 3, (2, 3), (0.0, 10.0))
        trie = ChoiceTrie()
        assert trie.add_path(p1, ta) == [0, 1, 2]
        assert trie.add_path(p1, tb) == [3, 4, 5]
        assert trie.add_path(p2, ta) == [6, 7]
        assert trie.handle_node(1) == 2
        assert trie.handle_type(3) == "b"


class TestDensify:
    def test_splits_and_preserves_distances(self):
        net = TransportNetwork(
            [TransportNode(i, weight=1.0) for i in (1, 2, 3)],
            [Arc(1, 2, 70.0), Arc(2, 3, 20.0)])
        dense = densify(net, 25.0)
        assert max(a.length_km for a in dense.arcs) <= 25.0 + 1e-9
        added = [n for n in dense.nodes.values() if n.auxiliary]
        assert len(added) == 2
        assert all(n.weight == 0.0 for n in added)
        for o in (1, 2, 3):
            do, dd = net.dijkstra(o), dense.dijkstra(o)
            for d in (1, 2, 3):
                assert dd[d] == pytest.approx(do[d], abs=1e-9)

    @given(st.lists(st.floats(min_value=1.0, max_value=200.0),
                    min_size=1, max_size=6),
           st.floats(min_value=5.0, max_value=80.0))
    @settings(max_examples=60, deadline=None)
    def test_segment_count(self, lengths, cap):
        net = line_network(lengths)
        dense = densify(net, cap)
        expected = sum(math.ceil(w / cap - 1e-12) for w in lengths)
        assert len(dense.arcs) == expected


class TestGravity:
    def test_matches_floyd_warshall_oracle(self):
        nodes = [TransportNode(1, weight=3.0), TransportNode(2, weight=1.0),
                 TransportNode(3, weight=2.0), TransportNode(4, weight=4.0)]
        arcs = [Arc(1, 2, 10.0), Arc(2, 3, 20.0), Arc(2, 4, 15.0),
                Arc(3, 4, 12.0)]
        net = TransportNetwork(nodes, arcs)
        flows = gravity_od_flows(net, 20000.0, exponent=2.0)

        ids = [1, 2, 3, 4]
        dist = {(a, b): (0.0 if a == b else math.inf)
                for a in ids for b in ids}
        for a in arcs:
            dist[(a.a, a.b)] = min(dist[(a.a, a.b)], a.length_km)
            dist[(a.b, a.a)] = dist[(a.a, a.b)]
        for k in ids:
            for i in ids:
                for j in ids:
                    via = dist[(i, k)] + dist[(k, j)]
                    if via < dist[(i, j)]:
                        dist[(i, j)] = via
        w = {n.id: n.weight for n in nodes}
        raw = {(o, d): w[o] * w[d] / dist[(o, d)] ** 2
               for o in ids for d in ids if o != d}
        scale = 20000.0 / sum(raw.values())
        for k, v in raw.items():
            assert flows[k] == pytest.approx(v * scale, rel=1e-12)
        assert sum(flows.values()) == pytest.approx(20000.0)

    def test_zero_weight_nodes_excluded(self):
        net = TransportNetwork(
            [TransportNode(1, weight=1.0), TransportNode(2, weight=0.0),
             TransportNode(3, weight=1.0)],
            [Arc(1, 2, 10.0), Arc(2, 3, 10.0)])
        flows = gravity_od_flows(net, 100.0)
        assert set(flows) == {(1, 3), (3, 1)}


class TestShortestPaths:
    def test_lexicographic_tie_break(self):
        # diamond: two equal-length routes 1-2-4 and 1-3-4
        net = TransportNetwork(
            [TransportNode(i, weight=1.0) for i in (1, 2, 3, 4)],
            [Arc(1, 2, 10.0), Arc(1, 3, 10.0), Arc(2, 4, 10.0),
             Arc(3, 4, 10.0)])
        (p,) = shortest_paths(net, [(1, 4)])
        assert p.nodes == (1, 2, 4)

    def test_flow_split_by_share(self):
        net = line_network([25.0, 25.0])
        types = [PevType("a", 300, 0.2, 0.25), PevType("b", 200, 0.2, 0.75)]
        (p,) = shortest_paths(net, [(1, 3)], {(1, 3): 400.0}, types)
        assert p.daily_flow == {"a": 100.0, "b": 300.0}

    def test_unreachable_od(self):
        net = line_network([25.0])
        with pytest.raises(UnreachableODError):
            shortest_paths(net, [(1, 9)])


class TestScenarios:
    def test_probability_sum_validation(self):
        shape = tuple([1.0] * 24)
        s1 = Scenario("a", 0.5, shape)
        s2 = Scenario("b", 0.4, shape)
        with pytest.raises(ValidationError):
            validate_scenarios([s1, s2])
        validate_scenarios([s1, Scenario("b", 0.5, shape)])

    def test_shape_length_validation(self):
        with pytest.raises(ValidationError):
            Scenario("a", 1.0, (1.0,) * 23)

    def test_temporal_rates_conserve_daily_flow(self):
        shape = tuple(float(i % 5) for i in range(24))
        scen = Scenario("wd", 1.0, shape)
        p = line_path([0.0, 120.0, 260.0], flow={"t": 480.0})
        rates = temporal_node_rates([p], [scen], speed_kmh=100.0)
        for node in p.nodes:
            total = sum(v for (qi, n, tid, sid, t), v in rates.items()
                        if n == node)
            assert total == pytest.approx(480.0)

    def test_temporal_rates_shift_by_travel_time(self):
        shape = tuple(1.0 if t == 6 else 0.0 for t in range(24))
        scen = Scenario("wd", 1.0, shape)
        p = line_path([0.0, 250.0], flow={"t": 100.0})
        rates = temporal_node_rates([p], [scen], speed_kmh=100.0)
        assert rates[(0, 1, "t", "wd", 6)] == pytest.approx(100.0)
        # 250 km at 100 km/h falls in the third hour after departure
        assert rates[(0, 2, "t", "wd", 8)] == pytest.approx(100.0)

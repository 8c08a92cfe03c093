import math

import numpy as np
import pytest

from conftest import bidirectional_chain, duplex, oracle_throughput, small_random
from ra_numopt.network import (
    DegenerateInstanceError,
    GenConfig,
    ProbAssignment,
    RateVector,
    Session,
    SessionSet,
    Topology,
    generate_sessions,
    generate_topology,
    link_throughput,
    mac_utility,
    shortest_route,
    total_energy,
    transport_utility,
)


class TestTopology:
    def test_duplex_sets(self):
        t = duplex()
        assert t.links == [(1, 2), (2, 1)]
        assert t.interference_out == (frozenset({1}), frozenset({0}))
        assert t.out_degree.tolist() == [1, 1]
        assert t.in_degree.tolist() == [1, 1]

    def test_derived_sets_consistent(self):
        t = small_random(5, 3)
        for i in range(t.n):
            O = {int(t.dst[k]) for k in t.out_links[i]}
            assert O == {int(b) for a, b in zip(t.src, t.dst) if a == i}
            assert O <= t.interference_out[i]
            assert t.interference_in[i] == {j for j in range(t.n) if i in t.interference_out[j]}

    def test_receiver_must_hear(self):
        with pytest.raises(ValueError, match="does not hear"):
            Topology.from_spec([1, 2], [(1, 2)], interference_out={1: [], 2: []})

    @pytest.mark.parametrize(
        "kwargs, msg",
        [
            (dict(node_ids=[1, 2], links={(1, 2): 0.0}), "capacities"),
            (dict(node_ids=[1, 2], links=[(1, 2)], energy=0.0), "energies"),
            (dict(node_ids=[1, 2], links=[(1, 1)]), "self-loops"),
            (dict(node_ids=[1, 2], links=[(1, 3)]), "unknown node"),
        ],
    )
    def test_invalid(self, kwargs, msg):
        with pytest.raises(ValueError, match=msg):
            Topology.from_spec(**kwargs)

    def test_interference_load_counts(self):
        # duplex: C = |I_2| + |I_1| - |O_1| = 1
        assert duplex().interference_load.tolist() == [1, 1]


class TestGenerator:
    def test_two_nodes_full_range(self):
        t = generate_topology(GenConfig(2, 0.9, 0.95, seed=1))
        assert t.links == [(0, 1), (1, 0)]
        assert t.interference_out == (frozenset({1}), frozenset({0}))

    def test_deterministic(self):
        a = generate_topology(GenConfig(100, seed=7))
        b = generate_topology(GenConfig(100, seed=7))
        assert a.links == b.links
        assert np.array_equal(a.positions, b.positions)
        assert a.interference_out == b.interference_out
        c = generate_topology(GenConfig(100, seed=8))
        assert a.links != c.links

    def test_no_isolated_and_strongly_connected(self):
        for seed in range(5):
            t = generate_topology(GenConfig(30, 0.3, 0.45, seed=seed))
            assert not t.isolated_nodes()
            assert t.is_strongly_connected()

    def test_ranges_respected(self):
        t = generate_topology(GenConfig(40, seed=2))
        d = np.hypot(*(t.positions[t.src] - t.positions[t.dst]).T)
        assert np.all(d <= 0.25 + 1e-12)

    def test_larger_interference_radius(self):
        cfg = GenConfig(30, 0.3, 0.45, interference_equals_communication=False, interference_scale=1.5, seed=4)
        t = generate_topology(cfg)
        strict = 0
        for i in range(t.n):
            O = {int(t.dst[k]) for k in t.out_links[i]}
            assert O <= t.interference_out[i]
            strict += O < t.interference_out[i]
        assert strict > 0

    @pytest.mark.parametrize(
        "kwargs", [dict(node_count=1), dict(node_count=5, cf_low=0.3, cf_high=0.2), dict(node_count=5, cf_low=0.0)]
    )
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            GenConfig(**kwargs)

    def test_retries_exhausted(self):
        with pytest.raises(DegenerateInstanceError):
            generate_topology(GenConfig(50, 0.01, 0.02, max_retries=3))


class TestSessions:
    def test_duplex_single_session(self):
        s = generate_sessions(duplex(), 1, seed=0)
        assert s.sessions[0].route in (((1, 2),), ((2, 1),))

    def test_chain_route(self):
        t = Topology.from_spec([1, 2, 3], [(1, 2), (2, 3)])
        assert shortest_route(t, 1, 3) == [(1, 2), (2, 3)]
        assert shortest_route(t, 3, 1) is None

    def test_lexicographic_tie_break(self):
        # two 2-hop paths 1-2-4 and 1-3-4; the smaller intermediate id wins
        t = Topology.from_spec([1, 2, 3, 4], [(1, 3), (1, 2), (2, 4), (3, 4)])
        assert shortest_route(t, 1, 4) == [(1, 2), (2, 4)]

    def test_reverse_index_exact(self):
        t = generate_topology(GenConfig(10, 0.3, 0.45, seed=0))
        s = generate_sessions(t, 3, seed=0)
        for k, link in enumerate(t.links):
            for pos, sess in enumerate(s.sessions):
                assert (pos in s.sessions_on_link[k]) == (link in sess.route)
                assert (s.routing[k, pos] == 1) == (link in sess.route)

    def test_deterministic(self):
        t = generate_topology(GenConfig(20, 0.3, 0.45, seed=1))
        a = generate_sessions(t, 4, seed=3)
        b = generate_sessions(t, 4, seed=3)
        assert a.sessions == b.sessions

    def test_invalid_routes(self):
        t = bidirectional_chain(3)
        with pytest.raises(ValueError, match="missing link"):
            SessionSet(t, (Session(0, ((1, 3),)),))
        with pytest.raises(ValueError, match="connected"):
            SessionSet(t, (Session(0, ((1, 2), (1, 2))),))
        with pytest.raises(ValueError, match="empty"):
            SessionSet(t, (Session(0, ()),))


class TestPrimitives:
    def test_throughput_substitution(self):
        # c = 1, p_ij = 0.5, P_j = 0.5, N_j^in = {i}
        t = duplex()
        x = link_throughput(t, ProbAssignment(t, [0.5, 0.5]))
        assert x == pytest.approx([0.25, 0.25], abs=1e-15)

    def test_zero_probability_zero_throughput(self):
        t = small_random(4, 1)
        p = np.full(t.m, 0.1)
        p[0] = 0.0
        assert link_throughput(t, ProbAssignment(t, p))[0] == 0.0

    def test_duplex_optimum_values(self):
        t = duplex()
        P = (3 - math.sqrt(5)) / 2
        a = ProbAssignment(t, [P, P])
        x = link_throughput(t, a)
        assert x[0] == pytest.approx(P * (1 - P), abs=1e-15)
        assert x[0] == pytest.approx(0.236068, abs=1e-6)
        assert total_energy(t, a) == pytest.approx(0.763932, abs=1e-6)
        assert mac_utility(x) == pytest.approx(2 * math.log(P * (1 - P)), abs=1e-14)
        assert mac_utility(x) == pytest.approx(-2.88727, abs=1e-5)

    def test_throughput_matches_oracle(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            t = generate_topology(GenConfig(15, 0.2, 0.4, seed=seed))
            p = rng.uniform(0, 1, t.m) / t.out_degree[t.src]
            assert np.allclose(link_throughput(t, ProbAssignment(t, p)), oracle_throughput(t, p), rtol=1e-13, atol=0)

    def test_energy(self):
        t = Topology.from_spec([1, 2], [(1, 2), (2, 1)], energy={1: 2.0, 2: 1.0})
        assert total_energy(t, ProbAssignment(t, [0.25, 0.0])) == pytest.approx(0.5)
        assert total_energy(t, ProbAssignment(t, [0.0, 0.0])) == 0.0

    def test_mac_utility(self):
        assert mac_utility([1.0]) == 0.0
        assert mac_utility([math.e, math.e]) == pytest.approx(2.0)
        with pytest.raises(ValueError):
            mac_utility([0.5, 0.0])

    def test_transport_utility(self):
        assert transport_utility(RateVector([1.0])) == 0.0
        assert transport_utility(np.full(3, math.e)) == pytest.approx(3.0)
        assert transport_utility(RateVector([1.0 / 0.5])) == pytest.approx(math.log(2))
        with pytest.raises(ValueError):
            transport_utility(RateVector([1.0, -1.0]))

    def test_assignment_invariants(self):
        t = bidirectional_chain(3)
        with pytest.raises(ValueError, match="outside"):
            ProbAssignment(t, [1.2, 0, 0, 0])
        with pytest.raises(ValueError, match="exceeds"):
            ProbAssignment(t, [0.1, 0.6, 0.6, 0.1])  # node 2 has links to 1 and 3
        loose = ProbAssignment(t, [0.1, 0.6, 0.6, 0.1], strict=False)
        assert loose.violations()

    def test_equal_split(self):
        t = generate_topology(GenConfig(20, 0.3, 0.45, seed=0))
        i = int(np.argmax(t.out_degree))
        P = np.full(t.n, 0.2)
        P[i] = 0.6
        a = ProbAssignment.from_node_probabilities(t, P)
        assert np.allclose(a.p[t.out_links[i]], 0.6 / t.out_degree[i])
        assert np.allclose(a.P, P)

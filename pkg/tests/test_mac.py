import math

import numpy as np
import pytest

from conftest import bidirectional_chain, duplex, oracle_counts, oracle_node_root, small_random
from ra_numopt.mac import (
    TradeoffWeights,
    brute_force_mac,
    mac_coefficients,
    mac_curvature,
    mac_gradient,
    mac_objective,
    mac_objective_direct,
    pareto_sweep_mac,
    solve_mac,
    solve_node_probabilities,
    solve_node_probability,
    stationarity_residual,
    weight_grid,
)
from ra_numopt.network import (
    DegenerateInstanceError,
    GenConfig,
    ProbAssignment,
    Topology,
    generate_topology,
    link_throughput,
    mac_utility,
    total_energy,
)

GOLDEN = (3 - math.sqrt(5)) / 2


class TestWeights:
    @pytest.mark.parametrize("l1, l2", [(-1, 1), (1, -1), (0, 0), (math.nan, 1), (1, math.inf)])
    def test_invalid(self, l1, l2):
        with pytest.raises(ValueError):
            TradeoffWeights(l1, l2)

    def test_ratio(self):
        assert TradeoffWeights(2, 4).ratio == 0.5
        assert TradeoffWeights(1, 0).ratio == math.inf


class TestCoefficients:
    def test_duplex(self):
        co = mac_coefficients(duplex(), TradeoffWeights(1, 1))
        assert co.A.tolist() == [1, 1] and co.B.tolist() == [1, 1] and co.C.tolist() == [1, 1]

    def test_zero_energy_weight(self):
        co = mac_coefficients(small_random(4, 0), TradeoffWeights(0, 1))
        assert np.all(co.A == 0)

    def test_flags_lonely_transmitter(self):
        # node 0 is the only transmitter heard by node 1 and hears no one
        t = Topology.from_spec([0, 1], [(0, 1)])
        co = mac_coefficients(t, TradeoffWeights(1, 1))
        assert co.C[0] == 0 and co.degenerate[0]

    def test_against_counts(self):
        for seed in range(10):
            t = generate_topology(GenConfig(12, 0.3, 0.5, seed=seed))
            O, I, S = oracle_counts(t)
            co = mac_coefficients(t, TradeoffWeights(2.0, 3.0))
            for k, nid in enumerate(t.node_ids):
                assert co.A[k] == 2.0 * t.energy[k]
                assert co.B[k] == 3.0 * O[nid]
                assert co.C[k] == 3.0 * (S[nid] + I[nid] - O[nid])
                assert co.C[k] >= 0


class TestNodeRoot:
    def test_golden(self):
        assert abs(solve_node_probability(1, 1, 1) - GOLDEN) <= 1e-12

    def test_pure_utility(self):
        assert solve_node_probability(0, 1, 1) == 0.5

    def test_pure_energy(self):
        assert solve_node_probability(1, 0, 1) == 0.0

    def test_no_interference(self):
        assert solve_node_probability(4, 1, 0) == 0.25
        assert solve_node_probability(0.5, 1, 0) == 1.0
        assert solve_node_probability(0, 1, 0) == 1.0

    def test_all_zero(self):
        with pytest.raises(ValueError):
            solve_node_probability(0, 0, 0)

    def test_against_quadratic(self):
        rng = np.random.default_rng(1)
        A, B, C = rng.uniform(0.01, 50, (3, 500))
        got = solve_node_probabilities(A, B, C)
        want = np.array([oracle_node_root(*v) for v in zip(A, B, C)])
        assert np.max(np.abs(got - want)) <= 1e-11


class TestSolveMac:
    def test_duplex(self):
        a = solve_mac(duplex(), TradeoffWeights(1, 1))
        assert np.allclose(a.p, GOLDEN, atol=1e-12, rtol=0)

    def test_equal_split(self):
        t = generate_topology(GenConfig(30, 0.3, 0.45, seed=0))
        a = solve_mac(t, TradeoffWeights(1, 1))
        for i, links in enumerate(t.out_links):
            assert np.allclose(a.p[links], a.P[i] / len(links), rtol=1e-15)

    def test_pure_utility_closed_form(self):
        for seed in range(5):
            t = generate_topology(GenConfig(20, 0.3, 0.45, seed=seed))
            O, I, S = oracle_counts(t)
            a = solve_mac(t, TradeoffWeights(0, 1))
            want = [O[nid] / (S[nid] + I[nid]) for nid in t.node_ids]
            assert np.allclose(a.P, want, rtol=1e-15, atol=0)

    def test_isolated_node(self):
        t = Topology.from_spec([1, 2, 3], [(1, 2), (2, 1), (1, 3)])
        with pytest.raises(DegenerateInstanceError, match="isolated"):
            solve_mac(t, TradeoffWeights(1, 1))

    def test_stationarity_certificate(self):
        for seed in range(5):
            t = generate_topology(GenConfig(100, seed=seed))
            w = TradeoffWeights(1 + seed, 1)
            assert stationarity_residual(t, w, solve_mac(t, w)) <= 1e-8

    def test_saturation_warning(self, caplog):
        t = Topology.from_spec([0, 1], [(0, 1), (1, 0)], interference_out={0: [1], 1: [0]})
        # node 0 hears no one and node 1 hears only node 0, so C_0 = 0
        lonely = Topology.from_spec([0, 1, 2, 3], [(0, 1), (1, 2), (2, 3), (3, 2)])
        with caplog.at_level("WARNING"):
            a = solve_mac(lonely, TradeoffWeights(0, 1))
        assert a.P[0] == 1.0
        assert "saturate" in caplog.text
        assert solve_mac(t, TradeoffWeights(0, 1)).P.tolist() == [0.5, 0.5]


class TestObjective:
    def test_duplex_value(self):
        t = duplex()
        w = TradeoffWeights(1, 1)
        f = mac_objective(t, w, solve_mac(t, w))
        want = 2 * GOLDEN - 2 * math.log(GOLDEN * (1 - GOLDEN))
        assert f == pytest.approx(want, rel=1e-14)
        assert f == pytest.approx(3.65120, abs=1e-5)

    def test_boundary_weights(self):
        t = small_random(4, 2)
        a = ProbAssignment.from_node_probabilities(t, np.full(t.n, 0.2))
        assert mac_objective(t, TradeoffWeights(3, 0), a) == pytest.approx(3 * total_energy(t, a))
        assert mac_objective(t, TradeoffWeights(0, 1), a) == pytest.approx(-mac_utility(link_throughput(t, a)))

    def test_two_forms_agree(self):
        rng = np.random.default_rng(3)
        for seed in range(20):
            t = generate_topology(GenConfig(15, 0.3, 0.5, seed=seed))
            w = TradeoffWeights(rng.uniform(0, 5), rng.uniform(0.1, 3))
            a = ProbAssignment.from_node_probabilities(t, rng.uniform(0.01, 0.99, t.n))
            f1, f2 = mac_objective(t, w, a), mac_objective_direct(t, w, a)
            assert abs(f1 - f2) <= 1e-9 * max(1.0, abs(f2))

    def test_boundary_rejected(self):
        t = duplex()
        with pytest.raises(ValueError):
            mac_objective(t, TradeoffWeights(1, 1), ProbAssignment(t, [1.0, 0.5]))


class TestGradient:
    def test_zero_at_root(self):
        g = mac_gradient(duplex(), TradeoffWeights(1, 1), [GOLDEN, GOLDEN])
        assert np.max(np.abs(g)) < 1e-6

    def test_tends_to_minus_infinity(self):
        t = duplex()
        w = TradeoffWeights(1, 1)
        vals = [mac_gradient(t, w, [P, 0.5])[0] for P in (1e-2, 1e-4, 1e-8)]
        assert vals[0] > vals[1] > vals[2] and vals[2] < -1e7

    def test_boundary_rejected(self):
        with pytest.raises(ValueError):
            mac_gradient(duplex(), TradeoffWeights(1, 1), [0.0, 0.5])

    def test_curvature_positive(self):
        t = small_random(4, 5)
        P = np.random.default_rng(0).uniform(0.01, 0.99, (50, t.n))
        assert all(np.all(mac_curvature(t, TradeoffWeights(1, 1), row) > 0) for row in P)


class TestSweep:
    def test_sorted_and_monotone(self):
        t = generate_topology(GenConfig(100, seed=3))
        pts = pareto_sweep_mac(t, list(reversed(weight_grid(range(31)))))
        assert [p.lambda1 for p in pts] == list(range(31))
        for a, b in zip(pts, pts[1:]):
            assert b.energy <= a.energy and b.utility <= a.utility

    def test_endpoints(self):
        t = generate_topology(GenConfig(30, 0.3, 0.45, seed=1))
        pts = pareto_sweep_mac(t, [TradeoffWeights(0, 1), TradeoffWeights(1e9, 1), TradeoffWeights(1, 0)])
        assert pts[0].utility == max(p.utility for p in pts)
        assert pts[1].energy < 1e-6
        assert pts[-1].energy == 0.0 and pts[-1].utility == -math.inf


class TestBruteForce:
    def test_duplex(self):
        a = brute_force_mac(duplex(), TradeoffWeights(1, 1), grid_step=1e-3)
        assert np.all(np.abs(a.P - GOLDEN) <= 1e-3)

    def test_energy_only(self):
        a = brute_force_mac(duplex(), TradeoffWeights(1, 0), grid_step=1e-3)
        assert np.allclose(a.P, 1e-3)

    def test_chain_not_better_than_solver(self):
        t = bidirectional_chain(3)
        w = TradeoffWeights(1, 1)
        fb = mac_objective(t, w, brute_force_mac(t, w))
        fs = mac_objective(t, w, solve_mac(t, w))
        assert fs <= fb + 1e-12
        assert fb - fs <= 5e-3

    def test_exhaustive_lattice_point(self):
        # the result lies on the lattice and beats its lattice neighbours
        t = small_random(3, 4)
        w = TradeoffWeights(2, 1)
        a = brute_force_mac(t, w, grid_step=1e-3)
        k = np.round(a.P / 1e-3)
        assert np.allclose(k * 1e-3, a.P)
        f0 = mac_objective(t, w, a)
        for i in range(t.n):
            for d in (-1, 1):
                kk = k.copy()
                kk[i] += d
                if 1 <= kk[i] <= 1000 and kk[i] < 1000:
                    b = ProbAssignment.from_node_probabilities(t, kk * 1e-3)
                    assert mac_objective(t, w, b) >= f0 - 1e-12

    def test_too_large(self):
        with pytest.raises(ValueError):
            brute_force_mac(generate_topology(GenConfig(6, 0.5, 0.9, seed=0)), TradeoffWeights(1, 1))

import json
import math

import cvxpy as cp
import numpy as np
import pytest

from conftest import bidirectional_chain, duplex, fig2_instance
from ra_numopt.crosslayer import centralized_solve, max_violation
from ra_numopt.experiments import (
    ExperimentSpec,
    SpecError,
    compare_baselines,
    crosslayer_sweep,
    fair_rates,
    layer_by_layer_solve,
    optimal_energy_at_utility,
    relative_utility,
    run_experiment,
    uniform_link_baseline,
    uniform_node_baseline,
    utility_of,
)
from ra_numopt.io import read_csv
from ra_numopt.mac import TradeoffWeights, solve_mac, weight_grid
from ra_numopt.network import GenConfig, Session, SessionSet, Topology, generate_topology, total_energy


class TestBaselines:
    def test_duplex_all_agree(self):
        # one link per node: both baselines are the symmetric optimum family;
        # the default target sits on the flat utility peak, where a utility
        # error of 1e-15 moves P by about 3e-8
        t = duplex()
        rec = compare_baselines(t)
        assert rec.node_ratio == pytest.approx(1.0, abs=1e-6)
        assert rec.link_ratio == pytest.approx(1.0, abs=1e-6)
        assert rec.target_utility == pytest.approx(2 * math.log(0.25), abs=1e-9)
        rec = compare_baselines(t, target_utility=-4.0)
        assert rec.node_ratio == pytest.approx(1.0, abs=1e-12)

    def test_equal_degree_node_equals_link(self):
        # in a bidirectional ring every node has two links
        n = 6
        links = [(i, (i + 1) % n) for i in range(n)] + [((i + 1) % n, i) for i in range(n)]
        t = Topology.from_spec(list(range(n)), links)
        target = uniform_node_baseline(t).max_utility - 1.0
        node = uniform_node_baseline(t, target)
        link = uniform_link_baseline(t, target)
        assert node.energy == pytest.approx(link.energy, rel=1e-9)
        assert node.value == pytest.approx(2 * link.value, rel=1e-9)

    def test_matched_on_increasing_branch(self):
        t = generate_topology(GenConfig(30, 0.3, 0.45, seed=2))
        peak = uniform_node_baseline(t)
        assert not peak.matched
        b = uniform_node_baseline(t, peak.max_utility - 5.0)
        assert b.matched and b.value < peak.value
        assert b.utility == pytest.approx(peak.max_utility - 5.0, abs=1e-9)

    def test_unreachable_target(self):
        t = generate_topology(GenConfig(30, 0.3, 0.45, seed=2))
        b = uniform_link_baseline(t, 1e9)
        assert not b.matched and b.utility == b.max_utility

    def test_optimal_energy_matches_target(self):
        t = generate_topology(GenConfig(30, 0.3, 0.45, seed=3))
        target = utility_of(t, solve_mac(t, TradeoffWeights(4.0, 1.0)))
        l1, a = optimal_energy_at_utility(t, target)
        assert l1 == pytest.approx(4.0, rel=1e-8)
        with pytest.raises(ValueError):
            optimal_energy_at_utility(t, utility_of(t, solve_mac(t, TradeoffWeights(0, 1))) + 1.0)

    def test_ordering_on_random_instances(self):
        for seed in range(3):
            rec = compare_baselines(generate_topology(GenConfig(100, seed=seed)))
            assert rec.optimal_energy <= rec.node_energy <= rec.link_energy


def fair_oracle(sessions, x):
    y = cp.Variable(len(sessions))
    prob = cp.Problem(cp.Maximize(cp.sum(cp.log(y))), [sessions.routing @ y <= x])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return np.asarray(y.value)


class TestFairRates:
    def test_single_link(self):
        t = duplex()
        s = SessionSet(t, (Session(0, ((1, 2),)),))
        y, _, _ = fair_rates(s, [0.5, 0.3], TradeoffWeights(1, 1))
        assert y.y == pytest.approx([0.5], rel=1e-9)

    def test_shared_link_halves(self):
        t = bidirectional_chain(3)
        s = SessionSet(t, (Session(0, ((1, 2), (2, 3))), Session(1, ((2, 3),))))
        x = np.ones(t.m)
        y, _, _ = fair_rates(s, x, TradeoffWeights(1, 2))
        assert y.y == pytest.approx([0.5, 0.5], rel=1e-9)

    def test_against_convex_solver(self):
        rng = np.random.default_rng(0)
        for seed in range(3):
            t, s = fig2_instance(seed)
            x = rng.uniform(0.01, 0.3, t.m)
            y, _, _ = fair_rates(s, x, TradeoffWeights(1, 1))
            assert max_violation(s, x, y) <= 1e-12
            assert np.log(y.y).sum() == pytest.approx(np.log(fair_oracle(s, x)).sum(), abs=1e-9)

    def test_zero_throughput_rejected(self):
        t = duplex()
        s = SessionSet(t, (Session(0, ((1, 2),)),))
        with pytest.raises(ValueError):
            fair_rates(s, [0.0, 1.0], TradeoffWeights(1, 1))


class TestLayered:
    def test_joint_dominates(self):
        t, s = fig2_instance()
        for w in weight_grid([0, 1, 5, 20]):
            lay = layer_by_layer_solve(t, s, w)
            joint = centralized_solve(t, s, w)
            assert joint.objective <= lay.objective + 1e-9 * max(1, abs(lay.objective))

    def test_sweep_sorted(self):
        t, s = fig2_instance()
        pts = crosslayer_sweep(t, s, weight_grid([10, 0, 3]))
        assert [p.lambda1 for p in pts] == [0, 3, 10]
        assert pts[0].energy >= pts[1].energy >= pts[2].energy
        assert pts[0].energy == pytest.approx(total_energy(t, pts[0].assignment))

    def test_relative_utility(self):
        r = relative_utility([0.0, -2.0], 0.0, 2)
        assert r.tolist() == [1.0, pytest.approx(math.exp(-1))]


class TestSpec:
    @pytest.mark.parametrize(
        "data",
        [
            {},
            {"experiment": "nope"},
            {"experiment": "mac_frontier", "lambda1": []},
            {"experiment": "mac_frontier", "lambda1": [1, 1]},
            {"experiment": "mac_frontier", "lambda1": 3},
            {"experiment": "mac_frontier", "lambda2": 0},
            {"experiment": "mac_frontier", "seeds": [1, 1]},
            {"experiment": "mac_frontier", "topology": {"file": "x"}},
            {"experiment": "mac_frontier", "bogus": 1},
            {"experiment": "convergence", "lambda1": [1, 2]},
            {"experiment": "convergence", "solver": {"alpha": -1}},
            {"experiment": "convergence", "solver": {"unknown": 1}},
            {"experiment": "crosslayer_frontier", "sessions": 0},
        ],
    )
    def test_rejects(self, data):
        with pytest.raises((SpecError, ValueError)):
            ExperimentSpec.from_dict(data)

    def test_defaults(self):
        s = ExperimentSpec.from_dict({"experiment": "convergence"})
        assert s.lambda1 == (5.0,) and s.sessions == 3
        assert s.topology["generate"]["node_count"] == 10
        m = ExperimentSpec.from_dict({"experiment": "mac_frontier"})
        assert m.lambda1 == tuple(float(v) for v in range(31)) and m.sessions is None


SMALL_SPECS = {
    "mac_frontier": {"experiment": "mac_frontier", "seeds": [0, 1], "lambda1": [0, 2, 8],
                     "topology": {"generate": {"node_count": 30, "cf_low": 0.3, "cf_high": 0.45}}},
    "crosslayer_frontier": {"experiment": "crosslayer_frontier", "seeds": [0, 1], "lambda1": [0, 2, 8]},
    "convergence": {"experiment": "convergence", "seeds": [0], "solver": {"max_iters": 60, "dual_every": 20}},
    "baseline_comparison": {"experiment": "baseline_comparison", "seeds": [0, 1],
                            "topology": {"generate": {"node_count": 30, "cf_low": 0.3, "cf_high": 0.45}}},
}


class TestRunExperiment:
    @pytest.mark.parametrize("name", sorted(SMALL_SPECS))
    def test_writes_artifacts(self, name, tmp_path):
        spec = dict(SMALL_SPECS[name], output_dir="out")
        res = run_experiment(spec, base_dir=tmp_path)
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["experiment"] == name
        for path in res.files.values():
            assert path.exists() and path.read_bytes().endswith(b"\n")
        if name == "mac_frontier":
            header, rows = read_csv(res.files["frontier.csv"])
            assert header[:2] == ["lambda1", "lambda2"] and len(rows) == 3
            assert summary["monotone"]
        if name == "crosslayer_frontier":
            assert summary["monotone"] and summary["joint_dominates"]
        if name == "baseline_comparison":
            assert summary["ordering_holds"]
        if name == "convergence":
            assert summary["runs"]["0"]["weak_duality_violations"] == 0

    def test_threads_do_not_change_output(self, tmp_path, monkeypatch):
        spec = SMALL_SPECS["mac_frontier"]
        monkeypatch.setenv("RA_NUMOPT_THREADS", "1")
        one = run_experiment(dict(spec, output_dir="a"), base_dir=tmp_path)
        monkeypatch.setenv("RA_NUMOPT_THREADS", "4")
        four = run_experiment(dict(spec, output_dir="b"), base_dir=tmp_path)
        for name in one.files:
            assert one.files[name].read_bytes() == four.files[name].read_bytes()

    def test_inline_instance(self, tmp_path):
        from ra_numopt.io import instance_document
        from ra_numopt.network import generate_sessions

        t = generate_topology(GenConfig(10, 0.3, 0.45, seed=5))
        doc = instance_document(t, generate_sessions(t, 2, 5))
        spec = {"experiment": "crosslayer_frontier", "lambda1": [1, 4], "topology": {"inline": doc},
                "output_dir": "inline"}
        res = run_experiment(spec, base_dir=tmp_path)
        assert res.summary["joint_dominates"]

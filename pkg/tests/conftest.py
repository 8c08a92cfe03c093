"""Shared fixtures, independent oracles and the acceptance report hook."""
import math

import numpy as np
import pytest

from ra_numopt.crosslayer import distributed_solve
from ra_numopt.network import GenConfig, Topology, generate_sessions, generate_topology

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


# instances


def duplex(energy=1.0, capacity=1.0) -> Topology:
    return Topology.from_spec([1, 2], {(1, 2): capacity, (2, 1): capacity}, energy=energy)


def bidirectional_chain(n: int) -> Topology:
    links = [(i, i + 1) for i in range(1, n)] + [(i + 1, i) for i in range(1, n)]
    return Topology.from_spec(list(range(1, n + 1)), links)


def small_random(n: int, seed: int) -> Topology:
    return generate_topology(GenConfig(n, 0.5, 0.95, seed=seed))


def fig2_instance(seed: int = 0, sessions: int = 3):
    """Ten nodes, three sessions: the scale of the cross-layer example."""
    t = generate_topology(GenConfig(10, 0.3, 0.45, seed=seed))
    return t, generate_sessions(t, sessions, seed)


@pytest.fixture
def duplex_topology():
    return duplex()


# oracles written without the package's index structures


def oracle_throughput(topology: Topology, p) -> np.ndarray:
    """Link throughput from id-level neighbour sets and explicit products."""
    ids = topology.node_ids
    P = {nid: 0.0 for nid in ids}
    links = topology.links
    for (a, _), v in zip(links, p):
        P[a] += float(v)
    heard_by = {nid: set() for nid in ids}  # N_j^in
    for k, nid in enumerate(ids):
        for j in topology.interference_out[k]:
            heard_by[ids[j]].add(nid)
    out = []
    for (i, j), c, v in zip(links, topology.capacity, p):
        x = float(c) * float(v) * (1.0 - P[j])
        for l in sorted(heard_by[j] - {i}):
            x *= 1.0 - P[l]
        out.append(x)
    return np.array(out)


def oracle_node_root(A: float, B: float, C: float) -> float:
    """Smaller root of A P^2 - (A + B + C) P + B = 0, the stationarity
    condition multiplied through by P (1 - P).  Coefficients are scaled by
    A + B + C, the root is written as 2b / (1 + sqrt(d)) and the
    discriminant as (a - b)^2 + c^2 + 2c(a + b), which avoids cancellation
    for tiny A, tiny coefficients and near-double roots."""
    s = A + B + C
    a, b, c = A / s, B / s, C / s
    d = (a - b) ** 2 + c * c + 2.0 * c * (a + b)
    return 2.0 * b / (1.0 + math.sqrt(d))


def oracle_counts(topology: Topology):
    """|O_i|, |I_i| and sum_{k in N_i^out} |I_k| by direct set counting."""
    ids = topology.node_ids
    O = {nid: 0 for nid in ids}
    I = {nid: 0 for nid in ids}
    for a, b in topology.links:
        O[a] += 1
        I[b] += 1
    heard = {ids[k]: [ids[j] for j in s] for k, s in enumerate(topology.interference_out)}
    S = {nid: sum(I[k] for k in heard[nid]) for nid in ids}
    return O, I, S


def run_distributed(topology, sessions, weights, config=None):
    """distributed_solve plus the weak-duality invariant on its trace."""
    res = distributed_solve(topology, sessions, weights, config)
    bad = res.trace.weak_duality_violations()
    assert not bad, f"weak duality violated at rounds {bad[:5]}"
    return res

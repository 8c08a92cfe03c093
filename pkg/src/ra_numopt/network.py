"""Network model: topology, sessions, probability assignments and the
primitive quantities evaluated on them (link throughput, energy, utility).

Nodes carry arbitrary integer ids; internally everything is indexed by the
position of the id in ``Topology.node_ids`` (sorted ascending).  Links are
kept in canonical order, sorted by ``(from_id, to_id)``, and every per-link
array in the package is aligned with that order.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ra_numopt import kernels


class DegenerateInstanceError(ValueError):
    """Raised when an instance cannot be generated or is unusable."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Topology:
    """Nodes with per-packet energies, directed links with capacities, and
    interference (hearing) sets.

    Build instances with :meth:`from_spec`; the raw constructor expects
    already-indexed, canonically ordered arrays.
    """

    node_ids: tuple[int, ...]
    energy: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    capacity: np.ndarray
    interference_out: tuple[frozenset[int], ...]
    positions: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.node_ids)
        if n == 0:
            raise ValueError("topology has no nodes")
        if len(set(self.node_ids)) != n:
            raise ValueError("duplicate node ids")
        if self.energy.shape != (n,):
            raise ValueError("energy must have one entry per node")
        if not np.all(np.isfinite(self.energy)) or np.any(self.energy <= 0):
            raise ValueError("per-packet energies must be finite and > 0")
        if not (self.src.shape == self.dst.shape == self.capacity.shape):
            raise ValueError("link arrays must have equal length")
        if not np.all(np.isfinite(self.capacity)) or np.any(self.capacity <= 0):
            raise ValueError("link capacities must be finite and > 0")
        if np.any(self.src == self.dst):
            raise ValueError("self-loops are not allowed")
        if len(self.interference_out) != n:
            raise ValueError("interference_out must have one set per node")
        for i, heard in enumerate(self.interference_out):
            if i in heard:
                raise ValueError(f"node {self.node_ids[i]} cannot interfere with itself")
            if any(not 0 <= j < n for j in heard):
                raise ValueError("interference set refers to an unknown node")
        keys = list(zip(self.src.tolist(), self.dst.tolist()))
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate links")
        if keys != sorted(keys):
            raise ValueError("links must be in canonical (from, to) order")
        for i, j in keys:
            if j not in self.interference_out[i]:
                raise ValueError(
                    f"link ({self.node_ids[i]}, {self.node_ids[j]}): receiver does not hear transmitter"
                )

    @classmethod
    def from_spec(
        cls,
        node_ids: Sequence[int],
        links: Mapping[tuple[int, int], float] | Iterable[tuple[int, int]],
        energy: Mapping[int, float] | float = 1.0,
        interference_out: Mapping[int, Iterable[int]] | None = None,
        positions: Mapping[int, tuple[float, float]] | None = None,
        capacity: float = 1.0,
    ) -> "Topology":
        """Build a topology from id-keyed data.

        ``links`` is either a mapping ``(from, to) -> capacity`` or an iterable
        of pairs (all with ``capacity``).  When ``interference_out`` is omitted
        each node interferes exactly with the receivers of its links.
        """
        ids = tuple(sorted(int(i) for i in node_ids))
        index = {nid: k for k, nid in enumerate(ids)}
        if not isinstance(links, Mapping):
            links = {tuple(l): capacity for l in links}
        try:
            items = sorted((index[a], index[b], float(c)) for (a, b), c in links.items())
        except KeyError as exc:
            raise ValueError(f"link refers to unknown node {exc.args[0]}") from None
        if isinstance(energy, Mapping):
            e = [float(energy[i]) for i in ids]
        else:
            e = [float(energy)] * len(ids)
        if interference_out is None:
            heard = [set() for _ in ids]
            for a, b, _ in items:
                heard[a].add(b)
        else:
            heard = [set() for _ in ids]
            for nid, outs in interference_out.items():
                heard[index[nid]] = {index[j] for j in outs}
        pos = None
        if positions is not None:
            pos = _frozen([positions[i] for i in ids], float)
        return cls(
            node_ids=ids,
            energy=_frozen(e, float),
            src=_frozen([a for a, _, _ in items], np.intp),
            dst=_frozen([b for _, b, _ in items], np.intp),
            capacity=_frozen([c for _, _, c in items], float),
            interference_out=tuple(frozenset(h) for h in heard),
            positions=pos,
        )

    # sizes and lookups

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def m(self) -> int:
        return len(self.src)

    @cached_property
    def index(self) -> dict[int, int]:
        return {nid: k for k, nid in enumerate(self.node_ids)}

    @cached_property
    def links(self) -> list[tuple[int, int]]:
        """Links as ``(from_id, to_id)`` in canonical order."""
        ids = self.node_ids
        return [(ids[a], ids[b]) for a, b in zip(self.src.tolist(), self.dst.tolist())]

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        return {l: k for k, l in enumerate(self.links)}

    # derived neighbourhood sets (all by node index)

    @cached_property
    def out_links(self) -> tuple[np.ndarray, ...]:
        """Link indices leaving each node (the set O_i as links)."""
        order = np.argsort(self.src, kind="stable")
        bounds = np.searchsorted(self.src[order], np.arange(self.n + 1))
        return tuple(_frozen(order[bounds[i]:bounds[i + 1]], np.intp) for i in range(self.n))

    @cached_property
    def out_degree(self) -> np.ndarray:
        """|O_i|."""
        return _frozen(np.bincount(self.src, minlength=self.n), np.int64)

    @cached_property
    def in_degree(self) -> np.ndarray:
        """|I_i|."""
        return _frozen(np.bincount(self.dst, minlength=self.n), np.int64)

    @cached_property
    def interference_in(self) -> tuple[frozenset[int], ...]:
        """N_i^in: nodes whose transmissions reach i."""
        heard_by = [set() for _ in range(self.n)]
        for i, outs in enumerate(self.interference_out):
            for j in outs:
                heard_by[j].add(i)
        return tuple(frozenset(s) for s in heard_by)

    @cached_property
    def affect_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Per link (i, j): the nodes whose transmission destroys reception,
        i.e. ``{j} | N_j^in - {i}``, in CSR form ``(ptr, idx)``."""
        ptr = [0]
        idx: list[int] = []
        for i, j in zip(self.src.tolist(), self.dst.tolist()):
            idx.append(j)
            idx.extend(sorted(self.interference_in[j] - {i, j}))
            ptr.append(len(idx))
        return _frozen(ptr, np.intp), _frozen(idx, np.intp)

    @cached_property
    def interference_load(self) -> np.ndarray:
        """Number of log(1 - P_i) terms in the link utility:
        ``sum_{k in N_i^out} |I_k| + |I_i| - |O_i|``."""
        I = self.in_degree
        total = np.array([sum(int(I[k]) for k in outs) for outs in self.interference_out])
        return _frozen(total + I - self.out_degree, np.int64)

    @cached_property
    def source_matrix(self) -> csr_matrix:
        """Sparse (n x m) incidence mapping link probabilities to node sums."""
        return csr_matrix(
            (np.ones(self.m), (self.src, np.arange(self.m))), shape=(self.n, self.m)
        )

    def isolated_nodes(self) -> list[int]:
        return [self.node_ids[i] for i in np.flatnonzero(self.out_degree == 0)]

    def is_strongly_connected(self) -> bool:
        if self.n == 1:
            return True
        g = csr_matrix((np.ones(self.m), (self.src, self.dst)), shape=(self.n, self.n))
        ncomp, _ = connected_components(g, directed=True, connection="strong")
        return ncomp == 1


@dataclass(frozen=True)
class Session:
    id: int
    route: tuple[tuple[int, int], ...]

    @property
    def source(self) -> int:
        return self.route[0][0]

    @property
    def sink(self) -> int:
        return self.route[-1][1]


@dataclass(frozen=True, eq=False)
class SessionSet:
    """End-to-end sessions routed over a topology's links."""

    topology: Topology
    sessions: tuple[Session, ...]

    def __post_init__(self):
        ids = [s.id for s in self.sessions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate session ids")
        for s in self.sessions:
            if not s.route:
                raise ValueError(f"session {s.id} has an empty route")
            for a, b in s.route:
                if (a, b) not in self.topology.link_index:
                    raise ValueError(f"session {s.id} uses missing link ({a}, {b})")
            for (_, b), (c, _) in zip(s.route, s.route[1:]):
                if b != c:
                    raise ValueError(f"session {s.id}: route is not a connected path")

    def __len__(self):
        return len(self.sessions)

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.sessions]

    @cached_property
    def routes(self) -> tuple[np.ndarray, ...]:
        """Route of each session as link indices."""
        li = self.topology.link_index
        return tuple(_frozen([li[l] for l in s.route], np.intp) for s in self.sessions)

    @cached_property
    def routing(self) -> np.ndarray:
        """Dense (m x S) 0/1 routing matrix: entry (l, s) is 1 iff l is in L(s)."""
        R = np.zeros((self.topology.m, len(self.sessions)))
        for s, r in enumerate(self.routes):
            R[r, s] = 1.0
        R.setflags(write=False)
        return R

    @cached_property
    def sessions_on_link(self) -> tuple[tuple[int, ...], ...]:
        """Reverse index S(i, j) as session positions, per link."""
        out: list[list[int]] = [[] for _ in range(self.topology.m)]
        for s, r in enumerate(self.routes):
            for l in r.tolist():
                out[l].append(s)
        return tuple(tuple(v) for v in out)

    @cached_property
    def used_links(self) -> np.ndarray:
        return _frozen(np.flatnonzero(self.routing.sum(axis=1) > 0), np.intp)


class ProbAssignment:
    """Per-link persistence probabilities with derived node probabilities.

    ``strict=False`` skips the feasibility check; the distributed solver
    uses it to carry iterates that the two-step projection left with
    ``P_i > 1`` (they are reported, not repaired).
    """

    __slots__ = ("topology", "p", "_P")

    def __init__(self, topology: Topology, p, strict: bool = True, tol: float = 1e-12):
        p = np.array(p, dtype=float)
        if p.shape != (topology.m,):
            raise ValueError(f"expected {topology.m} link probabilities, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("link probabilities must be finite")
        p.setflags(write=False)
        self.topology = topology
        self.p = p
        self._P = None
        if strict:
            bad = self.violations(tol)
            if bad:
                raise ValueError("infeasible assignment: " + "; ".join(bad[:5]))

    @property
    def P(self) -> np.ndarray:
        if self._P is None:
            P = np.bincount(self.topology.src, weights=self.p, minlength=self.topology.n)
            P.setflags(write=False)
            self._P = P
        return self._P

    def violations(self, tol: float = 1e-12) -> list[str]:
        t = self.topology
        out = []
        for k in np.flatnonzero((self.p < -tol) | (self.p > 1 + tol)):
            out.append(f"p{t.links[k]} = {self.p[k]!r} outside [0, 1]")
        for i in np.flatnonzero(self.P > 1 + tol):
            out.append(f"P[{t.node_ids[i]}] = {self.P[i]!r} exceeds 1")
        return out

    @classmethod
    def from_node_probabilities(cls, topology: Topology, P) -> "ProbAssignment":
        """Equal split of each node's probability over its outgoing links."""
        P = np.asarray(P, dtype=float)
        deg = topology.out_degree[topology.src]
        return cls(topology, P[topology.src] / deg)

    def __repr__(self):
        return f"ProbAssignment(m={len(self.p)}, max P={self.P.max() if len(self.P) else 0:.6g})"


@dataclass(frozen=True, eq=False)
class RateVector:
    """Session rates y_s aligned with ``SessionSet.sessions``."""

    y: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("rates must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def z(self) -> np.ndarray:
        return np.log(self.y)


@dataclass(frozen=True)
class GenConfig:
    """Random geometric instance generator settings.

    Nodes are dropped uniformly in the unit square; node i's range is drawn
    uniformly from ``[cf_low, cf_high]`` (connectivity factor: range over
    network dimension).  With ``interference_equals_communication=False``
    a node is heard up to ``interference_scale`` times its range but only
    links within its range are created.
    """

    node_count: int
    cf_low: float = 0.15
    cf_high: float = 0.25
    interference_equals_communication: bool = True
    interference_scale: float = 1.5
    session_count: int = 0
    seed: int = 0
    capacity: float = 1.0
    energy: float = 1.0
    max_retries: int = 1000

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("node_count must be at least 2")
        if self.cf_high < self.cf_low:
            raise ValueError("cf_high < cf_low")
        if not 0 < self.cf_low <= self.cf_high < 1:
            raise ValueError("connectivity factors must satisfy 0 < low <= high < 1")
        if self.interference_scale < 1:
            raise ValueError("interference_scale must be >= 1")
        if self.session_count < 0 or self.max_retries < 1:
            raise ValueError("session_count must be >= 0 and max_retries >= 1")


def generate_topology(config: GenConfig) -> Topology:
    """Draw a strongly connected random geometric topology.

    Instances with isolated nodes (or that are not strongly connected) are
    redrawn from the same generator stream, up to ``config.max_retries``.
    """
    rng = np.random.default_rng(config.seed)
    n = config.node_count
    for _ in range(config.max_retries):
        pos = rng.uniform(0.0, 1.0, size=(n, 2))
        rng_range = rng.uniform(config.cf_low, config.cf_high, size=n)
        dist = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
        np.fill_diagonal(dist, np.inf)
        comm = dist <= rng_range[:, None]
        if config.interference_equals_communication:
            hear = comm
        else:
            hear = dist <= config.interference_scale * rng_range[:, None]
        src, dst = np.nonzero(comm)
        if np.any(np.bincount(src, minlength=n) == 0):
            continue
        topo = Topology(
            node_ids=tuple(range(n)),
            energy=_frozen(np.full(n, config.energy), float),
            src=_frozen(src, np.intp),
            dst=_frozen(dst, np.intp),
            capacity=_frozen(np.full(len(src), config.capacity), float),
            interference_out=tuple(frozenset(np.flatnonzero(row).tolist()) for row in hear),
            positions=_frozen(pos, float),
        )
        if topo.is_strongly_connected():
            return topo
    raise DegenerateInstanceError(
        f"no strongly connected instance without isolated nodes after {config.max_retries} draws"
    )


def shortest_route(topology: Topology, source: int, sink: int) -> list[tuple[int, int]] | None:
    """Hop-count shortest path, lexicographically smallest by node id.

    ``source``/``sink`` are node ids; returns links as id pairs, or None.
    """
    t = topology
    s, d = t.index[source], t.index[sink]
    succ = [sorted(t.dst[ls].tolist()) for ls in t.out_links]
    pred: list[list[int]] = [[] for _ in range(t.n)]
    for a, b in zip(t.src.tolist(), t.dst.tolist()):
        pred[b].append(a)
    # distances to the sink, then greedy smallest-id descent
    dist = np.full(t.n, -1)
    dist[d] = 0
    queue = deque([d])
    while queue:
        v = queue.popleft()
        for u in pred[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                queue.append(u)
    if dist[s] < 0 or s == d:
        return None
    path = [s]
    while path[-1] != d:
        v = path[-1]
        path.append(next(u for u in succ[v] if dist[u] == dist[v] - 1))
    ids = t.node_ids
    return [(ids[a], ids[b]) for a, b in zip(path, path[1:])]


def generate_sessions(topology: Topology, count: int, seed: int, max_retries: int = 1000) -> SessionSet:
    """Draw ``count`` distinct (source, sink) pairs and route each one."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count > topology.n * (topology.n - 1):
        raise ValueError("more sessions than ordered node pairs")
    rng = np.random.default_rng(seed)
    chosen: dict[tuple[int, int], list[tuple[int, int]]] = {}
    failures = 0
    while len(chosen) < count:
        a, b = rng.choice(topology.n, size=2, replace=False).tolist()
        pair = (topology.node_ids[a], topology.node_ids[b])
        if pair in chosen:
            continue
        route = shortest_route(topology, *pair)
        if route is None:
            failures += 1
            if failures >= max_retries:
                raise DegenerateInstanceError(f"no route for {failures} drawn pairs")
            continue
        chosen[pair] = route
    sessions = tuple(Session(id=k, route=tuple(r)) for k, r in enumerate(chosen.values()))
    return SessionSet(topology, sessions)


# primitive quantities


def reception_factor(topology: Topology, P) -> np.ndarray:
    """Per link (i, j): ``(1 - P_j) * prod_{l in N_j^in - {i}} (1 - P_l)``."""
    ptr, idx = topology.affect_csr
    return kernels.reception(np.ascontiguousarray(P, dtype=float), ptr, idx)


def link_throughput(topology: Topology, assignment: ProbAssignment) -> np.ndarray:
    """Expected successful packets per slot on every link."""
    return topology.capacity * assignment.p * reception_factor(topology, assignment.P)


def total_energy(topology: Topology, assignment: ProbAssignment) -> float:
    return float(topology.energy @ assignment.P)


def mac_utility(x) -> float:
    """Sum of natural logs of link throughputs."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("link utility undefined: some throughput is <= 0 (degenerate assignment)")
    return float(np.log(x).sum())


def transport_utility(rates: RateVector | np.ndarray) -> float:
    """Sum of natural logs of session rates."""
    y = rates.y if isinstance(rates, RateVector) else np.asarray(rates, dtype=float)
    if np.any(~(y > 0)):
        raise ValueError("transport utility undefined: some rate is <= 0")
    return float(np.log(y).sum())

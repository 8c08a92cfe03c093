"""Joint MAC and transport optimization.

Problem: minimize ``lambda1 * sum_i e_i P_i - lambda2 * sum_s log y_s``
subject to ``sum_{s in S(l)} y_s <= x_l(p)`` on every link and the
probability constraints.  Two solvers are provided:

* :func:`distributed_solve` -- price-based primal/dual iteration: link
  prices move with the overload on the link, session rates follow the
  route price in closed form, and link probabilities take one projected
  gradient step on the priced MAC subproblem per round.
* :func:`centralized_solve` -- the convex reformulation in ``z = log y``
  (log-sum-exp of session log-rates against log-throughput) handed to an
  interior-point conic solver, with KKT residuals checked afterwards.

:func:`dual_value` evaluates the Lagrange dual function.  Its MAC part is
multilinear in the per-node probability blocks, so its minimum sits at a
vertex (each node silent or transmitting on a single link); it is computed
by enumerating vertices per interference component, which keeps the value
a valid lower bound on every feasible objective.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ra_numopt import kernels
from ra_numopt.mac import TradeoffWeights
from ra_numopt.network import (
    ProbAssignment,
    RateVector,
    SessionSet,
    Topology,
    link_throughput,
    reception_factor,
    total_energy,
)

log = logging.getLogger(__name__)


class PriceDegeneracyError(ValueError):
    """A session's route price is zero, so its optimal rate is unbounded."""


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 1e-4
    gamma: float = 2.0
    max_iters: int = 2000
    change_tol: float = 1e-5
    change_window: int = 10
    feas_tol: float = 1e-4
    gap_tol: float = 1e-2
    cs_tol: float = 1e-3
    mu_floor: float = 1e-8
    init_p: float = 0.5
    init_mu: float = 1.0
    init: str = "uniform"
    seed: int = 0
    dual_every: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.gamma <= 0:
            raise ValueError("alpha must be >= 0 and gamma > 0")
        if min(self.change_tol, self.feas_tol, self.gap_tol, self.cs_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.mu_floor < 0 or self.init_mu <= 0:
            raise ValueError("mu_floor must be >= 0 and init_mu > 0")
        if not 0 < self.init_p < 1:
            raise ValueError("init_p must lie in (0, 1)")
        if self.init not in ("uniform", "random"):
            raise ValueError("init must be 'uniform' or 'random'")
        if self.max_iters < 1 or self.change_window < 1 or self.dual_every < 0:
            raise ValueError("max_iters and change_window must be >= 1, dual_every >= 0")


@dataclass(frozen=True, eq=False)
class DualState:
    """Link prices mu_l and, derived, the route price of each session."""

    mu: np.ndarray
    sessions: SessionSet

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.shape != (self.sessions.topology.m,):
            raise ValueError("one price per link required")
        if np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise ValueError("prices must be finite and nonnegative")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def mu_s(self) -> np.ndarray:
        return self.sessions.routing.T @ self.mu


# primitive steps


def update_rates(duals: DualState, weights: TradeoffWeights) -> RateVector:
    """Closed-form rate of each session: lambda2 over its route price."""
    if weights.lambda2 <= 0:
        raise ValueError("rate update needs lambda2 > 0")
    mu_s = duals.mu_s
    if np.any(mu_s <= 0):
        raise PriceDegeneracyError(f"zero route price for sessions {np.flatnonzero(mu_s <= 0).tolist()}")
    return RateVector(weights.lambda2 / mu_s)


def link_load(sessions: SessionSet, rates: RateVector) -> np.ndarray:
    """Aggregate session rate crossing each link."""
    return sessions.routing @ rates.y


def update_duals(duals: DualState, rates: RateVector, throughputs, gamma, mu_floor: float = 0.0) -> DualState:
    """Price step on the link overload, clipped at zero and then at ``mu_floor``.

    ``gamma`` may be a scalar or a per-link array.
    """
    if np.any(np.asarray(gamma) <= 0):
        raise ValueError("gamma must be positive")
    overload = link_load(duals.sessions, rates) - np.asarray(throughputs, dtype=float)
    mu = np.maximum(duals.mu + gamma * overload, 0.0)
    return DualState(np.maximum(mu, mu_floor), duals.sessions)


def throughput_partials(topology: Topology, assignment: ProbAssignment, link: tuple[int, int]) -> np.ndarray:
    """d x_st / d p_ij for every link (s, t), aligned with ``topology.links``.

    p_ij enters x_ij linearly and every other x_st through the factor
    (1 - P_i) whenever i is the receiver t or one of t's interferers.
    """
    if assignment.violations():
        raise ValueError("throughput partials need a feasible assignment")
    k = topology.link_index[link]
    i = int(topology.src[k])
    P = assignment.P
    ptr, idx = topology.affect_csr
    out = np.zeros(topology.m)
    for l in range(topology.m):
        aff = idx[ptr[l]:ptr[l + 1]]
        if l == k:
            out[l] = topology.capacity[l] * np.prod(1.0 - P[aff])
        elif i in aff:
            rest = aff[aff != i]
            out[l] = -topology.capacity[l] * assignment.p[l] * np.prod(1.0 - P[rest])
    return out


def lagrangian_gradient(topology: Topology, assignment: ProbAssignment, mu, weights: TradeoffWeights) -> np.ndarray:
    """Gradient in p of ``lambda1 * E - sum_l mu_l x_l(p)``."""
    P = np.ascontiguousarray(assignment.P)
    ptr, idx = topology.affect_csr
    R = kernels.reception(P, ptr, idx)
    w = np.ascontiguousarray(mu * topology.capacity * assignment.p)
    W = kernels.interference_weights(w, P, ptr, idx, topology.n)
    src = topology.src
    return weights.lambda1 * topology.energy[src] - mu * topology.capacity * R + W[src]


def project_probabilities(p) -> np.ndarray:
    """Two-step feasibility map for one node's outgoing link probabilities:
    shift all entries down equally when they sum above one, then clip each
    to [0, 1].  This is not the Euclidean projection and can leave the sum
    above one when the clip lifts negative entries."""
    p = np.array(p, dtype=float)
    total = p.sum()
    if total > 1.0:
        p = p - (total - 1.0) / len(p)
    return np.clip(p, 0.0, 1.0)


def project_all(topology: Topology, p) -> np.ndarray:
    """:func:`project_probabilities` applied to every node at once."""
    src = topology.src
    total = np.bincount(src, weights=p, minlength=topology.n)
    shift = np.where(total > 1.0, (total - 1.0) / np.maximum(topology.out_degree, 1), 0.0)
    return np.clip(p - shift[src], 0.0, 1.0)


def mac_gradient_step(
    topology: Topology,
    assignment: ProbAssignment,
    duals: DualState,
    weights: TradeoffWeights,
    alpha: float,
) -> ProbAssignment:
    """One synchronous projected gradient step on all link probabilities."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return assignment
    g = lagrangian_gradient(topology, assignment, duals.mu, weights)
    new = ProbAssignment(topology, project_all(topology, assignment.p - alpha * g), strict=False)
    bad = new.violations(1e-12)
    if bad:
        log.warning("projection left %d infeasible entries: %s", len(bad), bad[0])
    return new


# objective helpers


def crosslayer_objective(topology: Topology, weights: TradeoffWeights, assignment: ProbAssignment, rates) -> float:
    y = rates.y if isinstance(rates, RateVector) else np.asarray(rates, dtype=float)
    with np.errstate(divide="ignore"):
        util = np.log(y).sum() if np.all(y > 0) else -math.inf
    return float(weights.lambda1 * total_energy(topology, assignment) - weights.lambda2 * util)


def feasible_rates(sessions: SessionSet, x, rates: RateVector) -> RateVector:
    """Scale each session down by the worst load/throughput ratio on its route,
    which makes every link constraint hold."""
    load = sessions.routing @ rates.y
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(load > x, np.asarray(x) / load, 1.0)
    ratio = np.where(np.isnan(ratio), 0.0, ratio)
    scale = np.array([ratio[r].min() for r in sessions.routes]) if len(sessions) else np.ones(0)
    return RateVector(rates.y * np.clip(scale, 0.0, 1.0))


def max_violation(sessions: SessionSet, x, rates: RateVector) -> float:
    """Largest link overload, relative to max(1, x_l)."""
    if sessions.topology.m == 0:
        return 0.0
    over = np.maximum(sessions.routing @ rates.y - x, 0.0) / np.maximum(1.0, x)
    return float(over.max())


# dual function


class DualValue(NamedTuple):
    value: float
    mac_part: float
    transport_part: float
    exact: bool
    vertex: np.ndarray


def _transport_dual(sessions: SessionSet, weights: TradeoffWeights, mu) -> float:
    mu_s = sessions.routing.T @ mu
    if np.any(mu_s <= 0):
        raise PriceDegeneracyError("zero route price: transport dual is unbounded below")
    l2 = weights.lambda2
    return float(np.sum(l2 - l2 * np.log(l2 / mu_s)))


def _vertex_value(topology, cost, gain, choice, level):
    # choice[i] = link index node i transmits on (with probability `level`) or -1
    tx = choice >= 0
    P = np.where(tx, level, 0.0)
    p = np.zeros(topology.m)
    p[choice[tx]] = level
    R = reception_factor(topology, P)
    return float(cost @ P - gain @ (p * R))


def _enumerate_component(nodes, cand, aff_local, cost, gain, chunk=1 << 16):
    dims = [len(cand[a]) + 1 for a in nodes]
    total = int(np.prod(dims))
    best_val, best_row = math.inf, None
    for start in range(0, total, chunk):
        rows = np.arange(start, min(total, start + chunk))
        C = np.stack(np.unravel_index(rows, dims), axis=1)
        tx = C > 0
        val = tx.astype(float) @ cost[nodes]
        for a in range(len(nodes)):
            for c, k in enumerate(cand[nodes[a]], start=1):
                on = C[:, a] == c
                blocked = tx[:, aff_local[k]].any(axis=1) if len(aff_local[k]) else False
                val -= gain[k] * (on & ~blocked)
        r = int(np.argmin(val))
        if val[r] < best_val:
            best_val, best_row = float(val[r]), C[r]
    choice = {a: (cand[a][c - 1] if c > 0 else -1) for a, c in zip(nodes, best_row.tolist())}
    return best_val, choice


def _project_capped_simplex(v, cap):
    w = np.maximum(v, 0.0)
    if w.sum() <= cap:
        return w
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    hits = np.nonzero(u * np.arange(1, len(v) + 1) > (css - cap))[0]
    if len(hits) == 0:
        return w * (cap / w.sum())
    rho = hits[-1]
    theta = (css[rho] - cap) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _mac_dual_local(topology, weights, mu, cap, tol=1e-8, max_iters=20000):
    # projected gradient with backtracking on the capped per-node simplices,
    # then block-coordinate polishing over vertices at the same cap
    cost = weights.lambda1 * topology.energy
    gain = mu * topology.capacity

    def phi(a):
        return float(cost @ a.P - gain @ link_throughput(topology, a))

    a = ProbAssignment(topology, 0.5 * cap / topology.out_degree[topology.src])
    f = phi(a)
    step = 1.0
    for _ in range(max_iters):
        g = lagrangian_gradient(topology, a, mu, weights)
        while True:
            trial = a.p - step * g
            for links in topology.out_links:
                if len(links):
                    trial[links] = _project_capped_simplex(trial[links], cap)
            b = ProbAssignment(topology, trial)
            fb = phi(b)
            d = b.p - a.p
            if fb <= f + g @ d + (0.5 / step) * (d @ d) or step < 1e-12:
                break
            step *= 0.5
        moved = float(np.max(np.abs(d))) if len(d) else 0.0
        a, f = b, fb
        step = min(step * 2.0, 1e3)
        if moved < tol:
            break
    # round to the best link per node, then improve one block at a time
    choice = np.full(topology.n, -1)
    for i, links in enumerate(topology.out_links):
        if len(links) and a.P[i] > 0.5 * cap:
            choice[i] = links[int(np.argmax(a.p[links]))]
    best = _vertex_value(topology, cost, gain, choice, cap)
    improved = True
    while improved:
        improved = False
        for i, links in enumerate(topology.out_links):
            for k in [-1, *links.tolist()]:
                if k == choice[i]:
                    continue
                trial = choice.copy()
                trial[i] = k
                v = _vertex_value(topology, cost, gain, trial, cap)
                if v < best - 1e-15:
                    best, choice, improved = v, trial, True
    return min(best, f), choice


def mac_dual(
    topology: Topology,
    weights: TradeoffWeights,
    mu,
    budget: int = 1 << 20,
    prune_tol: float = 1e-7,
    cap: float = 1.0 - 1e-6,
) -> tuple[float, bool, np.ndarray]:
    """Minimum over feasible p of ``lambda1 * E(p) - sum_l mu_l x_l(p)``.

    Returns ``(value, exact, vertex)``.  ``vertex[i]`` is the link node i
    transmits on at the minimizer (-1: silent).  Links whose price times
    capacity does not exceed their transmitter's energy weight can never
    help and are dropped exactly; links with price times capacity at most
    ``prune_tol`` are dropped too and their best possible contribution is
    subtracted, so the value stays a lower bound.  Each interference
    component is enumerated exhaustively when it has at most ``budget``
    vertices; otherwise the whole problem falls back to projected gradient
    on ``P_i <= cap`` with vertex polishing and ``exact`` is False.
    """
    mu = np.asarray(mu, dtype=float)
    cost = weights.lambda1 * topology.energy
    gain = mu * topology.capacity
    net = gain - cost[topology.src]
    pruned = (net > 0) & (gain <= prune_tol)
    offset = float(net[pruned].sum())
    cand_mask = (net > 0) & ~pruned
    cand = {i: [k for k in links.tolist() if cand_mask[k]] for i, links in enumerate(topology.out_links)}
    active = [i for i in range(topology.n) if cand[i]]
    vertex = np.full(topology.n, -1)
    if not active:
        return -offset, True, vertex

    ptr, idx = topology.affect_csr
    pos = {a: r for r, a in enumerate(active)}
    rows, cols = [], []
    for a in active:
        for k in cand[a]:
            for l in idx[ptr[k]:ptr[k + 1]].tolist():
                if l in pos:
                    rows.append(pos[a])
                    cols.append(pos[l])
    g = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(active), len(active)))
    ncomp, labels = connected_components(g, directed=True, connection="weak")
    comps = [[active[r] for r in np.flatnonzero(labels == c)] for c in range(ncomp)]
    if any(np.prod([len(cand[a]) + 1 for a in comp], dtype=float) > budget for comp in comps):
        value, vertex = _mac_dual_local(topology, weights, mu, cap)
        return value, False, vertex

    total = 0.0
    for comp in comps:
        local = {a: r for r, a in enumerate(comp)}
        aff_local = {
            k: np.array([local[l] for l in idx[ptr[k]:ptr[k + 1]].tolist() if l in local], dtype=np.intp)
            for a in comp
            for k in cand[a]
        }
        val, choice = _enumerate_component(comp, cand, aff_local, cost, gain)
        total += val
        for a, k in choice.items():
            vertex[a] = k
    return total - offset, True, vertex


def dual_value(topology: Topology, sessions: SessionSet, weights: TradeoffWeights, duals) -> DualValue:
    """Lagrange dual function: MAC part plus closed-form transport part."""
    mu = duals.mu if isinstance(duals, DualState) else np.asarray(duals, dtype=float)
    if np.any(mu < 0):
        raise ValueError("prices must be nonnegative")
    d2 = _transport_dual(sessions, weights, mu)
    d1, exact, vertex = mac_dual(topology, weights, mu)
    return DualValue(d1 + d2, d1, d2, exact, vertex)


# distributed iteration


@dataclass(eq=False)
class IterationTrace:
    """Per-round history of the distributed solver (row n = round n + 1)."""

    p: list = field(default_factory=list)
    y: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    dual_exact: list = field(default_factory=list)
    primal: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    change: list = field(default_factory=list)
    converged: bool = False
    converged_at: int | None = None

    def __len__(self):
        return len(self.change)

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {
            "p": np.array(self.p),
            "y": np.array(self.y),
            "mu": np.array(self.mu),
            "dual": np.array(self.dual, dtype=float),
            "primal": np.array(self.primal, dtype=float),
            "violation": np.array(self.violation),
            "change": np.array(self.change),
        }

    def best_primal(self) -> float:
        vals = [v for v in self.primal if v is not None and math.isfinite(v)]
        return min(vals) if vals else math.inf

    def weak_duality_violations(self, rel_tol: float = 1e-9) -> list[int]:
        """Rounds whose dual value exceeds the best feasible primal value of the run."""
        best = self.best_primal()
        slack = rel_tol * max(1.0, abs(best))
        return [n + 1 for n, d in enumerate(self.dual) if d is not None and d > best + slack]


class DistributedResult(NamedTuple):
    assignment: ProbAssignment
    rates: RateVector
    duals: DualState
    trace: IterationTrace

    @property
    def converged(self) -> bool:
        return self.trace.converged


def _initial_assignment(topology: Topology, config: SolverConfig) -> ProbAssignment:
    deg = topology.out_degree[topology.src]
    if config.init == "uniform":
        return ProbAssignment(topology, config.init_p / deg)
    rng = np.random.default_rng(config.seed)
    return ProbAssignment(topology, rng.uniform(0.05, 1.0, topology.m) * config.init_p / deg)


def distributed_solve(
    topology: Topology,
    sessions: SessionSet,
    weights: TradeoffWeights,
    config: SolverConfig | None = None,
) -> DistributedResult:
    """Run the synchronous price/rate/probability rounds.

    Each round reads only the previous round's state: prices step on the
    overload of the previous rates against the previous throughputs, rates
    follow the new route prices, then link probabilities take one projected
    gradient step under the new prices and throughputs are recomputed.
    Stops once the largest change of any variable stays below
    ``change_tol`` for ``change_window`` rounds and the relative overload
    is below ``feas_tol``; otherwise returns the iterate with the best
    feasible objective, flagged as not converged.
    """
    config = config or SolverConfig()
    if weights.lambda2 <= 0:
        raise ValueError("cross-layer problem needs lambda2 > 0")
    if len(sessions) == 0:
        raise ValueError("no sessions")
    if topology.isolated_nodes():
        raise ValueError(f"isolated nodes: {topology.isolated_nodes()}")

    a = _initial_assignment(topology, config)
    duals = DualState(np.full(topology.m, config.init_mu), sessions)
    x = link_throughput(topology, a)
    y = update_rates(duals, weights)
    trace = IterationTrace()
    calm = 0
    best = (math.inf, None)

    for n in range(1, config.max_iters + 1):
        new_duals = update_duals(duals, y, x, config.gamma, config.mu_floor)
        new_y = update_rates(new_duals, weights)
        new_a = mac_gradient_step(topology, a, new_duals, weights, config.alpha)
        new_x = link_throughput(topology, new_a)

        change = max(
            float(np.max(np.abs(new_a.p - a.p))),
            float(np.max(np.abs(new_y.y - y.y))),
            float(np.max(np.abs(new_duals.mu - duals.mu))),
        )
        violation = max_violation(sessions, new_x, new_y)
        if new_a.violations():
            primal = None
        else:
            primal = crosslayer_objective(topology, weights, new_a, feasible_rates(sessions, new_x, new_y))
            if primal < best[0]:
                best = (primal, n)
        if config.dual_every and n % config.dual_every == 0:
            dv = dual_value(topology, sessions, weights, new_duals)
            trace.dual.append(dv.value)
            trace.dual_exact.append(dv.exact)
        else:
            trace.dual.append(None)
            trace.dual_exact.append(None)
        trace.p.append(new_a.p)
        trace.y.append(new_y.y)
        trace.mu.append(new_duals.mu)
        trace.primal.append(primal)
        trace.violation.append(violation)
        trace.change.append(change)

        a, y, x, duals = new_a, new_y, new_x, new_duals
        calm = calm + 1 if change < config.change_tol else 0
        if calm >= config.change_window and violation < config.feas_tol:
            trace.converged = True
            trace.converged_at = n
            return DistributedResult(a, y, duals, trace)

    log.info("distributed solver stopped after %d rounds without converging", config.max_iters)
    if best[1] is not None:
        k = best[1] - 1
        a = ProbAssignment(topology, trace.p[k], strict=False)
        duals = DualState(trace.mu[k], sessions)
        y = RateVector(trace.y[k])
    return DistributedResult(a, y, duals, trace)


def complementary_slackness(sessions: SessionSet, x, rates: RateVector, duals: DualState) -> np.ndarray:
    """Per-link |mu_l (x_l - load_l)|."""
    return np.abs(duals.mu * (np.asarray(x) - sessions.routing @ rates.y))


# centralized reference


class CentralizedResult(NamedTuple):
    assignment: ProbAssignment
    rates: RateVector
    objective: float
    log_prices: np.ndarray
    stationarity: float
    feasibility: float


def _kkt_residual(topology, sessions, weights, p, z, nu):
    # stationarity of the log-form Lagrangian; nu are multipliers of the
    # log-sum-exp constraints on used links (zero elsewhere)
    t = topology
    P = np.bincount(t.src, weights=p, minlength=t.n)
    used = sessions.used_links
    R = sessions.routing
    y = np.exp(z)
    load = R @ y
    share = np.zeros_like(R)
    share[used] = R[used] * y / load[used, None]
    grad_z = -weights.lambda2 + share.T @ nu
    ptr, idx = t.affect_csr
    node_pull = np.zeros(t.n)
    for l in used.tolist():
        np.add.at(node_pull, idx[ptr[l]:ptr[l + 1]], nu[l])
    with np.errstate(divide="ignore"):
        push = np.where(node_pull > 0, node_pull / (1.0 - P), 0.0)
    grad_p = weights.lambda1 * t.energy[t.src] + push[t.src]
    with np.errstate(divide="ignore", invalid="ignore"):
        grad_p = grad_p - np.where(nu > 0, nu / p, 0.0)
    trial = p - grad_p
    for links in t.out_links:
        if len(links):
            trial[links] = _project_capped_simplex(trial[links], 1.0)
    r_p = float(np.max(np.abs(p - trial))) if t.m else 0.0
    r_z = float(np.max(np.abs(grad_z))) if len(z) else 0.0
    return max(r_p, r_z)


def _polish_kkt(topology, sessions, weights, p, z, nu, sat_tol=1e-6):
    """Newton-type refinement of the KKT point with every used-link
    constraint active and unused-link probabilities held fixed.

    A node that interferes with no used link and sits at P ~ 1 is snapped to
    P = 1 exactly; its probabilities are then held fixed as well.
    """
    from scipy.optimize import root

    t = topology
    used = sessions.used_links
    if np.any(p[used] <= 0) or np.any(nu[used] <= 0):
        return None
    ptr, idx = t.affect_csr
    members = [idx[ptr[l]:ptr[l + 1]] for l in used.tolist()]
    influencing = np.zeros(t.n, dtype=bool)
    for aff in members:
        influencing[aff] = True
    fixed = p.copy()
    P0 = np.bincount(t.src, weights=p, minlength=t.n)
    saturated = (P0 >= 1.0 - sat_tol) & ~influencing
    for i in np.flatnonzero(saturated):
        links = t.out_links[i]
        fixed[links] = p[links] / P0[i]
    free = used[~saturated[t.src[used]]]
    R = sessions.routing[used]
    nf, ns = len(free), len(z)

    def unpack(u):
        pp = fixed.copy()
        pp[free] = u[:nf]
        return pp, u[nf:nf + ns], u[nf + ns:]

    def F(u):
        pp, zz, vv = unpack(u)
        P = np.bincount(t.src, weights=pp, minlength=t.n)
        if np.any(pp[used] <= 0) or np.any(P[influencing] >= 1):
            return np.full(len(u), 1e6)
        y = np.exp(zz)
        load = R @ y
        pull = np.zeros(t.n)
        for v, aff in zip(vv, members):
            np.add.at(pull, aff, v)
        full_v = np.zeros(t.m)
        full_v[used] = vv
        src = t.src[free]
        g_p = weights.lambda1 * t.energy[src] + pull[src] / (1.0 - P[src]) - full_v[free] / pp[free]
        g_z = -weights.lambda2 + (R * y).T @ (vv / load)
        logx = np.log(t.capacity[used] * pp[used]) + np.array([np.log(1.0 - P[a]).sum() for a in members])
        return np.concatenate([g_p, g_z, np.log(load) - logx])

    u0 = np.concatenate([fixed[free], z, nu[used]])
    sol = root(F, u0, method="hybr", options={"xtol": 1e-15})
    pp, zz, vv = unpack(sol.x)
    if not np.all(np.isfinite(sol.x)) or np.any(vv < 0) or np.any(pp[used] <= 0):
        return None
    full_nu = np.zeros(t.m)
    full_nu[used] = vv
    node_sum = np.bincount(t.src, weights=pp, minlength=t.n)
    if np.any(node_sum > 1.0 + 1e-9):
        return None
    pp = pp / np.maximum(node_sum, 1.0)[t.src]
    return pp, zz, full_nu


def centralized_solve(
    topology: Topology,
    sessions: SessionSet,
    weights: TradeoffWeights,
    feas_tol: float = 1e-8,
    stationarity_tol: float = 1e-6,
    solver_opts: dict | None = None,
) -> CentralizedResult:
    """Solve the log-rate convex form with an interior-point conic solver.

    Feasibility is then made exact (up to ``feas_tol``) by lowering all
    log-rates by the largest constraint violation, and the stationarity
    residual of the KKT system is reported; a ``RuntimeError`` is raised if
    either exceeds its tolerance.
    """
    import cvxpy as cp

    if weights.lambda2 <= 0:
        raise ValueError("cross-layer problem needs lambda2 > 0")
    if len(sessions) == 0:
        raise ValueError("infeasible instance: no sessions")
    t = topology
    used = sessions.used_links.tolist()
    ptr, idx = t.affect_csr

    p = cp.Variable(t.m, nonneg=True)
    z = cp.Variable(len(sessions))
    P = t.source_matrix @ p
    log_free = cp.log(1 - P)
    cons = [P <= 1]
    lse_cons = []
    for l in used:
        members = list(sessions.sessions_on_link[l])
        lhs = z[members[0]] if len(members) == 1 else cp.log_sum_exp(z[members])
        rhs = math.log(t.capacity[l]) + cp.log(p[l]) + cp.sum(log_free[idx[ptr[l]:ptr[l + 1]].tolist()])
        c = lhs <= rhs
        lse_cons.append(c)
        cons.append(c)
    objective = cp.Minimize(weights.lambda1 * (t.energy @ P) - weights.lambda2 * cp.sum(z))
    prob = cp.Problem(objective, cons)
    opts = {"tol_gap_abs": 1e-11, "tol_gap_rel": 1e-11, "tol_feas": 1e-11, "max_iter": 500}
    opts.update(solver_opts or {})
    with warnings.catch_warnings():
        # accuracy is judged by the KKT residual below, not by the solver's flag
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver=cp.CLARABEL, **opts)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or p.value is None:
        raise RuntimeError(f"centralized solver failed: {prob.status}")

    pv = np.clip(np.asarray(p.value, dtype=float), 0.0, 1.0)
    node_sum = np.bincount(t.src, weights=pv, minlength=t.n)
    over = node_sum > 1.0
    if np.any(over):
        pv = pv / np.where(over, node_sum, 1.0)[t.src]
    # links carrying no session only add energy and interference; switching
    # them off keeps optimality and picks the least-energy optimum at lambda1 = 0
    idle = np.ones(t.m, dtype=bool)
    idle[used] = False
    pv[idle] = 0.0
    zv = np.asarray(z.value, dtype=float).copy()
    nu = np.zeros(t.m)
    for l, c in zip(used, lse_cons):
        nu[l] = max(float(np.asarray(c.dual_value).reshape(-1)[0]), 0.0)

    stat = _kkt_residual(t, sessions, weights, pv, zv, nu)
    if stat > 0.01 * stationarity_tol:
        polished = _polish_kkt(t, sessions, weights, pv, zv, nu)
        if polished is not None:
            stat_p = _kkt_residual(t, sessions, weights, *polished)
            if stat_p < stat:
                pv, zv, nu = polished
                stat = stat_p

    assignment = ProbAssignment(t, pv)
    x = link_throughput(t, assignment)
    R = sessions.routing

    def log_violation(zz):
        load = R @ np.exp(zz)
        return float(np.max(np.log(load[used]) - np.log(x[used])))

    shift = max(log_violation(zv), 0.0)
    zv = zv - shift
    while log_violation(zv) > 0:
        zv = zv - max(log_violation(zv), 1e-15)
    rates = RateVector(np.exp(zv))
    feas = max_violation(sessions, x, rates)
    stat = _kkt_residual(t, sessions, weights, pv, zv, nu)
    obj = crosslayer_objective(t, weights, assignment, rates)
    if feas > feas_tol or stat > stationarity_tol:
        raise RuntimeError(
            f"centralized solution misses tolerances: feasibility {feas:.3g}, stationarity {stat:.3g}"
        )
    return CentralizedResult(assignment, rates, obj, nu, stat, feas)

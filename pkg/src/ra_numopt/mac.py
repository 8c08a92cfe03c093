"""Scalarized energy/utility optimization of MAC persistence probabilities.

The objective ``lambda1 * E - lambda2 * U`` separates over nodes once each
node splits its transmission probability equally over its outgoing links.
Node i then minimizes ``A_i P - B_i log P - C_i log(1 - P)`` with

    A_i = lambda1 * e_i
    B_i = lambda2 * |O_i|
    C_i = lambda2 * (sum_{k in N_i^out} |I_k| + |I_i| - |O_i|)

whose derivative ``A - B/P + C/(1 - P)`` is increasing on (0, 1) and has a
single root there when A, B, C > 0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ra_numopt.network import (
    DegenerateInstanceError,
    ProbAssignment,
    RateVector,
    Topology,
    link_throughput,
    mac_utility,
    total_energy,
)

log = logging.getLogger(__name__)

BRACKET_EPS = 1e-12
BISECTION_WIDTH = 1e-12


@dataclass(frozen=True)
class TradeoffWeights:
    """Energy weight ``lambda1`` and utility weight ``lambda2``."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise ValueError("weights must be finite")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("weights must be nonnegative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValueError("lambda1 and lambda2 cannot both be zero")

    @property
    def ratio(self) -> float:
        return math.inf if self.lambda2 == 0 else self.lambda1 / self.lambda2


@dataclass(frozen=True, eq=False)
class MacCoefficients:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        """Nodes with C_i = 0: nobody else transmits into i's neighbourhood."""
        return self.C == 0


@dataclass(frozen=True, eq=False)
class ParetoPoint:
    """One point of an energy/utility tradeoff curve."""

    lambda1: float
    lambda2: float
    energy: float
    utility: float
    assignment: ProbAssignment | None = None
    rates: RateVector | None = None

    @property
    def ratio(self) -> float:
        return math.inf if self.lambda2 == 0 else self.lambda1 / self.lambda2


def mac_coefficients(topology: Topology, weights: TradeoffWeights) -> MacCoefficients:
    load = topology.interference_load
    if np.any(load < 0):
        raise DegenerateInstanceError("negative interference load; inconsistent neighbour sets")
    return MacCoefficients(
        A=weights.lambda1 * topology.energy,
        B=weights.lambda2 * topology.out_degree.astype(float),
        C=weights.lambda2 * load.astype(float),
    )


def _bisect_roots(A, B, C):
    # vectorized bisection of A - B/P + C/(1-P) on [eps, 1 - eps]
    lo = np.full(A.shape, BRACKET_EPS)
    hi = np.full(A.shape, 1.0 - BRACKET_EPS)
    while True:
        width = hi - lo
        if np.all(width <= BISECTION_WIDTH):
            break
        mid = 0.5 * (lo + hi)
        g = A - B / mid + C / (1.0 - mid)
        neg = g < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    return 0.5 * (lo + hi)


def solve_node_probabilities(A, B, C) -> np.ndarray:
    """Optimal node transmission probabilities for coefficient arrays."""
    A, B, C = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (A, B, C))
    if np.any((A == 0) & (B == 0) & (C == 0)):
        raise ValueError("all-zero coefficients: the node problem is undefined")
    out = np.empty(A.shape)
    zero_b = B == 0
    zero_c = (C == 0) & ~zero_b
    zero_a = (A == 0) & ~zero_b & ~zero_c
    interior = ~(zero_b | zero_c | zero_a)

    out[zero_b] = 0.0
    with np.errstate(divide="ignore", over="ignore"):
        out[zero_c] = np.where(A[zero_c] == 0, 1.0, np.minimum(1.0, B[zero_c] / A[zero_c]))
    out[zero_a] = B[zero_a] / (B[zero_a] + C[zero_a])
    if np.any(interior):
        # the root only depends on coefficient ratios; normalizing keeps tiny
        # or huge coefficients clear of underflow and overflow
        a, b, c = A[interior], B[interior], C[interior]
        scale = np.maximum(np.maximum(a, b), c)
        out[interior] = _bisect_roots(a / scale, b / scale, c / scale)
    return out


def solve_node_probability(A: float, B: float, C: float) -> float:
    """Scalar form of :func:`solve_node_probabilities`."""
    return float(solve_node_probabilities(A, B, C)[0])


def solve_mac(topology: Topology, weights: TradeoffWeights) -> ProbAssignment:
    isolated = topology.isolated_nodes()
    if isolated:
        raise DegenerateInstanceError(f"isolated nodes (no outgoing links): {isolated}")
    co = mac_coefficients(topology, weights)
    P = solve_node_probabilities(co.A, co.B, co.C)
    if np.any(co.degenerate & (co.A == 0) & (P == 1.0)):
        log.warning("nodes with C=0 and A=0 saturate at P=1; affected link utilities may be -inf")
    return ProbAssignment.from_node_probabilities(topology, P)


def mac_objective(topology: Topology, weights: TradeoffWeights, assignment: ProbAssignment) -> float:
    """``lambda1 * E - lambda2 * U`` in the node-wise expanded form:

    sum_i lambda1 e_i P_i - lambda2 [sum_{j in O_i} log(c_ij p_ij) + K_i log(1 - P_i)]

    with K_i the interference load of node i.
    """
    f = 0.0
    if weights.lambda1 != 0:
        f += weights.lambda1 * total_energy(topology, assignment)
    if weights.lambda2 != 0:
        cp = topology.capacity * assignment.p
        load = topology.interference_load
        busy = load > 0
        slack = 1.0 - assignment.P[busy]
        if np.any(cp <= 0) or np.any(slack <= 0):
            raise ValueError("objective undefined: assignment on the boundary of the log domain")
        U = np.log(cp).sum() + (load[busy] * np.log(slack)).sum()
        f -= weights.lambda2 * U
    return float(f)


def mac_objective_direct(topology: Topology, weights: TradeoffWeights, assignment: ProbAssignment) -> float:
    """Same objective composed from link throughputs; used as a cross-check."""
    f = 0.0
    if weights.lambda1 != 0:
        f += weights.lambda1 * total_energy(topology, assignment)
    if weights.lambda2 != 0:
        f -= weights.lambda2 * mac_utility(link_throughput(topology, assignment))
    return float(f)


def mac_gradient(topology: Topology, weights: TradeoffWeights, P) -> np.ndarray:
    """Derivative of the reduced objective with respect to each P_i."""
    P = np.asarray(P, dtype=float)
    if np.any(P <= 0) or np.any(P >= 1):
        raise ValueError("gradient requires 0 < P_i < 1 for all nodes")
    co = mac_coefficients(topology, weights)
    return co.A - co.B / P + co.C / (1.0 - P)


def mac_curvature(topology: Topology, weights: TradeoffWeights, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    co = mac_coefficients(topology, weights)
    return co.B / P**2 + co.C / (1.0 - P) ** 2


def pareto_sweep_mac(topology: Topology, weights: Iterable[TradeoffWeights]) -> list[ParetoPoint]:
    """Solve for every weight pair and return points sorted by lambda1/lambda2."""
    points = []
    for w in sorted(weights, key=lambda w: (w.ratio, w.lambda1)):
        a = solve_mac(topology, w)
        x = link_throughput(topology, a)
        U = float(np.log(x).sum()) if np.all(x > 0) else -math.inf
        points.append(ParetoPoint(w.lambda1, w.lambda2, total_energy(topology, a), U, a))
    return points


# brute-force oracle

MAX_BRUTE_NODES = 5


def _batch_objective(topology: Topology, weights: TradeoffWeights, P: np.ndarray) -> np.ndarray:
    """Objective for a batch of node-probability rows (equal link split),
    composed directly from per-link throughputs with explicit products."""
    t = topology
    p = P[:, t.src] / t.out_degree[t.src]
    f = weights.lambda1 * (P @ t.energy)
    if weights.lambda2 != 0:
        U = np.zeros(len(P))
        with np.errstate(divide="ignore"):
            for k, (i, j) in enumerate(zip(t.src.tolist(), t.dst.tolist())):
                x = t.capacity[k] * p[:, k] * (1.0 - P[:, j])
                for l in t.interference_in[j]:
                    if l != i:
                        x = x * (1.0 - P[:, l])
                U += np.log(np.maximum(x, 0.0))
        f = f - weights.lambda2 * U
    return np.where(np.isnan(f), np.inf, f)


def _lattice(lo_k, hi_k, step_k, n_max):
    ks = np.arange(lo_k, hi_k + 1, step_k)
    return ks[(ks >= 1) & (ks <= n_max)]


def brute_force_mac(
    topology: Topology,
    weights: TradeoffWeights,
    grid_step: float = 1e-3,
    budget: int = 250_000,
) -> ProbAssignment:
    """Grid minimizer over node probabilities P_i in {step, 2 step, ..., 1}.

    Exhaustive when the full lattice has at most ``budget`` points
    (``n <= 2`` at step 1e-3).  Larger lattices are searched by successive
    exhaustive refinement: a coarse sub-lattice first, then windows of
    +-2 coarse steps around the incumbent at 5x finer spacing, down to
    ``grid_step``.  All evaluated points lie on the target lattice.
    """
    n = topology.n
    if n > MAX_BRUTE_NODES:
        raise ValueError(f"brute force limited to {MAX_BRUTE_NODES} nodes, got {n}")
    if topology.isolated_nodes():
        raise DegenerateInstanceError("isolated nodes")
    k_max = int(math.floor(1.0 / grid_step + 1e-9))
    stride = 1
    while (k_max / stride) ** n > budget:
        stride *= 5
    best_k = None
    while True:
        if best_k is None:
            axes = [_lattice(stride, k_max, stride, k_max)] * n
        else:
            wide = 2 * stride * 5
            axes = [_lattice(k - wide, k + wide, stride, k_max) for k in best_k]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        vals = _batch_objective(topology, weights, mesh * grid_step)
        best_k = mesh[int(np.argmin(vals))]
        if stride == 1:
            break
        stride //= 5
    return ProbAssignment.from_node_probabilities(topology, best_k * grid_step)


def stationarity_residual(topology: Topology, weights: TradeoffWeights, assignment: ProbAssignment) -> float:
    """Max-norm of the node gradient over nodes whose optimum is interior."""
    co = mac_coefficients(topology, weights)
    P = assignment.P
    interior = (co.A > 0) & (co.B > 0) & (co.C > 0)
    if not np.any(interior):
        return 0.0
    g = co.A[interior] - co.B[interior] / P[interior] + co.C[interior] / (1 - P[interior])
    return float(np.max(np.abs(g)))


def weight_grid(lambda1_values: Sequence[float], lambda2: float = 1.0) -> list[TradeoffWeights]:
    return [TradeoffWeights(float(l1), float(lambda2)) for l1 in lambda1_values]

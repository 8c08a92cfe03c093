"""Desk-scale experiments: MAC and cross-layer tradeoff frontiers, uniform
baselines, the layer-by-layer comparison and distributed convergence traces.

An experiment is described by a JSON-compatible spec (see
:class:`ExperimentSpec`) and writes ``frontier.csv``, ``comparison.csv``,
``trace.csv`` and ``summary.json`` (whichever apply) into its output
directory.  Outputs contain no timestamps or host data and are
byte-identical across reruns of the same spec.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from ra_numopt import io
from ra_numopt.crosslayer import (
    DualState,
    SolverConfig,
    centralized_solve,
    crosslayer_objective,
    distributed_solve,
    feasible_rates,
    max_violation,
    update_duals,
    update_rates,
)
from ra_numopt.mac import ParetoPoint, TradeoffWeights, pareto_sweep_mac, solve_mac, weight_grid
from ra_numopt.network import (
    GenConfig,
    ProbAssignment,
    RateVector,
    SessionSet,
    Topology,
    generate_sessions,
    generate_topology,
    link_throughput,
    total_energy,
    transport_utility,
)

EXPERIMENTS = ("mac_frontier", "crosslayer_frontier", "convergence", "baseline_comparison")
DEFAULT_LAMBDA1 = tuple(float(v) for v in range(31))
MATCH_TOL = 1e-6


def utility_of(topology: Topology, assignment: ProbAssignment) -> float:
    """Link utility, ``-inf`` when some throughput vanishes."""
    x = link_throughput(topology, assignment)
    if np.any(~(x > 0)):
        return -math.inf
    return float(np.log(x).sum())


# uniform baselines


@dataclass(frozen=True, eq=False)
class BaselineResult:
    """A uniform-probability operating point.

    ``value`` is the shared node probability (node baseline) or the shared
    link probability (link baseline).  ``matched`` is False when the target
    utility is out of reach, in which case the point is the utility
    maximizer of the family and ``utility`` equals ``max_utility``.
    """

    assignment: ProbAssignment
    value: float
    utility: float
    energy: float
    max_utility: float
    matched: bool
    capped: bool = False


def _match_scalar(util: Callable[[float], float], upper: float, target: float | None):
    # U is unimodal on (0, upper]: locate the peak, then solve U = target on
    # the increasing branch, where energy is smallest
    lo = 1e-300
    peak = minimize_scalar(
        lambda v: -util(v),
        bounds=(0.0, upper),
        method="bounded",
        options={"xatol": 1e-13},
    )
    v_max, u_max = float(peak.x), -float(peak.fun)
    if util(upper) >= u_max:
        v_max, u_max = upper, util(upper)
    if target is None or target > u_max:
        return v_max, u_max, False
    if target == u_max:
        return v_max, u_max, True
    v = brentq(lambda v: util(v) - target, lo, v_max, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(v), u_max, True


def uniform_node_baseline(topology: Topology, target_utility: float | None = None) -> BaselineResult:
    """Every node transmits with the same P, split equally over its links.

    Without a target (or with an unreachable one) the utility-maximizing
    shared P is returned and ``matched`` is False.
    """
    t = topology

    def assign(P):
        return ProbAssignment.from_node_probabilities(t, np.full(t.n, P))

    def util(P):
        return utility_of(t, assign(P)) if 0 < P < 1 else -math.inf

    P, u_max, matched = _match_scalar(util, 1.0, target_utility)
    a = assign(P)
    return BaselineResult(a, P, util(P), total_energy(t, a), u_max, matched)


def uniform_link_baseline(topology: Topology, target_utility: float | None = None) -> BaselineResult:
    """Every link gets the same p, so ``P_i = |O_i| p``; p stays at or below
    ``1 / max_i |O_i|`` and ``capped`` reports a solution on that bound."""
    t = topology
    upper = 1.0 / float(t.out_degree.max())

    def assign(p):
        return ProbAssignment(t, np.full(t.m, min(p, upper)))

    def util(p):
        return utility_of(t, assign(p)) if 0 < p <= upper else -math.inf

    p, u_max, matched = _match_scalar(util, upper, target_utility)
    a = assign(p)
    capped = abs(p - upper) <= 1e-12 * upper
    return BaselineResult(a, p, util(p), total_energy(t, a), u_max, matched, capped)


def optimal_energy_at_utility(topology: Topology, target_utility: float) -> tuple[float, ProbAssignment]:
    """Frontier point with link utility ``target_utility`` (lambda2 = 1).

    Returns ``(lambda1, assignment)``; raises ValueError when the target
    exceeds the maximum achievable utility.
    """

    def gap(l1):
        return utility_of(topology, solve_mac(topology, TradeoffWeights(l1, 1.0))) - target_utility

    top = gap(0.0)
    if top < 0:
        raise ValueError(f"target utility {target_utility:.6g} exceeds the maximum {target_utility + top:.6g}")
    if top == 0:
        l1 = 0.0
    else:
        hi = 1.0
        while gap(hi) > 0:
            hi *= 4.0
        l1 = brentq(gap, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(l1), solve_mac(topology, TradeoffWeights(l1, 1.0))


@dataclass(frozen=True)
class ComparisonRecord:
    label: str
    target_utility: float
    optimal_energy: float
    node_energy: float
    link_energy: float
    link_capped: bool

    @property
    def node_ratio(self) -> float:
        return self.node_energy / self.optimal_energy

    @property
    def link_ratio(self) -> float:
        return self.link_energy / self.optimal_energy


@dataclass(frozen=True)
class ComparisonReport:
    """Baseline energy over optimal energy at matched utility, per instance."""

    records: tuple[ComparisonRecord, ...]

    @property
    def mean_node_ratio(self) -> float:
        return float(np.mean([r.node_ratio for r in self.records]))

    @property
    def mean_link_ratio(self) -> float:
        return float(np.mean([r.link_ratio for r in self.records]))


def compare_baselines(topology: Topology, target_utility: float | None = None, label: str = "") -> ComparisonRecord:
    """Energies of the optimum and both uniform baselines at one utility.

    The default target is the largest utility both baselines can reach,
    i.e. the smaller of their two peaks.
    """
    if target_utility is None:
        target_utility = min(
            uniform_node_baseline(topology).max_utility,
            uniform_link_baseline(topology).max_utility,
        )
    node = uniform_node_baseline(topology, target_utility)
    link = uniform_link_baseline(topology, target_utility)
    if not (node.matched and link.matched):
        raise ValueError("target utility is out of reach of a uniform baseline")
    for b in (node, link):
        if abs(b.utility - target_utility) > MATCH_TOL:
            raise RuntimeError(f"utility match missed by {abs(b.utility - target_utility):.3g}")
    _, opt = optimal_energy_at_utility(topology, target_utility)
    return ComparisonRecord(label, float(target_utility), total_energy(topology, opt), node.energy, link.energy, link.capped)


# layer-by-layer baseline


class LayeredResult(NamedTuple):
    assignment: ProbAssignment
    throughputs: np.ndarray
    rates: RateVector
    duals: DualState
    iterations: int
    objective: float


def fair_rates(
    sessions: SessionSet,
    x,
    weights: TradeoffWeights,
    tol: float = 1e-10,
    max_iters: int = 200_000,
) -> tuple[RateVector, DualState, int]:
    """Maximize ``sum_s log y_s`` under fixed link throughputs ``x`` by
    price iteration with the MAC frozen.

    Each link's step is scaled by ``lambda2 / (k_l x_l^2 h)`` (``k_l``
    sessions on the link, ``h`` the longest route), the inverse of the
    local rate sensitivity, which keeps the iteration stable when
    throughputs are small.  Stops when the relative overload and the
    complementary slackness ``mu_l (x_l - load_l) / lambda2`` are both
    below ``tol``; the returned rates are then scaled onto the feasible set.
    """
    x = np.asarray(x, dtype=float)
    R = sessions.routing
    used = sessions.used_links
    if np.any(x[used] <= 0):
        raise ValueError("a used link has zero throughput")
    share = R.sum(axis=1)
    hops = float(R.sum(axis=0).max())
    gamma = np.ones(len(x))
    gamma[used] = weights.lambda2 / (share[used] * x[used] ** 2 * hops)
    mu = np.zeros(len(x))
    mu[used] = weights.lambda2 / (share[used] * x[used] * hops)
    duals = DualState(mu, sessions)
    rates = update_rates(duals, weights)
    n = 0
    for n in range(1, max_iters + 1):
        duals = update_duals(duals, rates, x, gamma)
        rates = update_rates(duals, weights)
        load = R @ rates.y
        over = float(np.max(np.maximum(load[used] - x[used], 0.0) / x[used]))
        slack = float(np.max(duals.mu[used] * np.maximum(x[used] - load[used], 0.0))) / weights.lambda2
        if over < tol and slack < tol:
            break
    return feasible_rates(sessions, x, rates), duals, n


def layer_by_layer_solve(topology: Topology, sessions: SessionSet, weights: TradeoffWeights) -> LayeredResult:
    """MAC first (``solve_mac``), then source rates on the resulting throughputs."""
    a = solve_mac(topology, weights)
    x = link_throughput(topology, a)
    rates, duals, n = fair_rates(sessions, x, weights)
    return LayeredResult(a, x, rates, duals, n, crosslayer_objective(topology, weights, a, rates))


def crosslayer_sweep(
    topology: Topology, sessions: SessionSet, weights: Iterable[TradeoffWeights]
) -> list[ParetoPoint]:
    """Centralized joint optimum for each weight pair, sorted by lambda1/lambda2.

    ``utility`` is the transport utility ``sum_s log y_s``.
    """
    points = []
    for w in sorted(weights, key=lambda w: (w.ratio, w.lambda1)):
        res = centralized_solve(topology, sessions, w)
        points.append(
            ParetoPoint(
                w.lambda1,
                w.lambda2,
                total_energy(topology, res.assignment),
                transport_utility(res.rates),
                res.assignment,
                res.rates,
            )
        )
    return points


def relative_utility(utility, max_utility: float, links: int) -> np.ndarray:
    """Geometric-mean link throughput relative to the max-utility point:
    ``exp((U - U_max) / |L|)``, which lies in (0, 1]."""
    return np.exp((np.asarray(utility, dtype=float) - max_utility) / links)


# experiment specs


class SpecError(ValueError):
    """Malformed experiment spec."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Experiment description.

    ``topology`` is one of ``{"generate": {GenConfig fields but seed}}``,
    ``{"path": file}`` or ``{"inline": instance document}``; generated
    topologies use each entry of ``seeds``.  ``sessions`` is a session count
    (drawn per seed) or None to use the sessions stored in the instance.
    """

    experiment: str
    topology: Mapping[str, Any] = field(default_factory=dict)
    sessions: int | None = None
    lambda1: tuple[float, ...] = DEFAULT_LAMBDA1
    lambda2: float = 1.0
    solver: Mapping[str, Any] = field(default_factory=dict)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise SpecError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        lam = tuple(float(v) for v in self.lambda1)
        if not lam or any(not math.isfinite(v) or v < 0 for v in lam) or len(set(lam)) != len(lam):
            raise SpecError("lambda1 grid must be a nonempty list of distinct finite values >= 0")
        object.__setattr__(self, "lambda1", lam)
        if not (math.isfinite(self.lambda2) and self.lambda2 > 0):
            raise SpecError("lambda2 must be finite and > 0")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds or len(set(seeds)) != len(seeds):
            raise SpecError("seeds must be a nonempty list of distinct integers")
        object.__setattr__(self, "seeds", seeds)
        if len(self.topology) > 1 or (self.topology and next(iter(self.topology)) not in ("generate", "path", "inline")):
            raise SpecError("topology must be one of {generate: ...}, {path: ...}, {inline: ...}")
        if self.sessions is not None and (not isinstance(self.sessions, int) or self.sessions < 1):
            raise SpecError("sessions must be a positive integer or null")
        try:
            SolverConfig(**self.solver)
        except TypeError as exc:
            raise SpecError(f"bad solver settings: {exc}") from None
        if self.experiment == "convergence" and len(lam) != 1:
            raise SpecError("convergence takes exactly one lambda1 value")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SpecError(f"unknown spec fields: {unknown}")
        if "experiment" not in data:
            raise SpecError("spec needs an 'experiment' field")
        kw = dict(data)
        exp = kw["experiment"]
        if "lambda1" not in kw and exp == "convergence":
            kw["lambda1"] = (5.0,)
        if "topology" not in kw:
            kw["topology"] = {"generate": _default_generator(exp)}
        if "sessions" not in kw and exp in ("crosslayer_frontier", "convergence"):
            kw["sessions"] = 3
        for key in ("lambda1", "seeds"):
            if key in kw and not isinstance(kw[key], (list, tuple)):
                raise SpecError(f"{key} must be a list")
        return cls(**kw)

    @property
    def config(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    @property
    def weights(self) -> list[TradeoffWeights]:
        return weight_grid(self.lambda1, self.lambda2)


def _default_generator(experiment: str) -> dict:
    if experiment in ("crosslayer_frontier", "convergence"):
        return {"node_count": 10, "cf_low": 0.3, "cf_high": 0.45}
    return {"node_count": 100}


def load_instance(spec: ExperimentSpec, seed: int, base_dir: Path | None = None) -> tuple[Topology, SessionSet | None]:
    kind, value = next(iter(spec.topology.items()))
    if kind == "generate":
        cfg = dict(value)
        if "seed" in cfg:
            raise SpecError("generator seed comes from 'seeds'")
        try:
            topo = generate_topology(GenConfig(seed=seed, **cfg))
        except TypeError as exc:
            raise SpecError(f"bad generator settings: {exc}") from None
        sessions = None
    else:
        if kind == "path":
            path = Path(value)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            inst = io.read_instance(path)
        else:
            inst = io.parse_instance(value)
        topo, sessions = inst.topology, inst.sessions
    if spec.sessions is not None:
        sessions = generate_sessions(topo, spec.sessions, seed)
    return topo, sessions


def _threads() -> int:
    raw = os.environ.get("RA_NUMOPT_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _map(fn, items: Sequence):
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class ExperimentResult:
    summary: dict
    files: dict[str, Path]


def _frontier_rows(per_seed: list[list[ParetoPoint]], rel: list[np.ndarray]):
    rows = []
    for k, pt in enumerate(per_seed[0]):
        E = [pts[k].energy for pts in per_seed]
        U = [pts[k].utility for pts in per_seed]
        R = [r[k] for r in rel]
        rows.append([pt.lambda1, pt.lambda2, float(np.mean(E)), float(np.mean(U)), float(np.mean(R)), len(per_seed)])
    return rows


FRONTIER_HEADER = ["lambda1", "lambda2", "energy", "utility", "utility_rel", "instances"]


def _mac_frontier(spec: ExperimentSpec, base_dir):
    def one(seed):
        topo, _ = load_instance(spec, seed, base_dir)
        pts = pareto_sweep_mac(topo, spec.weights)
        u_max = utility_of(topo, solve_mac(topo, TradeoffWeights(0.0, 1.0)))
        return pts, relative_utility([p.utility for p in pts], u_max, topo.m)

    out = _map(one, spec.seeds)
    rows = _frontier_rows([o[0] for o in out], [o[1] for o in out])
    summary = {"points": len(rows), "monotone": _monotone(rows)}
    return {"frontier.csv": (FRONTIER_HEADER, rows)}, summary


def _monotone(rows, slack: float = 0.0) -> bool:
    E = [r[2] for r in rows]
    U = [r[3] for r in rows]
    return all(
        E[k + 1] <= E[k] + slack * max(1.0, abs(E[k])) and U[k + 1] <= U[k] + slack * max(1.0, abs(U[k]))
        for k in range(len(rows) - 1)
    )


FRONTIER_SLACK = 1e-7


def _crosslayer_frontier(spec: ExperimentSpec, base_dir):
    def one(seed):
        topo, sessions = load_instance(spec, seed, base_dir)
        if sessions is None:
            raise SpecError("crosslayer_frontier needs sessions")
        pts = crosslayer_sweep(topo, sessions, spec.weights)
        layered = [layer_by_layer_solve(topo, sessions, TradeoffWeights(p.lambda1, p.lambda2)) for p in pts]
        utils = [p.utility for p in pts]
        rel = relative_utility(utils, max(utils), len(sessions))
        cmp_rows = []
        for p, lay in zip(pts, layered):
            w = TradeoffWeights(p.lambda1, p.lambda2)
            joint = crosslayer_objective(topo, w, p.assignment, p.rates)
            cmp_rows.append(
                [seed, p.lambda1, p.lambda2, joint, lay.objective, p.energy, total_energy(topo, lay.assignment),
                 p.utility, transport_utility(lay.rates)]
            )
        return pts, rel, cmp_rows

    out = _map(one, spec.seeds)
    rows = _frontier_rows([o[0] for o in out], [o[1] for o in out])
    cmp_rows = [r for o in out for r in o[2]]
    header = ["seed", "lambda1", "lambda2", "crosslayer_objective", "layered_objective", "crosslayer_energy",
              "layered_energy", "crosslayer_utility", "layered_utility"]
    summary = {
        "points": len(rows),
        "monotone": _monotone(rows, FRONTIER_SLACK),
        "joint_dominates": all(r[3] <= r[4] + 1e-9 * max(1.0, abs(r[4])) for r in cmp_rows),
    }
    return {"frontier.csv": (FRONTIER_HEADER, rows), "comparison.csv": (header, cmp_rows)}, summary


def _convergence(spec: ExperimentSpec, base_dir):
    w = spec.weights[0]
    cfg = spec.config

    def one(seed):
        topo, sessions = load_instance(spec, seed, base_dir)
        if sessions is None:
            raise SpecError("convergence needs sessions")
        res = distributed_solve(topo, sessions, w, cfg)
        ref = centralized_solve(topo, sessions, w)
        return topo, sessions, res, ref

    out = _map(one, spec.seeds)
    rows = []
    per_seed = {}
    for seed, (topo, sessions, res, ref) in zip(spec.seeds, out):
        rows.extend(trace_rows(topo, sessions, res.trace, seed))
        x = link_throughput(topo, res.assignment)
        primal = crosslayer_objective(topo, w, res.assignment, feasible_rates(sessions, x, res.rates))
        change = res.trace.change
        per_seed[str(seed)] = {
            "converged": res.converged,
            "converged_at": res.trace.converged_at,
            "rounds": len(res.trace),
            "primal_objective": primal,
            "centralized_objective": ref.objective,
            "relative_gap": abs(primal - ref.objective) / max(1.0, abs(ref.objective)),
            "final_violation": max_violation(sessions, x, res.rates),
            "late_window_change": max(change[-cfg.change_window:]),
            "weak_duality_violations": len(res.trace.weak_duality_violations()),
        }
    summary = {"lambda1": w.lambda1, "lambda2": w.lambda2, "alpha": cfg.alpha, "gamma": cfg.gamma, "runs": per_seed}
    return {"trace.csv": (TRACE_HEADER, rows)}, summary


TRACE_HEADER = ["seed", "iter", "quantity", "id", "value"]


def trace_rows(topology: Topology, sessions: SessionSet, trace, seed: int = 0) -> list[list]:
    """Long-format trace: one row per quantity per round."""
    ids = topology.node_ids
    link_ids = [f"{ids[a]}-{ids[b]}" for a, b in zip(topology.src.tolist(), topology.dst.tolist())]
    rows = []
    for n in range(len(trace)):
        it = n + 1
        rows.extend([seed, it, "p", lid, float(v)] for lid, v in zip(link_ids, trace.p[n]))
        rows.extend([seed, it, "y", sid, float(v)] for sid, v in zip(sessions.ids, trace.y[n]))
        rows.extend([seed, it, "mu", lid, float(v)] for lid, v in zip(link_ids, trace.mu[n]))
        for name, val in (("dual_value", trace.dual[n]), ("primal_objective", trace.primal[n]),
                          ("max_violation", trace.violation[n]), ("max_change", trace.change[n])):
            rows.append([seed, it, name, "", "" if val is None else float(val)])
    return rows


def _baseline_comparison(spec: ExperimentSpec, base_dir):
    def one(seed):
        topo, _ = load_instance(spec, seed, base_dir)
        return compare_baselines(topo, label=str(seed))

    report = ComparisonReport(tuple(_map(one, spec.seeds)))
    header = ["seed", "target_utility", "optimal_energy", "node_energy", "link_energy", "node_ratio", "link_ratio",
              "link_capped"]
    rows = [
        [r.label, r.target_utility, r.optimal_energy, r.node_energy, r.link_energy, r.node_ratio, r.link_ratio,
         int(r.link_capped)]
        for r in report.records
    ]
    summary = {
        "instances": len(rows),
        "mean_node_ratio": report.mean_node_ratio,
        "mean_link_ratio": report.mean_link_ratio,
        "ordering_holds": all(r.optimal_energy <= r.node_energy <= r.link_energy for r in report.records),
    }
    return {"comparison.csv": (header, rows)}, summary


_RUNNERS = {
    "mac_frontier": _mac_frontier,
    "crosslayer_frontier": _crosslayer_frontier,
    "convergence": _convergence,
    "baseline_comparison": _baseline_comparison,
}


def run_experiment(spec: ExperimentSpec | Mapping[str, Any], base_dir: str | Path | None = None) -> ExperimentResult:
    """Run one experiment and write its artifacts into ``spec.output_dir``
    (relative paths are taken from ``base_dir`` when given)."""
    if not isinstance(spec, ExperimentSpec):
        spec = ExperimentSpec.from_dict(spec)
    base = Path(base_dir) if base_dir is not None else None
    tables, summary = _RUNNERS[spec.experiment](spec, base)
    out_dir = Path(spec.output_dir)
    if base is not None and not out_dir.is_absolute():
        out_dir = base / out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, (header, rows) in tables.items():
        files[name] = io.write_csv(out_dir / name, header, rows)
    summary = {"experiment": spec.experiment, "seeds": list(spec.seeds), **summary}
    files["summary.json"] = io.write_json(out_dir / "summary.json", summary)
    return ExperimentResult(summary, files)

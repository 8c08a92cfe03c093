"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 solver did not converge (outputs are
still written), 3 invalid input file.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ra_numopt import io
from ra_numopt.crosslayer import (
    SolverConfig,
    centralized_solve,
    crosslayer_objective,
    distributed_solve,
    feasible_rates,
    max_violation,
)
from ra_numopt.experiments import (
    ExperimentSpec,
    SpecError,
    TRACE_HEADER,
    compare_baselines,
    crosslayer_sweep,
    layer_by_layer_solve,
    run_experiment,
    trace_rows,
)
from ra_numopt.mac import TradeoffWeights, mac_coefficients, pareto_sweep_mac, solve_mac, weight_grid
from ra_numopt.network import (
    DegenerateInstanceError,
    GenConfig,
    generate_sessions,
    generate_topology,
    link_throughput,
    total_energy,
    transport_utility,
)

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED, EXIT_INVALID = 0, 1, 2, 3

log = logging.getLogger("ra_numopt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _weights(args) -> TradeoffWeights:
    try:
        return TradeoffWeights(args.l1, args.l2)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _grid(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, step = (float(v) for v in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            count = int(math.floor((b - a) / step + 1e-9)) + 1
            return [a + k * step for k in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:step or a,b,c") from None


def _load(args):
    inst = io.read_instance(args.net)
    sessions = inst.sessions
    if getattr(args, "sessions", None):
        sessions = generate_sessions(inst.topology, args.sessions, args.seed)
    return inst, sessions


def _need_sessions(sessions):
    if sessions is None or len(sessions) == 0:
        raise io.InstanceFormatError("$.sessions", "this command needs sessions (in the file or via --sessions)")
    return sessions


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(
            alpha=args.alpha,
            gamma=args.gamma,
            max_iters=args.max_iters,
            change_tol=args.change_tol,
            feas_tol=args.feas_tol,
            mu_floor=args.mu_floor,
            init_p=args.init_p,
            init_mu=args.init_mu,
            seed=args.seed,
            dual_every=args.dual_every,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# commands


def cmd_generate(args) -> int:
    try:
        cfg = GenConfig(
            node_count=args.nodes,
            cf_low=args.cf_low,
            cf_high=args.cf_high,
            interference_equals_communication=args.interference_scale is None,
            interference_scale=args.interference_scale or 1.5,
            session_count=args.sessions,
            seed=args.seed,
            capacity=args.capacity,
            energy=args.energy,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    topo = generate_topology(cfg)
    sessions = generate_sessions(topo, args.sessions, args.seed) if args.sessions else None
    io.write_instance(args.output, topo, sessions)
    print(f"wrote {args.output}: {topo.n} nodes, {topo.m} links, {len(sessions) if sessions else 0} sessions")
    return EXIT_OK


def cmd_solve_mac(args) -> int:
    inst, _ = _load(args)
    t = inst.topology
    w = _weights(args)
    a = solve_mac(t, w)
    co = mac_coefficients(t, w)
    x = link_throughput(t, a)
    E = total_energy(t, a)
    U = float(np.log(x).sum()) if np.all(x > 0) else -math.inf
    ids = t.node_ids
    node_rows = [[ids[i], co.A[i], co.B[i], co.C[i], a.P[i]] for i in range(t.n)]
    link_rows = [[ids[i], ids[j], a.p[k], x[k]] for k, (i, j) in enumerate(zip(t.src, t.dst))]
    if args.output:
        io.write_csv(args.output, ["node_id", "A", "B", "C", "P_star"], node_rows)
        links_out = args.links_output or Path(args.output).with_suffix(".links.csv")
        io.write_csv(links_out, ["from", "to", "p_star", "throughput"], link_rows)
    print("node_id,P_star")
    for r in node_rows:
        print(f"{r[0]},{io.format_float(r[4])}")
    print("from,to,p_star")
    for r in link_rows:
        print(f"{r[0]},{r[1]},{io.format_float(r[2])}")
    print(f"energy {io.format_float(E)}")
    print(f"utility {U!r}")
    return EXIT_OK


def cmd_solve_crosslayer(args) -> int:
    inst, sessions = _load(args)
    sessions = _need_sessions(sessions)
    t = inst.topology
    w = _weights(args)
    res = distributed_solve(t, sessions, w, _solver_config(args))
    x = link_throughput(t, res.assignment)
    rates = feasible_rates(sessions, x, res.rates)
    primal = crosslayer_objective(t, w, res.assignment, rates)
    if args.output:
        io.write_instance(args.output, t, sessions, io.Solution(res.assignment, rates))
    if args.trace:
        io.write_csv(args.trace, TRACE_HEADER, trace_rows(t, sessions, res.trace, args.seed))
    state = f"converged after {res.trace.converged_at} rounds" if res.converged else (
        f"not converged after {len(res.trace)} rounds (best iterate returned)"
    )
    print(state)
    print(f"objective {primal!r}")
    print(f"violation {max_violation(sessions, x, res.rates)!r}")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_solve_centralized(args) -> int:
    inst, sessions = _load(args)
    sessions = _need_sessions(sessions)
    t = inst.topology
    try:
        res = centralized_solve(t, sessions, _weights(args))
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    if args.output:
        io.write_instance(args.output, t, sessions, io.Solution(res.assignment, res.rates))
    print(f"objective {res.objective!r}")
    print(f"energy {total_energy(t, res.assignment)!r}")
    print(f"utility {transport_utility(res.rates)!r}")
    print(f"stationarity {res.stationarity:.3g} feasibility {res.feasibility:.3g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    inst, sessions = _load(args)
    t = inst.topology
    try:
        weights = weight_grid(args.l1_grid, args.l2)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.layer == "mac":
        points = pareto_sweep_mac(t, weights)
    else:
        try:
            points = crosslayer_sweep(t, _need_sessions(sessions), weights)
        except RuntimeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGED
    rows = [[p.lambda1, p.lambda2, p.energy, p.utility] for p in points]
    io.write_csv(args.output, ["lambda1", "lambda2", "energy", "utility"], rows)
    print(f"wrote {len(rows)} points to {args.output}")
    return EXIT_OK


def cmd_compare(args) -> int:
    inst, sessions = _load(args)
    t = inst.topology
    if args.mode == "baselines":
        rec = compare_baselines(t, args.target)
        header = ["target_utility", "optimal_energy", "node_energy", "link_energy", "node_ratio", "link_ratio",
                  "link_capped"]
        row = [rec.target_utility, rec.optimal_energy, rec.node_energy, rec.link_energy, rec.node_ratio,
               rec.link_ratio, int(rec.link_capped)]
    else:
        sessions = _need_sessions(sessions)
        w = _weights(args)
        try:
            joint = centralized_solve(t, sessions, w)
        except RuntimeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGED
        lay = layer_by_layer_solve(t, sessions, w)
        header = ["lambda1", "lambda2", "crosslayer_objective", "layered_objective", "crosslayer_energy",
                  "layered_energy", "crosslayer_utility", "layered_utility"]
        row = [w.lambda1, w.lambda2, joint.objective, lay.objective, total_energy(t, joint.assignment),
               total_energy(t, lay.assignment), transport_utility(joint.rates), transport_utility(lay.rates)]
    if args.output:
        io.write_csv(args.output, header, [row])
    for h, v in zip(header, row):
        print(f"{h} {v!r}")
    return EXIT_OK


def trace_summary(header, rows, window: int = 10) -> dict:
    if header != TRACE_HEADER:
        raise io.InstanceFormatError("header", f"expected {','.join(TRACE_HEADER)}")
    runs: dict[str, dict[str, dict[int, float]]] = {}
    for k, row in enumerate(rows):
        if len(row) != len(TRACE_HEADER):
            raise io.InstanceFormatError(f"row {k + 2}", "wrong number of fields")
        seed, it, qty, _, val = row
        if qty in ("dual_value", "primal_objective", "max_violation", "max_change") and val != "":
            try:
                runs.setdefault(seed, {}).setdefault(qty, {})[int(it)] = float(val)
            except ValueError:
                raise io.InstanceFormatError(f"row {k + 2}", "unparsable number") from None
    out = {}
    for seed in sorted(runs, key=lambda s: (len(s), s)):
        q = runs[seed]
        change = [q["max_change"][n] for n in sorted(q.get("max_change", {}))]
        primal = list(q.get("primal_objective", {}).values())
        dual = list(q.get("dual_value", {}).values())
        best = min(primal) if primal else None
        late = change[-window:]
        windows = [max(change[s:s + window]) for s in range(0, len(change), window)]
        tail = windows[-5:]
        out[seed] = {
            "rounds": len(change),
            "final_change": change[-1] if change else None,
            "late_window_change": max(late) if late else None,
            "late_windows_shrinking": all(b <= a for a, b in zip(tail, tail[1:])),
            "final_violation": q.get("max_violation", {}).get(len(change)),
            "best_primal": best,
            "max_dual": max(dual) if dual else None,
            "weak_duality_holds": best is None or not dual or max(dual) <= best + 1e-9 * max(1.0, abs(best)),
        }
    return out


def cmd_trace_report(args) -> int:
    header, rows = io.read_csv(args.trace)
    summary = trace_summary(header, rows, args.window)
    if args.output:
        io.write_json(args.output, summary)
    sys.stdout.write(io.dumps(summary))
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = io.read_instance(args.net)
    t = inst.topology
    problems = []
    if t.isolated_nodes():
        problems.append(f"isolated nodes {t.isolated_nodes()}")
    if np.any(t.interference_load < 0):
        problems.append("negative interference load")
    if problems:
        for p in problems:
            print(f"{args.net}: {p}", file=sys.stderr)
        return EXIT_INVALID
    n_s = len(inst.sessions) if inst.sessions else 0
    sol = " with solution" if inst.solution else ""
    print(f"{args.net}: valid ({t.n} nodes, {t.m} links, {n_s} sessions{sol})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    path = Path(args.spec)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise io.InstanceFormatError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(data, dict):
        raise SpecError("spec must be a JSON object")
    if args.output_dir:
        data = {**data, "output_dir": args.output_dir}
    spec = ExperimentSpec.from_dict(data)
    res = run_experiment(spec, base_dir=path.parent if not args.output_dir else None)
    sys.stdout.write(io.dumps(res.summary))
    runs = res.summary.get("runs", {})
    if any(not r["converged"] for r in runs.values()):
        return EXIT_NONCONVERGED
    return EXIT_OK


# parser


def _add_weights(p, l1=1.0):
    p.add_argument("--l1", type=float, default=l1, help="energy weight lambda1")
    p.add_argument("--l2", type=float, default=1.0, help="utility weight lambda2")


def _add_common(p, net=True):
    if net:
        p.add_argument("--net", required=True, help="instance JSON file")
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ra-numopt", description="Energy/utility optimization of random-access networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="draw a random instance")
    _add_common(p, net=False)
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--cf-low", type=float, default=0.15)
    p.add_argument("--cf-high", type=float, default=0.25)
    p.add_argument("--interference-scale", type=float, default=None,
                   help="hearing radius over communication radius (default: equal)")
    p.add_argument("--sessions", type=int, default=0)
    p.add_argument("--capacity", type=float, default=1.0)
    p.add_argument("--energy", type=float, default=1.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve-mac", help="closed-form MAC optimum")
    _add_common(p)
    _add_weights(p)
    p.add_argument("-o", "--output", help="per-node CSV (node_id, A, B, C, P_star)")
    p.add_argument("--links-output", help="per-link CSV (default: <output>.links.csv)")
    p.set_defaults(func=cmd_solve_mac)

    p = sub.add_parser("solve-crosslayer", help="distributed price/rate/probability iteration")
    _add_common(p)
    _add_weights(p, l1=5.0)
    p.add_argument("--sessions", type=int, default=0, help="draw this many sessions instead of using the file's")
    d = SolverConfig()
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--change-tol", type=float, default=d.change_tol)
    p.add_argument("--feas-tol", type=float, default=d.feas_tol)
    p.add_argument("--mu-floor", type=float, default=d.mu_floor)
    p.add_argument("--init-p", type=float, default=d.init_p)
    p.add_argument("--init-mu", type=float, default=d.init_mu)
    p.add_argument("--dual-every", type=int, default=d.dual_every, help="evaluate D(mu) every k rounds (0: never)")
    p.add_argument("-o", "--output", help="instance JSON with a solution block")
    p.add_argument("--trace", help="long-format trace CSV")
    p.set_defaults(func=cmd_solve_crosslayer)

    p = sub.add_parser("solve-centralized", help="interior-point reference solution")
    _add_common(p)
    _add_weights(p, l1=5.0)
    p.add_argument("--sessions", type=int, default=0)
    p.add_argument("-o", "--output", help="instance JSON with a solution block")
    p.set_defaults(func=cmd_solve_centralized)

    p = sub.add_parser("sweep", help="energy/utility frontier over a lambda1 grid")
    _add_common(p)
    p.add_argument("--layer", choices=("mac", "crosslayer"), default="mac")
    p.add_argument("--l1-grid", type=_grid, default=_grid("0:30:1"))
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--sessions", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="uniform baselines or layer-by-layer versus joint optimum")
    _add_common(p)
    p.add_argument("--mode", choices=("baselines", "layered"), default="baselines")
    p.add_argument("--target", type=float, default=None, help="utility to match (baselines mode)")
    _add_weights(p, l1=5.0)
    p.add_argument("--sessions", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trace-report", help="summarize a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_trace_report)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("--net", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("experiment", help="run an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--output-dir", help="override the spec's output directory")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.InstanceFormatError, SpecError, DegenerateInstanceError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"invalid input: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

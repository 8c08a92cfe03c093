"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--nodes 100 --repeat 200]

Times the two throughput kernels on a random instance and a short
distributed solve on a small one, for every available backend, and checks
that the backends agree.
"""
import argparse
import time

import numpy as np

from ra_numopt import kernels
from ra_numopt.crosslayer import SolverConfig, distributed_solve
from ra_numopt.mac import TradeoffWeights
from ra_numopt.network import GenConfig, generate_sessions, generate_topology


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--rounds", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    topo = generate_topology(GenConfig(args.nodes, seed=args.seed))
    ptr, idx = topo.affect_csr
    rng = np.random.default_rng(args.seed)
    P = rng.uniform(0.0, 0.3, topo.n)
    w = rng.uniform(0.0, 1.0, topo.m)
    small = generate_topology(GenConfig(10, 0.3, 0.45, seed=args.seed))
    sessions = generate_sessions(small, 3, args.seed)
    cfg = SolverConfig(max_iters=args.rounds, dual_every=0)
    weights = TradeoffWeights(5.0, 1.0)

    print(f"instance: {topo.n} nodes, {topo.m} links, {len(idx)} link/node couplings")
    results = {}
    for name in kernels.available_backends():
        kernels.set_backend(name)
        impl = kernels.get_backend(name)
        r = impl.reception(P, ptr, idx)
        g = impl.interference_weights(w, P, ptr, idx, topo.n)
        t_r = best_of(lambda: impl.reception(P, ptr, idx), args.repeat)
        t_g = best_of(lambda: impl.interference_weights(w, P, ptr, idx, topo.n), args.repeat)
        t_s = best_of(lambda: distributed_solve(small, sessions, weights, cfg), 3)
        results[name] = (r, g)
        print(
            f"{name:>7}: reception {t_r * 1e6:9.1f} us   interference_weights {t_g * 1e6:9.1f} us   "
            f"distributed_solve ({args.rounds} rounds) {t_s * 1e3:8.1f} ms"
        )
    if len(results) > 1:
        (r0, g0), (r1, g1) = results.values()
        print(
            "max abs difference between backends: "
            f"reception {np.max(np.abs(r0 - r1)):.2e}, interference_weights {np.max(np.abs(g0 - g1)):.2e}"
        )


if __name__ == "__main__":
    main()

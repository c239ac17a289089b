"""Compiled core vs numpy fallback on the two hot paths.

    python3 benchmarks/bench_core.py [--repeat 5]

Times fault drawing/injection over a Black-Scholes-sized run and float32
detector inference over a DCT-sized feature batch, checks that both backends
agree bit for bit, and prints one row per (operation, backend).
"""

import argparse
import time

import numpy as np

from sdc_sentinel.archs import ArchitectureSpec
from sdc_sentinel.backend import available_backends
from sdc_sentinel.mlp import Network


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def fault_cases(n):
    costs = np.full(n, 179.0)
    eligible = np.ones(n, np.uint8)
    ids = np.arange(n, dtype=np.int64)
    outputs = np.random.default_rng(0).uniform(0, 50, (n, 1)).astype(np.float32)
    return costs, eligible, ids, outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--tasks", type=int, default=200_000)
    ap.add_argument("--vectors", type=int, default=28_672)
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled core not built; only the python backend is available")

    costs, eligible, ids, outputs = fault_cases(args.tasks)
    rng = np.random.default_rng(1)
    net = Network.initialize(ArchitectureSpec.parse("10,16,4,2"), np.zeros(10), np.ones(10), rng)
    weights = [w.astype(np.float32) for w in net.weights]
    biases = [b.astype(np.float32) for b in net.biases]
    relu = [True] * (len(weights) - 1) + [False]
    x = rng.normal(size=(args.vectors, 10)).astype(np.float32)
    mean, std = np.zeros(10, np.float32), np.ones(10, np.float32)

    rows, results = [], {}
    for name, core in backends.items():
        def inject(core=core):
            buf = outputs.copy()
            counts = core.inject_faults(buf, costs, eligible, ids, 7, 1e-4, 8)
            return np.asarray(counts), buf

        t_draw, draw = best_of(lambda: core.draw_faults(costs, eligible, ids, 7, 1e-4, 8, 1536),
                               args.repeat)
        t_inj, inj = best_of(inject, args.repeat)
        t_fwd, fwd = best_of(lambda: core.mlp_forward(x, mean, std, 16.0, weights, biases, relu),
                             args.repeat)
        results[name] = (draw, inj, np.asarray(fwd))
        rows += [("draw_faults", name, t_draw, args.tasks), ("inject_faults", name, t_inj, args.tasks),
                 ("mlp_forward", name, t_fwd, args.vectors)]

    print(f"{'operation':<14} {'backend':<8} {'best (ms)':>10} {'items/s':>12} {'speedup':>8}")
    base = {op: t for op, name, t, _ in rows if name == "python"}
    for op, name, t, n in rows:
        print(f"{op:<14} {name:<8} {t * 1e3:>10.2f} {n / t:>12.3g} {base[op] / t:>7.1f}x")

    if "cython" in results:
        (pd, pi, pf), (cd, ci, cf) = results["python"], results["cython"]
        same = (all(np.array_equal(np.asarray(a), np.asarray(b)) for a, b in zip(pd, cd))
                and np.array_equal(pi[0], ci[0]) and np.array_equal(pi[1].view(np.uint32), ci[1].view(np.uint32))
                and np.array_equal(pf.view(np.uint32), cf.view(np.uint32)))
        print(f"backends agree bitwise: {same}")


if __name__ == "__main__":
    main()

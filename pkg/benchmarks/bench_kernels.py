"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints the best wall time per backend for the KDR recursions and the event
simulator, plus the speed-up and a parity check of the outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lossnet import kernels
from lossnet.model import NetworkSpec, hunt_network, hunt_policy
from lossnet.sim import run_experiment


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases():
    two_link = NetworkSpec.build([8.0, 6.0, 3.0], [[1, 0, 2], [0, 1, 1]], [200, 200])
    yield "kdr_nd 2 links C=200", lambda b: kernels.kdr_nd(two_link.kappa, two_link.A, two_link.int_capacities(), backend=b)[0]
    loads, sizes = np.array([40.0, 10.0, 4.0]), np.array([1, 3, 6])
    yield "kdr_1d C=20000", lambda b: kernels.kdr_1d(loads, sizes, 20000, backend=b)
    hunt = hunt_network([4.0, 4.0, 3.0], 2).scaled(20)
    yield "simulate hunt N=20, 2 reps", lambda b: run_experiment(
        hunt, hunt_policy(4, 4), seed=1, horizon=1000.0, replications=2, backend=b
    ).P


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if "cython" not in kernels.available():
        print("compiled extension not built; only the python backend is available")
        return 1
    print(f"{'case':32s} {'cython s':>10s} {'python s':>10s} {'speed-up':>9s}  parity")
    for name, fn in cases():
        tc, oc = best_of(lambda: fn("cython"), args.repeat)
        tp, op = best_of(lambda: fn("python"), max(1, args.repeat // 3))
        same = np.allclose(oc, op, rtol=1e-12, atol=0.0)
        print(f"{name:32s} {tc:10.4f} {tp:10.4f} {tp / tc:8.1f}x  {'ok' if same else 'MISMATCH'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

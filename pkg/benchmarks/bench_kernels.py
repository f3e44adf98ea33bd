"""Compare the compiled and pure-Python risk-parameter kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 1 6 60]

The kernels are timed directly, then a short projectile run is timed once per
backend in a subprocess (``DRKF_PURE_PYTHON=1`` selects the fallback).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from drkf import _pykernels

try:
    from drkf import _ckernels
except ImportError:
    _ckernels = None

DELTA = 1e-12
TOL = 1e-10
MAX_ITER = 200

END_TO_END = (
    "import time; from drkf.scenario import ScenarioConfig; from drkf.experiment import run_experiment;"
    "from drkf._backend import BACKEND; t=time.perf_counter();"
    "run_experiment(ScenarioConfig(seed=1, T={T}, c=0.02));"
    "print(BACKEND, time.perf_counter()-t)"
)


def _eigs(rng, n):
    return np.ascontiguousarray(rng.uniform(0.05, 20.0, n))


def bench_kernel(module, eigs, c, repeat, number):
    def call():
        for d in eigs:
            module.bisect_theta_eigs(d, c, TOL, MAX_ITER, DELTA)

    return min(timeit.repeat(call, repeat=repeat, number=number)) / (number * len(eigs))


def end_to_end(pure, T):
    env = dict(os.environ)
    if pure:
        env["DRKF_PURE_PYTHON"] = "1"
    else:
        env.pop("DRKF_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(T=T)], env=env,
                         capture_output=True, text=True, check=True)
    backend, seconds = out.stdout.split()
    return backend, float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--sizes", type=int, nargs="+", default=[1, 6, 60])
    ap.add_argument("--c", type=float, default=0.02)
    ap.add_argument("--T", type=int, default=300, help="horizon of the end-to-end run (0 skips it)")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'n':>4} {'python us':>11} {'cython us':>11} {'speedup':>8}")
    for n in args.sizes:
        eigs = [_eigs(rng, n) for _ in range(50)]
        py = bench_kernel(_pykernels, eigs, args.c, args.repeat, args.number)
        if _ckernels is None:
            print(f"{n:>4} {py * 1e6:>11.2f} {'n/a':>11} {'n/a':>8}")
            continue
        cy = bench_kernel(_ckernels, eigs, args.c, args.repeat, args.number)
        # both must land on the same root
        for d in eigs:
            a, _ = _pykernels.bisect_theta_eigs(d, args.c, TOL, MAX_ITER, DELTA)
            b, _ = _ckernels.bisect_theta_eigs(d, args.c, TOL, MAX_ITER, DELTA)
            assert abs(a - b) <= 1e-12 * max(abs(a), 1e-300), (n, a, b)
        print(f"{n:>4} {py * 1e6:>11.2f} {cy * 1e6:>11.2f} {py / cy:>7.1f}x")
    if _ckernels is None:
        print("compiled extension not built; only the fallback was timed")

    if args.T > 0:
        print(f"\nprojectile run, T={args.T}, eight variants")
        for pure in (True, False):
            backend, sec = end_to_end(pure, args.T)
            print(f"  {backend:<7} {sec:7.2f} s")


if __name__ == "__main__":
    main()

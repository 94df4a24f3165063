"""Plant kernel throughput: compiled extension versus the pure-Python reference.

    python3 benchmarks/bench_kernels.py [--substeps N] [--repeat R] [--scenario NAME]

Both backends integrate the same state from the same inputs; the script also
confirms that their results are bit-identical.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tbwsim.kernels import advance_plant_ext, advance_plant_py
from tbwsim.plant import Plant


def _inputs():
    plant = Plant()
    P = plant.P.copy()
    P[1] = 25_000.0  # microsteps/s, opening
    return plant.S.copy(), P


def bench_kernel(substeps: int, repeat: int) -> dict:
    out = {}
    for name, fn in (("python", advance_plant_py), ("cython", advance_plant_ext)):
        if fn is None:
            continue
        S0, P = _inputs()
        best = min(timeit.repeat(lambda: fn(S0.copy(), P, substeps), number=1, repeat=repeat))
        out[name] = best
        print(f"{name:7s} {substeps} substeps: {best * 1e3:8.2f} ms  "
              f"({substeps / best / 1e6:6.2f} M substeps/s)")
    if len(out) == 2:
        print(f"speed-up: {out['python'] / out['cython']:.1f}x")
        S0, P = _inputs()
        a, b = S0.copy(), S0.copy()
        advance_plant_py(a, P, substeps)
        advance_plant_ext(b, P, substeps)
        print(f"bit-identical state: {bool(np.array_equal(a, b))}")
    return out


def bench_scenario(name: str) -> None:
    """Whole-scenario wall time under each backend (separate processes, since
    the backend is chosen at import)."""
    code = ("import time; from tbwsim.harness.scenario import resolve; "
            "from tbwsim.harness.runner import run; from tbwsim import kernels; "
            f"t=time.perf_counter(); r=run(resolve({name!r})); "
            "print(kernels.BACKEND, round(time.perf_counter()-t, 3), r.passed)")
    for pure in ("", "1"):
        env = dict(os.environ, TBWSIM_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        backend, secs, passed = res.stdout.split()
        print(f"scenario {name}: backend={backend:7s} {float(secs):7.2f} s  passed={passed}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--substeps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scenario", default="full_chain_random")
    args = ap.parse_args()
    bench_kernel(args.substeps, args.repeat)
    if args.scenario:
        bench_scenario(args.scenario)


if __name__ == "__main__":
    main()

"""Compare the compiled spline kernels with their numpy twins.

    python benchmarks/bench_kernels.py [--points N] [--repeat R]

Prints the best-of-R time per call and the speedup for 1D and 2D cubic
evaluation, plus one end-to-end flow map that exercises the interpolant.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from bflow import _kernels_py

try:
    from bflow import _kernels
except ImportError:
    _kernels = None


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(points, repeat, rng):
    n = 256
    c1 = rng.standard_normal((n + 2, 2))
    u = rng.uniform(0, n - 1, points)
    c2 = rng.standard_normal((130, 130, 2))
    a, b = rng.uniform(0, 127, points), rng.uniform(0, 127, points)
    cases = {
        "eval_1d": lambda k: k.eval_1d(c1, u, n, False, 0),
        "eval_2d": lambda k: k.eval_2d(c2, a, b, 128, 128, True, False, 0, 0),
        "eval_2d d/du": lambda k: k.eval_2d(c2, a, b, 128, 128, True, False, 1, 0),
    }
    for name, call in cases.items():
        t_py = best(lambda: call(_kernels_py), repeat)
        t_c = best(lambda: call(_kernels), repeat) if _kernels else float("nan")
        yield name, t_py, t_c


END_TO_END = (
    "import time; from bflow.boundary import BoundaryDiffeo, section_k;"
    "import numpy as np; psi = BoundaryDiffeo.from_function(lambda t: t + 0.1*np.sin(t));"
    "t0 = time.perf_counter(); section_k(psi); print(time.perf_counter() - t0)"
)


def end_to_end(pure: bool) -> float:
    env = dict(os.environ)
    env.pop("BFLOW_PURE_PYTHON", None)
    if pure:
        env["BFLOW_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numpy [ms]':>12}{'compiled [ms]':>15}{'speedup':>10}   ({args.points} points)")
    for name, t_py, t_c in kernel_rows(args.points, args.repeat, rng):
        print(f"{name:<14}{t_py * 1e3:>12.2f}{t_c * 1e3:>15.2f}{t_py / t_c:>9.1f}x")
    if not args.skip_end_to_end:
        t_py, t_c = end_to_end(True), end_to_end(False)
        print(f"{'section_k':<14}{t_py * 1e3:>12.0f}{t_c * 1e3:>15.0f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()

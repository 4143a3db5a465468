"""Compare the compiled kernel extension against the pure-Python fallback.

Backend selection happens at import time (``COCOLQ_PURE_PYTHON``), so the
script times one backend per process and, when run without ``--single``,
re-invokes itself once per backend and prints the side-by-side table::

    python3 benchmarks/kernel_benchmark.py

Timed pieces: the symmetric eigensolver, the SVD, the Cholesky factor/solve
pair (matrix sizes 4 to 16), and one end-to-end covariance-constrained
synthesis step (d = p = 2 and d = p = 4).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

SIZES = (4, 8, 16)
REPEATS = {4: 200, 8: 60, 16: 10}


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(2):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def run_single() -> dict:
    from cocolq import backend_name
    from cocolq._backend import chol_factor, chol_solve_factor, jacobi_eig, \
        jacobi_svd
    from cocolq import controller
    from cocolq.controller import CocoConfig

    rng = np.random.default_rng(42)
    results = {"backend": backend_name(), "kernels": {}, "steps": {}}
    for n in SIZES:
        G = rng.standard_normal((n, n))
        S = G @ G.T + n * np.eye(n)
        M = rng.standard_normal((n, n))
        rhs = rng.standard_normal((n, 3))
        L = chol_factor(S)
        reps = REPEATS[n]
        results["kernels"][n] = {
            "eig": _time(lambda: jacobi_eig(S), reps),
            "svd": _time(lambda: jacobi_svd(M), reps),
            "chol": _time(lambda: chol_factor(S), reps),
            "solve": _time(lambda: chol_solve_factor(L, rhs), reps),
        }

    for d, p in ((2, 2), (4, 4)):
        A = rng.standard_normal((d, d)) * 0.5
        B = rng.standard_normal((d, p))
        while np.linalg.matrix_rank(B) < d:  # pragma: no cover
            B = rng.standard_normal((d, p))
        cfg = CocoConfig(alpha=0.4)
        Q, R, W = np.eye(d), np.eye(p), np.eye(d)
        step = controller.coco_step(A, B, Q, R, W, cfg)
        assert step.status.value == "Ok", step.status
        results["steps"][f"d{d}p{p}"] = _time(
            lambda: controller.coco_step(A, B, Q, R, W, cfg), 5)
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--single", action="store_true",
                        help="time the currently selected backend and print "
                             "JSON (used by the parent invocation)")
    args = parser.parse_args()

    if args.single:
        print(json.dumps(run_single()))
        return 0

    runs = {}
    for pure in ("0", "1"):
        env = dict(os.environ, COCOLQ_PURE_PYTHON=pure)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--single"],
            env=env, capture_output=True, text=True, check=True)
        data = json.loads(out.stdout.strip().splitlines()[-1])
        runs[data["backend"]] = data

    if len(runs) == 1:
        name = next(iter(runs))
        print(f"only the {name!r} backend is available; no comparison")

    def fmt(sec: float) -> str:
        return f"{sec * 1e6:9.1f}"

    names = list(runs)
    print(f"{'kernel':>12s} {'n':>3s} " +
          " ".join(f"{n + ' (us)':>14s}" for n in names) +
          ("   speedup" if len(names) == 2 else ""))
    for n in SIZES:
        for kernel in ("eig", "svd", "chol", "solve"):
            vals = [runs[b]["kernels"][str(n)][kernel] for b in names]
            line = f"{kernel:>12s} {n:>3d} " + \
                " ".join(f"{fmt(v):>14s}" for v in vals)
            if len(vals) == 2 and vals[0] > 0:
                line += f"   {vals[1] / vals[0]:6.1f}x"
            print(line)
    print()
    for key in runs[names[0]]["steps"]:
        vals = [runs[b]["steps"][key] for b in names]
        line = f"{'synthesis ' + key:>16s} " + \
            " ".join(f"{v * 1e3:11.2f} ms" for v in vals)
        if len(vals) == 2 and vals[0] > 0:
            line += f"   {vals[1] / vals[0]:6.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())

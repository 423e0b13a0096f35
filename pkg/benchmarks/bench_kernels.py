"""Compare the compiled and numpy LQR kernels.

Times the backward pass and the closed-loop rollout on random instances for a
few (tau, n_x, n_u) shapes and prints a table with the speedup, after checking
that both backends agree.

    python benchmarks/bench_kernels.py [--reps 7] [--csv out.csv]
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from regilqr.kernels import available_backends

SHAPES = [(20, 2, 2), (100, 2, 1), (100, 4, 4), (500, 4, 2), (200, 8, 4), (100, 16, 8)]


def random_instance(rng, tau, n, m):
    A = rng.standard_normal((tau, n, n)) / np.sqrt(n)
    B = rng.standard_normal((tau, n, m))
    L = rng.standard_normal((tau, n, n))
    P = L @ np.swapaxes(L, 1, 2) + np.eye(n)
    p = rng.standard_normal((tau, n))
    return A, B, P, p


def time_call(fn, args, reps):
    fn(*args)
    out = []
    for _ in range(reps):
        n = 1
        while True:
            t0 = time.perf_counter()
            for _ in range(n):
                fn(*args)
            dt = time.perf_counter() - t0
            if dt > 0.02:
                break
            n *= 2
        out.append(dt / n * 1e3)
    return statistics.median(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    for tau, n, m in SHAPES:
        A, B, P, p = random_instance(rng, tau, n, m)
        ref = None
        for name, (bp, ro) in backends.items():
            K, k, J, j, c, fail = bp(A, B, P, p, 1.0)
            assert fail == -1
            if ref is None:
                ref = (K, k)
            else:
                err = max(np.abs(K - ref[0]).max(), np.abs(k - ref[1]).max())
                assert err < 1e-8 * (1 + np.abs(ref[0]).max()), f"backends disagree: {err}"
            t_bp = time_call(bp, (A, B, P, p, 1.0), args.reps)
            t_ro = time_call(ro, (K, k, A, B), args.reps)
            rows.append({"tau": tau, "n_x": n, "n_u": m, "backend": name,
                         "backward_ms": t_bp, "rollout_ms": t_ro})
    print(f"{'tau':>5} {'n_x':>4} {'n_u':>4} {'backend':>8} {'backward ms':>12} {'rollout ms':>11} {'speedup':>8}")
    base = {}
    for r in rows:
        key = (r["tau"], r["n_x"], r["n_u"])
        if r["backend"] == "python":
            base[key] = r["backward_ms"]
    for r in rows:
        key = (r["tau"], r["n_x"], r["n_u"])
        sp = base[key] / r["backward_ms"]
        r["speedup"] = sp
        print(f"{r['tau']:>5} {r['n_x']:>4} {r['n_u']:>4} {r['backend']:>8} "
              f"{r['backward_ms']:>12.4f} {r['rollout_ms']:>11.4f} {sp:>8.1f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()

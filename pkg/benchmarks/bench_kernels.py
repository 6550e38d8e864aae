"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel is run on both backends with identical inputs; the table shows
the best wall time over ``--repeat`` runs and whether the outputs agree.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from relu_unwrap import kernels
from relu_unwrap.simplify import connected_knn_graph


def cases(quick: bool):
    rng = np.random.default_rng(0)
    n_rows = 20_000 if quick else 200_000
    keys = rng.integers(0, 2, size=(n_rows, 20), dtype=np.uint8)
    keys[:, :14] = 0  # a few hundred distinct patterns, like a trained network's regions
    m = 300 if quick else 1000
    pts = rng.normal(size=(m, 3))
    A, _ = connected_knn_graph(rng.normal(size=(m, 2)), max(1, m // 100))
    indptr, indices = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    n, p = (400, 10) if quick else (2000, 20)
    X = rng.normal(size=(n, p))
    y = X[:, :3] @ [1.0, -2.0, 0.5] + rng.normal(size=n)
    return {
        f"group_rows  {n_rows}x20": ("group_rows", (keys,)),
        f"ward_tree   m={m}": ("ward_tree", (pts, indptr, indices)),
        f"lasso_cd    {n}x{p}": ("lasso_cd", (X, y, np.ones(n), 5.0, np.zeros(p), 0.0, 1e-10, 1000)),
    }


def agree(a, b) -> bool:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(np.asarray(x, dtype=float), np.asarray(y, dtype=float), rtol=1e-9, atol=1e-9)
               for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)

    names = sorted(kernels.BACKENDS)
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(names)}")
    if "cython" not in names:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<26}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}{'agree':>8}")
    for label, (fn, fargs) in cases(args.quick).items():
        times, outs = {}, {}
        for name in names:
            f = getattr(kernels.get_backend(name), fn)
            outs[name] = f(*fargs)
            times[name] = min(timeit.repeat(lambda: f(*fargs), number=1, repeat=args.repeat))
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        same = agree(outs["python"], outs["cython"]) if "cython" in outs else True
        print(f"{label:<26}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names) + f"{speed:>9.1f}x"
              + f"{'yes' if same else 'NO':>8}")


if __name__ == "__main__":
    main()

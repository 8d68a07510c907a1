"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the graph model at training time (a batch of 150 samples,
11-row neighbour matrices) and one boosting split search.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from trafficast.kernels import backends


def cases(rng: np.random.Generator) -> dict:
    B, N, R, T, I = 150, 60, 11, 24, 5
    s = rng.normal(size=(B, N, T))
    nbr = rng.integers(0, N, size=(N, R))
    w_link = rng.normal(size=(N, R, I))
    w_shared = rng.normal(size=(1, R, I))
    dz = rng.normal(size=(B, N, T - I + 1))
    xs = np.sort(rng.normal(size=(16, 8000)), axis=1)
    ys = rng.normal(size=(16, 8000))
    return {
        "graph_conv_forward per-link": lambda k: k.graph_conv_forward(s, nbr, w_link, np.zeros(N)),
        "graph_conv_forward shared": lambda k: k.graph_conv_forward(s, nbr, w_shared, np.zeros(1)),
        "graph_conv_backward per-link": lambda k: k.graph_conv_backward(s, nbr, w_link, dz),
        "best_split 16x8000": lambda k: k.best_split(xs, ys, 5),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = backends()
    if "cython" not in impls:
        print("compiled backend not built; run `python3 setup.py build_ext --inplace` first")
    print(f"{'kernel':<30} " + " ".join(f"{name + ' ms':>12}" for name in impls) + "   speed-up")
    for name, fn in cases(np.random.default_rng(0)).items():
        best = {}
        for backend, mod in impls.items():
            fn(mod)  # warm-up
            best[backend] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        ratio = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{name:<30} " + " ".join(f"{best[b]:>12.2f}" for b in impls) + f"   {ratio:8.1f}x")


if __name__ == "__main__":
    main()

"""Time the numba and numpy kernel backends on the pairwise manifold kernels and on full runs.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time
import warnings

import numpy as np

from mcons import kernels
from mcons.engine import run
from mcons.experiment import load_config, prepare_run
from mcons.manifolds import Grassmann, Sphere


def _time(fn, repeat):
    fn()  # warm-up (and JIT compile)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return 1e3 * best


def kernel_cases(rng):
    N = 30
    S = Sphere(4)
    Xs = S.exp(S.random_point(rng)[None], S.random_tangent(np.broadcast_to(S.random_point(rng), (N, 4, 1)), 0.2, rng))
    Q = rng.uniform(size=(N, N))
    Q = (Q + Q.T) / (2 * N)
    np.fill_diagonal(Q, 0.0)
    Gs = S.proj(Xs, rng.standard_normal(Xs.shape))
    G = Grassmann(50, 3)
    c = G.random_point(rng)
    Xg = G.exp(np.broadcast_to(c, (10, 50, 3)), G.random_tangent(np.broadcast_to(c, (10, 50, 3)), 0.01, rng))
    Qg = Q[:10, :10]
    return {
        "Sphere.pair_dist_sq (N=30)": lambda: S.pair_dist_sq(Xs),
        "Sphere.consensus_grad (N=30)": lambda: S.consensus_grad(Xs, Q),
        "Sphere.transport_mix (N=30)": lambda: S.transport_mix(Xs, Xs, Gs, Q),
        "Grassmann.pair_dist_sq (G(50,3), N=10)": lambda: G.pair_dist_sq(Xg),
        "Grassmann.consensus_grad (G(50,3), N=10)": lambda: G.consensus_grad(Xg, Qg),
    }


def full_run(name):
    cfg = load_config(name)
    problem, rc, init = prepare_run(cfg)
    return lambda: run(problem, rc, init)


def main():
    warnings.filterwarnings("ignore", message="initial configuration")
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    runs = {f"full run {n}": full_run(n) for n in ("sphere_n30.json", "pca_desk.json")}
    backends = kernels.available_backends()
    print(f"{'case':45s}" + "".join(f"{b + ' ms':>14s}" for b in backends) + f"{'speedup':>10s}")
    for label, fn in list(cases.items()) + list(runs.items()):
        rep = args.repeat if label in cases else 1
        ms = {}
        for b in backends:
            kernels.set_backend(b)
            ms[b] = _time(fn, rep)
        speed = ms["numpy"] / ms["numba"] if "numba" in ms else float("nan")
        print(f"{label:45s}" + "".join(f"{ms[b]:14.3f}" for b in backends) + f"{speed:10.2f}x")


if __name__ == "__main__":
    main()

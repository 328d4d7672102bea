"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py --sizes 256,1024,2048 --repeat 5

Prints one row per (kernel, n) with the best-of-repeat wall time of each
backend and the speedup. The first numba call is made before timing so JIT
compilation is excluded.
"""
import argparse
import time

import numpy as np

from pcadv import _accel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, k, rng):
    p = rng.normal(size=(n, 3))
    q = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    nb = _accel.knn_np(p, k)
    coef = rng.normal(size=n)
    return {
        "knn": ((p, k), _accel.knn_np, _accel.knn_nb),
        "nearest": ((q, p), _accel.nearest_np, _accel.nearest_nb),
        "kappa": ((p, nrm, nb), _accel.kappa_np, _accel.kappa_nb),
        "kappa_grad": ((p, nrm, nb, coef), _accel.kappa_grad_np, _accel.kappa_grad_nb),
        "knn_mean_dist": ((p, nb, True), _accel.knn_mean_dist_np, _accel.knn_mean_dist_nb),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,2048")
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<14}{'n':>6}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, (a, f_np, f_nb) in cases(n, args.k, rng).items():
            ref, got = f_np(*a), f_nb(*a)   # warm-up doubles as an agreement check
            for x, y in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
                np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12)
            t_np = best_of(lambda: f_np(*a), args.repeat)
            t_nb = best_of(lambda: f_nb(*a), args.repeat)
            print(f"{name:<14}{n:>6}{t_np * 1e3:>11.3f}{t_nb * 1e3:>11.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()

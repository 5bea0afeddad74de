"""Time the hot kernels under each available backend.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints median wall time per call and the compiled/python speedup.
"""

import argparse
import timeit

import numpy as np

from covaroc import kernels


def _mixture_case(rng, n, F, H):
    y = rng.standard_normal(n)
    phi = np.column_stack([rng.random((n, F - 1)), np.ones(n)])
    ww = 0.3 * rng.standard_normal((H, F))
    wl = 0.3 * rng.standard_normal((H, F))
    ls = np.log(rng.uniform(0.3, 1.0, H))
    return y, phi, ww, wl, ls


def _quantile_case(rng, rows, H):
    pi = rng.dirichlet(np.ones(H), rows)
    mu = rng.standard_normal((rows, H))
    sigma = rng.uniform(0.05, 1.0, (rows, H))
    p = rng.uniform(1e-4, 1 - 1e-4, rows)
    return pi, mu, sigma, p


def cases(rng):
    for n, F, H in [(1024, 101, 4), (1024, 11, 4), (200, 1, 2), (50_000, 101, 4)]:
        args = _mixture_case(rng, n, F, H)
        yield (f"loglik+grad n={n} F={F} H={H}",
               lambda b, a=args: kernels.mixture_loglik(*a, grad=True, backend=b))
    for rows in (10_000, 100_000):
        pi, mu, sigma, p = _quantile_case(rng, rows, 4)
        yield (f"cdf rows={rows} H=4",
               lambda b, a=(pi, mu, sigma, mu[:, 0]): kernels.mixture_cdf(*a, backend=b))
        yield (f"quantile rows={rows} H=4",
               lambda b, a=(pi, mu, sigma, p): kernels.mixture_quantile(*a, backend=b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':36s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name, fn in cases(np.random.default_rng(args.seed)):
        times = {}
        for b in backends:
            number = 1
            while timeit.timeit(lambda: fn(b), number=number) < 0.05 and number < 10_000:
                number *= 4
            runs = timeit.repeat(lambda: fn(b), number=number, repeat=args.repeat)
            times[b] = np.median(runs) / number
        cells = "".join(f"{1e6 * times[b]:12.0f}us" for b in backends)
        speed = f"{times['python'] / times['compiled']:8.1f}x" if "compiled" in times else ""
        print(f"{name:36s}{cells}{speed}")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 16 32 64]

Prints one row per (kernel, size) with the best-of-``repeat`` time per call
for each backend and the speed-up. Results are also checked for agreement.
"""
import argparse
import timeit

import numpy as np

from netreg import kernels


def cases(n, rng):
    a = rng.standard_normal((n, n))
    k = rng.standard_normal(max(1, n // 4))
    x = rng.standard_normal((8, n))
    v = rng.standard_normal(64 * n)
    return {
        "jacobi_svd": lambda mod: mod.jacobi_svd(a)[0],
        "circ_conv": lambda mod: mod.circ_conv(k, x),
        "circ_corr": lambda mod: mod.circ_corr(k, x),
        "prox_power": lambda mod: mod.prox_power(v, 0.3, 1.5),
    }


def per_call(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    args = parser.parse_args(argv)
    found = kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; only the pure-Python backend is available")
    names = sorted(found)
    rng = np.random.default_rng(0)
    header = f"{'kernel':<12}{'n':>5}" + "".join(f"{name + ' [s]':>14}" for name in names)
    if len(names) == 2:
        header += f"{'speed-up':>11}{'max diff':>11}"
    print(header)
    for n in args.sizes:
        for kernel, fn in cases(n, rng).items():
            times = [per_call(lambda m=found[name]: fn(m), args.repeat) for name in names]
            row = f"{kernel:<12}{n:>5}" + "".join(f"{t:>14.3e}" for t in times)
            if len(names) == 2:
                diff = float(np.max(np.abs(fn(found["cython"]) - fn(found["python"]))))
                row += f"{times[1] / times[0]:>10.1f}x{diff:>11.1e}"
            print(row)


if __name__ == "__main__":
    main()

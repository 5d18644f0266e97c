"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best wall time of each backend and the
speedup. Missing compiled extension is reported and the python column alone
is shown.
"""

import argparse
import itertools
import timeit

import numpy as np

from subgroup_forge import _kernels_py

try:
    from subgroup_forge import _kernels as _compiled
except ImportError:
    _compiled = None


def _cases(rng):
    s6 = np.array(list(itertools.permutations(range(6))), dtype=np.int64)
    z12 = np.array([np.roll(np.arange(12), -s) for s in range(12)], dtype=np.int64)
    source = rng.normal(size=(24, 6))
    target = source[:, s6[-1]]
    points = np.round(rng.normal(size=(4000, 8)), 1)
    grad = rng.normal(size=(256, 512))
    idx = rng.integers(0, 64, size=512)
    return {
        "cayley_table S6": ("cayley_table", (s6,)),
        "cayley_table Z12": ("cayley_table", (z12,)),
        "first_match S6": ("first_match", (target, source, s6, 1e-9)),
        "close_pairs 4000x8": ("close_pairs", (points, 1e-6)),
        "scatter_add_cols 256x512": ("scatter_add_cols", (grad, idx, 64)),
    }


def best_time(fn, args, repeat):
    number = 1
    while timeit.timeit(lambda: fn(*args), number=number) < 0.05:
        number *= 4
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':28s} {'python':>12s} {'compiled':>12s} {'speedup':>8s}")
    for label, (name, call_args) in _cases(np.random.default_rng(args.seed)).items():
        py = best_time(getattr(_kernels_py, name), call_args, args.repeat)
        if _compiled is None:
            print(f"{label:28s} {py * 1e3:10.3f}ms")
            continue
        fast_fn = getattr(_compiled, name)
        expected, got = getattr(_kernels_py, name)(*call_args), fast_fn(*call_args)
        if not np.allclose(np.asarray(expected), np.asarray(got), rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{label}: backends disagree")
        fast = best_time(fast_fn, call_args, args.repeat)
        print(f"{label:28s} {py * 1e3:10.3f}ms {fast * 1e3:10.3f}ms {py / fast:7.1f}x")


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python sum-tree kernels.

    python3 benchmarks/bench_sumtree.py --capacity 100000 --repeats 5
"""

import argparse
import timeit

import numpy as np

from memr.sumtree import KERNELS, SumTree


def bench(kernel, capacity, batch, repeats, seed=0):
    rng = np.random.default_rng(seed)
    tree = SumTree(capacity, kernel=kernel)
    tree.set(np.arange(capacity), rng.uniform(0.1, 2.0, capacity))
    idx = rng.integers(capacity, size=batch)
    vals = rng.uniform(0.1, 2.0, batch)
    targets = rng.uniform(0.0, tree.total, batch)
    # the trainer's per-step pattern: one priority write, then M lookups and M updates
    results = {}
    for name, fn in {
        "set_one": lambda: tree.set(idx[:1], vals[:1]),
        f"set_{batch}": lambda: tree.set(idx, vals),
        f"find_{batch}": lambda: tree.find(targets),
    }.items():
        number = 200
        best = min(timeit.repeat(fn, number=number, repeat=repeats)) / number
        results[name] = best * 1e6
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--capacity", type=int, default=100_000)
    ap.add_argument("--batch", type=int, default=40)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    table = {name: bench(k, args.capacity, args.batch, args.repeats) for name, k in KERNELS.items()}
    ops = list(next(iter(table.values())))
    print(f"capacity={args.capacity} batch={args.batch} (best of {args.repeats}, microseconds/call)")
    print(f"{'op':<12}" + "".join(f"{k:>12}" for k in table) + ("     speedup" if len(table) > 1 else ""))
    for op in ops:
        row = f"{op:<12}" + "".join(f"{table[k][op]:>12.2f}" for k in table)
        if "cython" in table and "python" in table:
            row += f"{table['python'][op] / table['cython'][op]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

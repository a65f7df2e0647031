"""Times the FIFO store-and-forward kernel: compiled extension vs pure Python.

    python benchmarks/bench_kernels.py --messages 1000 10000 100000

Both backends get identical inputs; the script checks that their outputs
match bit for bit before reporting timings.
"""

import argparse
import sys
import timeit

import numpy as np

from twinsim import _kernels_py

try:
    from twinsim import _kernels as _compiled
except ImportError:
    _compiled = None


def make_batch(n_msgs: int, n_links: int, seed: int):
    rng = np.random.default_rng(seed)
    bw = rng.uniform(100.0, 20_000.0, n_links)
    prop = rng.uniform(0.0, 5.0, n_links)
    release = np.sort(rng.uniform(0.0, 60_000.0, n_msgs))
    size = rng.integers(0, 200_000, n_msgs).astype(np.float64)
    hops = rng.integers(1, 7, n_msgs)
    ptr = np.zeros(n_msgs + 1, dtype=np.int64)
    np.cumsum(hops, out=ptr[1:])
    flat = rng.integers(0, n_links, int(ptr[-1])).astype(np.int64)
    return release, size, ptr, flat, bw, prop


def run(fn, batch):
    release, size, ptr, flat, bw, prop = batch
    busy = np.zeros(len(bw))
    return fn(release, size, ptr, flat, bw, prop, busy), busy


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--messages", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    p.add_argument("--links", type=int, default=64)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if _compiled is None:
        print("compiled extension not built; only the Python backend can be timed")
    print(f"{'messages':>10} {'python [s]':>12} {'cython [s]':>12} {'speed-up':>9}")
    for n in args.messages:
        batch = make_batch(n, args.links, args.seed)
        t_py = min(timeit.repeat(lambda: run(_kernels_py.fifo_deliver, batch),
                                 number=1, repeat=args.repeat))
        if _compiled is None:
            print(f"{n:>10} {t_py:>12.4f} {'-':>12} {'-':>9}")
            continue
        a, busy_a = run(_kernels_py.fifo_deliver, batch)
        b, busy_b = run(_compiled.fifo_deliver, batch)
        if not (np.array_equal(a, b) and np.array_equal(busy_a, busy_b)):
            print(f"backends disagree at {n} messages", file=sys.stderr)
            return 1
        t_c = min(timeit.repeat(lambda: run(_compiled.fifo_deliver, batch),
                                number=1, repeat=args.repeat))
        print(f"{n:>10} {t_py:>12.4f} {t_c:>12.4f} {t_py / t_c:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

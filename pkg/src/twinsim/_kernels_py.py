"""Pure-Python reference for the compiled kernels in ``_kernels.pyx``.

Both implementations must return bit-identical results; the test-suite and
``benchmarks/bench_kernels.py`` compare them.
"""

import heapq

import numpy as np


def fifo_deliver(release, size, path_ptr, path_links, bw, prop, busy):
    """Store-and-forward delivery of a batch of messages over FIFO links.

    Message ``i`` enters its first link at ``release[i]`` and crosses links
    ``path_links[path_ptr[i]:path_ptr[i+1]]`` in order. Each link serves one
    transfer at a time in arrival order: a hop starts at
    ``max(arrival, busy[link])``, occupies the link for ``size / bw`` and
    reaches the next hop ``prop`` later. Hops are processed as events in
    ``(time, seq)`` order, with initial events numbered in input order.

    ``busy`` is updated in place. Returns the delivery time of every message.
    """
    n = len(release)
    out = np.empty(n, dtype=np.float64)
    release = np.asarray(release, dtype=np.float64).tolist()
    size = np.asarray(size, dtype=np.float64).tolist()
    ptr = np.asarray(path_ptr).tolist()
    links = np.asarray(path_links).tolist()
    bw_l = np.asarray(bw, dtype=np.float64).tolist()
    prop_l = np.asarray(prop, dtype=np.float64).tolist()
    busy_l = np.asarray(busy, dtype=np.float64).tolist()
    heap = []
    seq = 0
    for i in range(n):
        if ptr[i] == ptr[i + 1]:
            out[i] = release[i]
        else:
            heap.append((release[i], seq, i, ptr[i]))
        seq += 1
    heapq.heapify(heap)
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        t, _, i, pos = pop(heap)
        link = links[pos]
        b = busy_l[link]
        start = t if t > b else b
        finish = start + size[i] / bw_l[link]
        busy_l[link] = finish
        arrive = finish + prop_l[link]
        if pos + 1 < ptr[i + 1]:
            push(heap, (arrive, seq, i, pos + 1))
            seq += 1
        else:
            out[i] = arrive
    busy[:] = busy_l
    return out

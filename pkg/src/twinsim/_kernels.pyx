# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. ``_kernels_py`` holds the reference implementation."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline bint _less(double ta, long long sa, double tb, long long sb) nogil:
    return ta < tb or (ta == tb and sa < sb)


cdef void _sift_down(double[::1] ht, long long[::1] hs, long long[::1] hm,
                     long long[::1] hp, Py_ssize_t n, Py_ssize_t pos) nogil:
    cdef Py_ssize_t child, right
    cdef double t = ht[pos]
    cdef long long s = hs[pos], m = hm[pos], p = hp[pos]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        right = child + 1
        if right < n and _less(ht[right], hs[right], ht[child], hs[child]):
            child = right
        if not _less(ht[child], hs[child], t, s):
            break
        ht[pos] = ht[child]; hs[pos] = hs[child]; hm[pos] = hm[child]; hp[pos] = hp[child]
        pos = child
    ht[pos] = t; hs[pos] = s; hm[pos] = m; hp[pos] = p


cdef void _sift_up(double[::1] ht, long long[::1] hs, long long[::1] hm,
                   long long[::1] hp, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef double t = ht[pos]
    cdef long long s = hs[pos], m = hm[pos], p = hp[pos]
    while pos > 0:
        parent = (pos - 1) >> 1
        if not _less(t, s, ht[parent], hs[parent]):
            break
        ht[pos] = ht[parent]; hs[pos] = hs[parent]; hm[pos] = hm[parent]; hp[pos] = hp[parent]
        pos = parent
    ht[pos] = t; hs[pos] = s; hm[pos] = m; hp[pos] = p


def fifo_deliver(release, size, path_ptr, path_links, bw, prop, busy):
    cdef double[::1] rel = np.ascontiguousarray(release, dtype=np.float64)
    cdef double[::1] sz = np.ascontiguousarray(size, dtype=np.float64)
    cdef long long[::1] ptr = np.ascontiguousarray(path_ptr, dtype=np.int64)
    cdef long long[::1] lk = np.ascontiguousarray(path_links, dtype=np.int64)
    cdef double[::1] bwv = np.ascontiguousarray(bw, dtype=np.float64)
    cdef double[::1] pr = np.ascontiguousarray(prop, dtype=np.float64)
    busy_arr = np.ascontiguousarray(busy, dtype=np.float64)
    cdef double[::1] bz = busy_arr
    cdef Py_ssize_t n = rel.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr

    cdef double[::1] ht = np.empty(max(n, 1), dtype=np.float64)
    cdef long long[::1] hs = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] hm = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] hp = np.empty(max(n, 1), dtype=np.int64)

    cdef Py_ssize_t size_h = 0, i, k
    cdef long long seq = 0, pos, link
    cdef double t, start, finish, arrive, b

    with nogil:
        for i in range(n):
            if ptr[i] == ptr[i + 1]:
                out[i] = rel[i]
            else:
                ht[size_h] = rel[i]; hs[size_h] = seq; hm[size_h] = i; hp[size_h] = ptr[i]
                size_h += 1
            seq += 1
        k = size_h // 2 - 1
        while k >= 0:
            _sift_down(ht, hs, hm, hp, size_h, k)
            k -= 1

        while size_h > 0:
            t = ht[0]; i = hm[0]; pos = hp[0]
            link = lk[pos]
            b = bz[link]
            start = t if t > b else b
            finish = start + sz[i] / bwv[link]
            bz[link] = finish
            arrive = finish + pr[link]
            if pos + 1 < ptr[i + 1]:
                # replace the root with the next hop of the same message
                ht[0] = arrive; hs[0] = seq; hp[0] = pos + 1
                seq += 1
                _sift_down(ht, hs, hm, hp, size_h, 0)
            else:
                out[i] = arrive
                size_h -= 1
                if size_h > 0:
                    ht[0] = ht[size_h]; hs[0] = hs[size_h]
                    hm[0] = hm[size_h]; hp[0] = hp[size_h]
                    _sift_down(ht, hs, hm, hp, size_h, 0)

    if busy_arr is not busy:
        busy[:] = busy_arr
    return out_arr

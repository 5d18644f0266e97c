# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

ctypedef cnp.uint64_t u64

cdef int _MAX_KEY_DEGREE = 16


def perm_keys(perms):
    cdef cnp.int64_t[:, ::1] p = np.ascontiguousarray(perms, dtype=np.int64)
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1], i, t
    if n > _MAX_KEY_DEGREE:
        raise ValueError(f"keyed lookup supports degree <= {_MAX_KEY_DEGREE}, got {n}")
    out = np.empty(m, dtype=np.uint64)
    cdef u64[::1] keys = out
    cdef u64 acc, w
    for i in range(m):
        acc = 0
        w = 1
        for t in range(n):
            acc += <u64>p[i, t] * w
            w *= <u64>n
        keys[i] = acc
    return out


cdef Py_ssize_t _search(u64[::1] sorted_keys, u64 key) nogil:
    cdef Py_ssize_t lo = 0, hi = sorted_keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if sorted_keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < sorted_keys.shape[0] and sorted_keys[lo] == key:
        return lo
    return -1


def cayley_table(perms):
    arr = np.ascontiguousarray(perms, dtype=np.int64)
    cdef Py_ssize_t m = arr.shape[0], n = arr.shape[1]
    if n > _MAX_KEY_DEGREE:
        from subgroup_forge._kernels_py import cayley_table as slow
        return slow(arr)
    cdef cnp.int64_t[:, ::1] p = arr
    keys = perm_keys(arr)
    order_arr = np.argsort(keys, kind="stable").astype(np.int64)
    cdef cnp.int64_t[::1] order = order_arr
    cdef u64[::1] sorted_keys = np.ascontiguousarray(keys[order_arr])
    table_arr = np.empty((m, m), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] table = table_arr
    cdef Py_ssize_t i, j, t, pos
    cdef u64 acc, w
    with nogil:
        for i in range(m):
            for j in range(m):
                acc = 0
                w = 1
                for t in range(n):
                    acc += <u64>p[j, p[i, t]] * w
                    w *= <u64>n
                pos = _search(sorted_keys, acc)
                table[i, j] = order[pos] if pos >= 0 else -1
    return table_arr


def first_match(target, source, perms, double tol):
    cdef double[:, ::1] tg = np.ascontiguousarray(target, dtype=np.float64)
    cdef double[:, ::1] src = np.ascontiguousarray(source, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] pm = np.ascontiguousarray(perms, dtype=np.int64).reshape(-1, tg.shape[1])
    cdef Py_ssize_t G = pm.shape[0], P = tg.shape[0], r = tg.shape[1]
    cdef Py_ssize_t g, a, i, hit = -1
    cdef bint ok
    with nogil:
        for g in range(G):
            ok = True
            for a in range(P):
                for i in range(r):
                    if fabs(tg[a, i] - src[a, pm[g, i]]) > tol:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                hit = g
                break
    return hit


def close_pairs(points, double tol):
    pts_arr = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t count = pts_arr.shape[0]
    if count < 2:
        return np.empty((0, 2), dtype=np.int64)
    cdef double[:, ::1] pts = pts_arr
    order_arr = np.argsort(pts_arr[:, 0], kind="stable").astype(np.int64)
    cdef cnp.int64_t[::1] order = order_arr
    cdef Py_ssize_t d = pts.shape[1], a, b, t, ia, ib
    cdef bint same
    found = []
    for a in range(count):
        ia = order[a]
        b = a + 1
        while b < count and pts[order[b], 0] - pts[ia, 0] <= tol:
            ib = order[b]
            same = True
            for t in range(d):
                if fabs(pts[ia, t] - pts[ib, t]) > tol:
                    same = False
                    break
            if same:
                found.append((min(ia, ib), max(ia, ib)))
            b += 1
    if not found:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.array(found, dtype=np.int64)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def scatter_add_cols(grad, idx, Py_ssize_t width):
    cdef double[:, ::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    out_arr = np.zeros((g.shape[0], width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t B = g.shape[0], K = ix.shape[0], b, k
    with nogil:
        for b in range(B):
            for k in range(K):
                out[b, ix[k]] += g[b, k]
    return out_arr

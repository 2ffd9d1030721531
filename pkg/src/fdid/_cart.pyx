# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CART kernels (variance-reduction trees, single or multi-output).

The pure-Python twin lives in ``_cart_py.py``; both must grow bit-identical
trees for identical inputs, so every accumulation here runs in a fixed
sequential order that the fallback reproduces.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

ctypedef struct Keyed:
    double v
    int64_t pos


cdef inline bint _lt(Keyed a, Keyed b) noexcept nogil:
    return a.v < b.v or (a.v == b.v and a.pos < b.pos)


cdef void _sort_keyed(Keyed* a, Py_ssize_t n) noexcept nogil:
    # quicksort (median of three) with insertion sort below 16 elements;
    # (v, pos) is a strict total order so the result is unique.
    cdef Py_ssize_t i, j, mid
    cdef Keyed pivot, t
    while n > 16:
        mid = n // 2
        if _lt(a[mid], a[0]):
            t = a[mid]; a[mid] = a[0]; a[0] = t
        if _lt(a[n - 1], a[0]):
            t = a[n - 1]; a[n - 1] = a[0]; a[0] = t
        if _lt(a[n - 1], a[mid]):
            t = a[n - 1]; a[n - 1] = a[mid]; a[mid] = t
        pivot = a[mid]
        i = 0
        j = n - 1
        while True:
            while _lt(a[i], pivot):
                i += 1
            while _lt(pivot, a[j]):
                j -= 1
            if i >= j:
                break
            t = a[i]; a[i] = a[j]; a[j] = t
            i += 1
            j -= 1
        # recurse on the smaller side, loop on the larger
        if j + 1 < n - j - 1:
            _sort_keyed(a, j + 1)
            a = a + j + 1
            n = n - j - 1
        else:
            _sort_keyed(a + j + 1, n - j - 1)
            n = j + 1
    for i in range(1, n):
        t = a[i]
        j = i - 1
        while j >= 0 and _lt(t, a[j]):
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = t


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    # splitmix64
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


def build_tree(const double[:, ::1] X, const double[:, ::1] Y,
               const int64_t[::1] sample, int max_depth, int min_leaf,
               int mtry, uint64_t seed):
    """Grow one tree on the rows ``sample`` (repeats allowed).

    Returns ``(feature, threshold, left, right, value)``; ``feature == -1``
    marks a leaf.
    """
    cdef Py_ssize_t n_s = sample.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t q = Y.shape[1]
    cdef Py_ssize_t cap = 2 * n_s + 1
    if mtry > p:
        mtry = <int>p

    feature_arr = np.full(cap, -1, dtype=np.int64)
    threshold_arr = np.zeros(cap, dtype=np.float64)
    left_arr = np.full(cap, -1, dtype=np.int64)
    right_arr = np.full(cap, -1, dtype=np.int64)
    value_arr = np.zeros((cap, q), dtype=np.float64)
    cdef int64_t[::1] feature = feature_arr
    cdef double[::1] threshold = threshold_arr
    cdef int64_t[::1] left = left_arr
    cdef int64_t[::1] right = right_arr
    cdef double[:, ::1] value = value_arr

    cdef int64_t* idx = <int64_t*>malloc(n_s * sizeof(int64_t))
    cdef int64_t* tmp = <int64_t*>malloc(n_s * sizeof(int64_t))
    cdef Keyed* keys = <Keyed*>malloc(n_s * sizeof(Keyed))
    cdef double* total = <double*>malloc(q * sizeof(double))
    cdef double* csum = <double*>malloc(q * sizeof(double))
    cdef int64_t* perm = <int64_t*>malloc(p * sizeof(int64_t))
    # explicit DFS stack: start, end, depth, node
    cdef int64_t* stack = <int64_t*>malloc(4 * cap * sizeof(int64_t))
    cdef Py_ssize_t top = 0
    cdef Py_ssize_t n_nodes = 1
    cdef uint64_t state = seed
    cdef Py_ssize_t i, j, k, f, start, end, depth, node, nn, nl, nr, r, swap
    cdef double parent, gain, best_gain, best_thr, sl, sr, thr, xv
    cdef int64_t best_feat, best_pos
    cdef bint pure

    try:
        for i in range(n_s):
            idx[i] = sample[i]
        for j in range(p):
            perm[j] = j
        stack[0] = 0
        stack[1] = n_s
        stack[2] = 0
        stack[3] = 0
        top = 1
        while top > 0:
            top -= 1
            start = stack[4 * top]
            end = stack[4 * top + 1]
            depth = stack[4 * top + 2]
            node = stack[4 * top + 3]
            nn = end - start

            for k in range(q):
                total[k] = 0.0
            for i in range(start, end):
                for k in range(q):
                    total[k] = total[k] + Y[idx[i], k]
            for k in range(q):
                value[node, k] = total[k] / nn

            if (max_depth >= 0 and depth >= max_depth) or nn < 2 * min_leaf:
                continue
            pure = True
            for i in range(start + 1, end):
                for k in range(q):
                    if Y[idx[i], k] != Y[idx[start], k]:
                        pure = False
                        break
                if not pure:
                    break
            if pure:
                continue

            parent = 0.0
            for k in range(q):
                parent = parent + total[k] * total[k] / nn

            for j in range(mtry):
                r = j + <Py_ssize_t>(_next(&state) % <uint64_t>(p - j))
                swap = perm[j]
                perm[j] = perm[r]
                perm[r] = swap

            best_feat = -1
            best_gain = 0.0
            best_pos = -1
            best_thr = 0.0
            for j in range(mtry):
                f = perm[j]
                for i in range(nn):
                    keys[i].v = X[idx[start + i], f]
                    keys[i].pos = i
                _sort_keyed(keys, nn)
                if keys[0].v == keys[nn - 1].v:
                    continue
                for k in range(q):
                    csum[k] = 0.0
                for i in range(nn - 1):
                    for k in range(q):
                        csum[k] = csum[k] + Y[idx[start + keys[i].pos], k]
                    nl = i + 1
                    nr = nn - nl
                    if nl < min_leaf:
                        continue
                    if nr < min_leaf:
                        break
                    if keys[i].v == keys[i + 1].v:
                        continue
                    gain = 0.0
                    for k in range(q):
                        sl = csum[k]
                        sr = total[k] - sl
                        gain = gain + (sl * sl / nl + sr * sr / nr)
                    if best_feat < 0 or gain > best_gain:
                        best_gain = gain
                        best_feat = f
                        best_pos = i
                        thr = 0.5 * (keys[i].v + keys[i + 1].v)
                        if thr >= keys[i + 1].v:
                            thr = keys[i].v
                        best_thr = thr

            if best_feat < 0 or best_gain - parent <= 1e-12 * (parent if parent > 0 else -parent) + 1e-300:
                continue

            # stable partition by x <= thr
            nl = 0
            for i in range(start, end):
                xv = X[idx[i], best_feat]
                if xv <= best_thr:
                    idx[start + nl] = idx[i]
                    nl += 1
                else:
                    tmp[i - start - nl] = idx[i]
            nr = nn - nl
            for i in range(nr):
                idx[start + nl + i] = tmp[i]

            feature[node] = best_feat
            threshold[node] = best_thr
            left[node] = n_nodes
            right[node] = n_nodes + 1
            # right pushed first so the left subtree is grown first
            stack[4 * top] = start + nl
            stack[4 * top + 1] = end
            stack[4 * top + 2] = depth + 1
            stack[4 * top + 3] = n_nodes + 1
            top += 1
            stack[4 * top] = start
            stack[4 * top + 1] = start + nl
            stack[4 * top + 2] = depth + 1
            stack[4 * top + 3] = n_nodes
            top += 1
            n_nodes += 2
    finally:
        free(idx)
        free(tmp)
        free(keys)
        free(total)
        free(csum)
        free(perm)
        free(stack)

    return (feature_arr[:n_nodes].copy(), threshold_arr[:n_nodes].copy(),
            left_arr[:n_nodes].copy(), right_arr[:n_nodes].copy(),
            value_arr[:n_nodes].copy())


def predict_tree(const double[:, ::1] X, const int64_t[::1] feature,
                 const double[::1] threshold, const int64_t[::1] left,
                 const int64_t[::1] right, const double[:, ::1] value):
    """Leaf values for every row of ``X``."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t q = value.shape[1]
    out_arr = np.empty((n, q), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef int64_t node
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        for k in range(q):
            out[i, k] = value[node, k]
    return out_arr

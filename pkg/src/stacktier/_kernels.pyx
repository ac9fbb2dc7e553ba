# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: exact greedy tree growth, tree traversal, Pegasos SGD.

Every routine here has a line-for-line numpy twin in :mod:`stacktier._fallback`;
both must pick identical splits for identical inputs.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int32_t, int64_t
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "cython"

DEF MODE_GINI = 0
DEF MODE_NEWTON = 1


cdef inline uint64_t _splitmix(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef void _partition(int32_t* buf, Py_ssize_t s, Py_ssize_t e,
                     const unsigned char* goes_left, int32_t* tmp) noexcept nogil:
    cdef Py_ssize_t i, nl = 0, nr = 0
    cdef int32_t idx
    for i in range(s, e):
        idx = buf[i]
        if goes_left[idx]:
            buf[s + nl] = idx
            nl += 1
        else:
            tmp[nr] = idx
            nr += 1
    for i in range(nr):
        buf[s + nl + i] = tmp[i]


def build_tree(const double[:, ::1] XT, const int32_t[:, ::1] order,
               const double[::1] a, const double[::1] b, const double[::1] c,
               int mode, int max_depth, double min_leaf, double min_child,
               int max_features, double lam, double gamma, uint64_t seed):
    """Grow one tree depth-first; see ``_fallback.build_tree`` for the contract."""
    cdef Py_ssize_t n = XT.shape[1], d = XT.shape[0]
    cdef Py_ssize_t i, j, f, k, r, s, e, na = 0
    for i in range(n):
        if a[i] > 0:
            na += 1

    cdef cnp.ndarray[int32_t, ndim=1] node_np = np.empty(na, dtype=np.int32)
    cdef cnp.ndarray[int32_t, ndim=1] sorted_np = np.empty(max(na * d, 1), dtype=np.int32)
    cdef cnp.ndarray[int32_t, ndim=1] tmp_np = np.empty(max(na, 1), dtype=np.int32)
    cdef cnp.ndarray[unsigned char, ndim=1] left_np = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[int32_t, ndim=1] perm_np = np.empty(d, dtype=np.int32)
    cdef Py_ssize_t cap = 2 * na + 1
    cdef cnp.ndarray[int32_t, ndim=1] feat_np = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[double, ndim=1] thr_np = np.zeros(cap, dtype=np.float64)
    cdef cnp.ndarray[int32_t, ndim=1] lch_np = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[int32_t, ndim=1] rch_np = np.full(cap, -1, dtype=np.int32)
    cdef cnp.ndarray[int32_t, ndim=1] leaf_np = np.full(n, -1, dtype=np.int32)
    # stack rows: node, start, end, depth
    cdef cnp.ndarray[int64_t, ndim=2] stack_np = np.empty((cap, 4), dtype=np.int64)

    cdef int32_t* node_buf = <int32_t*>node_np.data
    cdef int32_t* sorted_buf = <int32_t*>sorted_np.data
    cdef int32_t* tmp = <int32_t*>tmp_np.data
    cdef unsigned char* goes_left = <unsigned char*>left_np.data
    cdef int32_t* perm = <int32_t*>perm_np.data
    cdef int32_t* feature = <int32_t*>feat_np.data
    cdef double* threshold = <double*>thr_np.data
    cdef int32_t* lchild = <int32_t*>lch_np.data
    cdef int32_t* rchild = <int32_t*>rch_np.data
    cdef int32_t* leaf_of = <int32_t*>leaf_np.data
    cdef int64_t* stack = <int64_t*>stack_np.data

    cdef uint64_t rng = seed
    cdef Py_ssize_t node_count = 1, top = 0, node, depth, nl
    cdef double A, B, C, AL, BL, CL, AR, BR, CR, gain, best_gain, best_thr, v, vn, thr, parent
    cdef int best_f, found, splittable
    cdef int32_t idx

    with nogil:
        k = 0
        for i in range(n):
            if a[i] > 0:
                node_buf[k] = <int32_t>i
                k += 1
        for f in range(d):
            k = 0
            for i in range(n):
                idx = order[f, i]
                if a[idx] > 0:
                    sorted_buf[f * na + k] = idx
                    k += 1

        stack[0] = 0
        stack[1] = 0
        stack[2] = na
        stack[3] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[4 * top]
            s = stack[4 * top + 1]
            e = stack[4 * top + 2]
            depth = stack[4 * top + 3]

            A = 0.0
            B = 0.0
            C = 0.0
            for i in range(s, e):
                idx = node_buf[i]
                A = A + a[idx]
                B = B + b[idx]
                C = C + c[idx]

            splittable = (e - s) >= 2 and (max_depth < 0 or depth < max_depth)
            if mode == MODE_GINI:
                splittable = splittable and B > 0.0 and B < A
                parent = 2.0 * B * (A - B) / A
            else:
                parent = B * B / (C + lam)

            found = 0
            best_gain = 0.0
            best_f = -1
            best_thr = 0.0
            if splittable:
                for j in range(d):
                    perm[j] = <int32_t>j
                for j in range(d):
                    if j >= max_features and found:
                        break
                    r = j + <Py_ssize_t>(_splitmix(&rng) % <uint64_t>(d - j))
                    idx = perm[j]
                    perm[j] = perm[r]
                    perm[r] = idx
                    f = perm[j]
                    AL = 0.0
                    BL = 0.0
                    CL = 0.0
                    for i in range(s, e - 1):
                        idx = sorted_buf[f * na + i]
                        AL = AL + a[idx]
                        BL = BL + b[idx]
                        CL = CL + c[idx]
                        v = XT[f, idx]
                        vn = XT[f, sorted_buf[f * na + i + 1]]
                        if not (vn > v):
                            continue
                        AR = A - AL
                        if AL < min_leaf or AR < min_leaf:
                            continue
                        BR = B - BL
                        CR = C - CL
                        if mode == MODE_GINI:
                            gain = parent - 2.0 * BL * (AL - BL) / AL - 2.0 * BR * (AR - BR) / AR
                        else:
                            if CL < min_child or CR < min_child:
                                continue
                            gain = 0.5 * (BL * BL / (CL + lam) + BR * BR / (CR + lam) - parent) - gamma
                        if (not found) or gain > best_gain or (gain == best_gain and f < best_f):
                            thr = 0.5 * (v + vn)
                            if not (thr < vn):
                                thr = v
                            found = 1
                            best_gain = gain
                            best_f = <int>f
                            best_thr = thr
                if mode == MODE_NEWTON and not (best_gain > 0.0):
                    found = 0

            if not found:
                for i in range(s, e):
                    leaf_of[node_buf[i]] = <int32_t>node
                continue

            nl = 0
            for i in range(s, e):
                idx = node_buf[i]
                if XT[best_f, idx] <= best_thr:
                    goes_left[idx] = 1
                    nl += 1
                else:
                    goes_left[idx] = 0
            _partition(node_buf, s, e, goes_left, tmp)
            for f in range(d):
                _partition(sorted_buf + f * na, s, e, goes_left, tmp)

            feature[node] = best_f
            threshold[node] = best_thr
            lchild[node] = <int32_t>node_count
            rchild[node] = <int32_t>(node_count + 1)
            # right pushed first so the left subtree is expanded first
            stack[4 * top] = node_count + 1
            stack[4 * top + 1] = s + nl
            stack[4 * top + 2] = e
            stack[4 * top + 3] = depth + 1
            stack[4 * top + 4] = node_count
            stack[4 * top + 5] = s
            stack[4 * top + 6] = s + nl
            stack[4 * top + 7] = depth + 1
            top += 2
            node_count += 2

    return (feat_np[:node_count].copy(), thr_np[:node_count].copy(),
            lch_np[:node_count].copy(), rch_np[:node_count].copy(), leaf_np)


def ensemble_apply(const double[:, ::1] X, const int32_t[::1] feature,
                   const double[::1] threshold, const int32_t[::1] left,
                   const int32_t[::1] right, const double[::1] value,
                   const int64_t[::1] offsets, double[::1] out, bint vote):
    """Accumulate per-tree leaf values (or ``value >= 0.5`` votes) into ``out``."""
    cdef Py_ssize_t n = X.shape[0], t, i, base
    cdef Py_ssize_t n_trees = offsets.shape[0] - 1
    cdef int32_t node
    cdef double leaf
    with nogil:
        for t in range(n_trees):
            base = offsets[t]
            for i in range(n):
                node = 0
                while feature[base + node] >= 0:
                    if X[i, feature[base + node]] <= threshold[base + node]:
                        node = left[base + node]
                    else:
                        node = right[base + node]
                leaf = value[base + node]
                if vote:
                    out[i] = out[i] + (1.0 if leaf >= 0.5 else 0.0)
                else:
                    out[i] = out[i] + leaf
    return np.asarray(out)


def pegasos(const double[:, ::1] X, const double[::1] y, const int64_t[:, ::1] perm,
            double lam, Py_ssize_t avg_start):
    """Pegasos on the bias-augmented problem; returns the averaged (w, b)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], epochs = perm.shape[0]
    cdef Py_ssize_t ep, k, i, j, t = 0, n_avg = 0
    cdef cnp.ndarray[double, ndim=1] w_np = np.zeros(d + 1, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] avg_np = np.zeros(d + 1, dtype=np.float64)
    cdef double* w = <double*>w_np.data
    cdef double* avg = <double*>avg_np.data
    cdef double eta, margin, shrink, yi, frac
    with nogil:
        for ep in range(epochs):
            for k in range(n):
                i = perm[ep, k]
                t += 1
                yi = y[i]
                margin = w[d]
                for j in range(d):
                    margin = margin + w[j] * X[i, j]
                margin = yi * margin
                eta = 1.0 / (lam * <double>t)
                shrink = 1.0 - 1.0 / <double>t
                for j in range(d + 1):
                    w[j] = w[j] * shrink
                if margin < 1.0:
                    for j in range(d):
                        w[j] = w[j] + eta * yi * X[i, j]
                    w[d] = w[d] + eta * yi
                if t > avg_start:
                    n_avg += 1
                    frac = 1.0 / <double>n_avg
                    for j in range(d + 1):
                        avg[j] = avg[j] + (w[j] - avg[j]) * frac
    return avg_np[:d].copy(), float(avg_np[d])

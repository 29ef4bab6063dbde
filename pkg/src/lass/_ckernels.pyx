# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``lass._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


def nearest_code(patches, codes):
    cdef const double[:, ::1] pv = np.ascontiguousarray(patches, dtype=np.float64)
    cdef const double[:, ::1] cv = np.ascontiguousarray(codes, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], K = cv.shape[0], P = cv.shape[1]
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    cdef Py_ssize_t i, k, j, best
    cdef double d, t, bestd
    with nogil:
        for i in range(n):
            best = 0
            bestd = INFINITY
            for k in range(K):
                d = 0.0
                for j in range(P):
                    t = pv[i, j] - cv[k, j]
                    d = d + t * t
                if d < bestd:
                    bestd = d
                    best = k
            ov[i] = best
    return out


cdef inline bint _better(double va, Py_ssize_t ia, double vb, Py_ssize_t ib) nogil:
    return va > vb or (va == vb and ia < ib)


cdef void _sift_down(double* hv, Py_ssize_t* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    # min-heap keyed on "worst first"
    cdef Py_ssize_t child, other
    cdef double tv
    cdef Py_ssize_t ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        other = child + 1
        if other < size and _better(hv[child], hi[child], hv[other], hi[other]):
            child = other
        if _better(hv[child], hi[child], hv[pos], hi[pos]):
            break
        tv = hv[pos]; hv[pos] = hv[child]; hv[child] = tv
        ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
        pos = child


cdef void _sift_up(double* hv, Py_ssize_t* hi, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef double tv
    cdef Py_ssize_t ti
    while pos > 0:
        parent = (pos - 1) // 2
        if _better(hv[pos], hi[pos], hv[parent], hi[parent]):
            break
        tv = hv[pos]; hv[pos] = hv[parent]; hv[parent] = tv
        ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
        pos = parent


cdef Py_ssize_t _select(const double* row, Py_ssize_t n, Py_ssize_t k,
                        double* hv, Py_ssize_t* hi) nogil:
    """Fill the heap with the k best (value desc, index asc) entries of row."""
    cdef Py_ssize_t size = 0, i
    for i in range(n):
        if size < k:
            hv[size] = row[i]
            hi[size] = i
            _sift_up(hv, hi, size)
            size += 1
        elif _better(row[i], i, hv[0], hi[0]):
            hv[0] = row[i]
            hi[0] = i
            _sift_down(hv, hi, size, 0)
    return size


def sample_rows(logits, u, Py_ssize_t k):
    cdef const double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef Py_ssize_t C = lv.shape[0], n = lv.shape[1]
    out = np.empty(C, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    cdef bint full = k >= n
    if k < 1:
        raise ValueError("k must be >= 1")
    if full:
        k = n
    cdef double* hv = <double*> malloc(k * sizeof(double))
    cdef Py_ssize_t* hi = <Py_ssize_t*> malloc(k * sizeof(Py_ssize_t))
    cdef unsigned char* keep = <unsigned char*> malloc(n * sizeof(unsigned char))
    cdef double* cs = <double*> malloc(n * sizeof(double))
    if hv == NULL or hi == NULL or keep == NULL or cs == NULL:
        free(hv); free(hi); free(keep); free(cs)
        raise MemoryError()
    cdef Py_ssize_t r, i, last, pick
    cdef double top, target, run
    try:
        with nogil:
            for r in range(C):
                if full:
                    for i in range(n):
                        keep[i] = 1
                else:
                    for i in range(n):
                        keep[i] = 0
                    _select(&lv[r, 0], n, k, hv, hi)
                    for i in range(k):
                        keep[hi[i]] = 1
                top = -INFINITY
                last = 0
                for i in range(n):
                    if keep[i]:
                        last = i
                        if lv[r, i] > top:
                            top = lv[r, i]
                # running sums in index order, as a cumulative sum would give
                run = 0.0
                for i in range(n):
                    if keep[i]:
                        run = run + exp(lv[r, i] - top)
                    cs[i] = run
                target = uv[r] * run
                pick = last
                for i in range(n):
                    if cs[i] > target:
                        pick = i
                        break
                ov[r] = pick
    finally:
        free(hv); free(hi); free(keep); free(cs)
    return out


def top_indices(values, count):
    cdef const double[::1] vv = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef Py_ssize_t n = vv.shape[0]
    cdef Py_ssize_t k = min(int(count), n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    cdef double* hv = <double*> malloc(k * sizeof(double))
    cdef Py_ssize_t* hi = <Py_ssize_t*> malloc(k * sizeof(Py_ssize_t))
    if hv == NULL or hi == NULL:
        free(hv); free(hi)
        raise MemoryError()
    out = np.empty(k, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    cdef Py_ssize_t size, pos
    try:
        with nogil:
            size = _select(&vv[0], n, k, hv, hi)
            # pop worst-first into the tail
            pos = size - 1
            while size > 0:
                ov[pos] = hi[0]
                size -= 1
                hv[0] = hv[size]
                hi[0] = hi[size]
                _sift_down(hv, hi, size, 0)
                pos -= 1
    finally:
        free(hv); free(hi)
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled retrieval/consistency kernels. Mirrors ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline bint _worse(double sa, i64 ia, double sb, i64 ib) nogil:
    # a ranks below b under (similarity desc, id asc)
    return sa < sb or (sa == sb and ia > ib)


cdef void _sift_down(double* hs, i64* hi, i64* hc, Py_ssize_t n, Py_ssize_t pos) nogil:
    # min-heap on rank: root is the worst retained entry
    cdef Py_ssize_t child, right
    cdef double ts
    cdef i64 ti, tc
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        right = child + 1
        if right < n and _worse(hs[right], hi[right], hs[child], hi[child]):
            child = right
        if _worse(hs[child], hi[child], hs[pos], hi[pos]):
            ts = hs[pos]; hs[pos] = hs[child]; hs[child] = ts
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            tc = hc[pos]; hc[pos] = hc[child]; hc[child] = tc
            pos = child
        else:
            break


def topk_rows(sims, ids, Py_ssize_t k):
    cdef const double[:, ::1] s = np.ascontiguousarray(sims, dtype=np.float64)
    cdef const i64[::1] idv = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n_rows = s.shape[0], n_cols = s.shape[1]
    out_arr = np.empty((n_rows, k), dtype=np.int64)
    if k == 0 or n_rows == 0:
        return out_arr
    if k > n_cols:
        raise ValueError("k exceeds number of columns")
    cdef i64[:, ::1] out = out_arr
    hs_arr = np.empty(k, dtype=np.float64)
    hi_arr = np.empty(k, dtype=np.int64)
    hc_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef i64[::1] hi = hi_arr
    cdef i64[::1] hc = hc_arr
    cdef Py_ssize_t r, c, j, n, last
    cdef double ts
    cdef i64 ti, tc
    with nogil:
        for r in range(n_rows):
            n = 0
            for c in range(n_cols):
                if n < k:
                    hs[n] = s[r, c]; hi[n] = idv[c]; hc[n] = c
                    n += 1
                    if n == k:
                        j = k // 2
                        while j > 0:
                            j -= 1
                            _sift_down(&hs[0], &hi[0], &hc[0], k, j)
                elif _worse(hs[0], hi[0], s[r, c], idv[c]):
                    hs[0] = s[r, c]; hi[0] = idv[c]; hc[0] = c
                    _sift_down(&hs[0], &hi[0], &hc[0], k, 0)
            # pop worst-first into the tail of the output row
            last = k
            while last > 0:
                last -= 1
                out[r, last] = hc[0]
                ts = hs[0]; hs[0] = hs[last]; hs[last] = ts
                ti = hi[0]; hi[0] = hi[last]; hi[last] = ti
                tc = hc[0]; hc[0] = hc[last]; hc[last] = tc
                _sift_down(&hs[0], &hi[0], &hc[0], last, 0)
    return out_arr


def membership_counts(ids):
    cdef const i64[:, :, ::1] v = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t nq = v.shape[0], ne = v.shape[1], nk = v.shape[2]
    out_arr = np.zeros((nq, ne, nk), dtype=np.int64)
    cdef i64[:, :, ::1] out = out_arr
    cdef Py_ssize_t q, i, j, l, m
    cdef i64 item
    with nogil:
        for q in range(nq):
            for i in range(ne):
                for j in range(nk):
                    item = v[q, i, j]
                    for l in range(ne):
                        if l == i:
                            continue
                        for m in range(nk):
                            if v[q, l, m] == item:
                                out[q, i, j] += 1
                                break
    return out_arr


def common_counts(ids):
    cdef const i64[:, :, ::1] v = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t nq = v.shape[0], ne = v.shape[1], nk = v.shape[2]
    out_arr = np.zeros(nq, dtype=np.int64)
    cdef i64[::1] out = out_arr
    cdef Py_ssize_t q, j, l, m
    cdef i64 item
    cdef bint found, everywhere
    with nogil:
        for q in range(nq):
            for j in range(nk):
                item = v[q, 0, j]
                everywhere = True
                for l in range(1, ne):
                    found = False
                    for m in range(nk):
                        if v[q, l, m] == item:
                            found = True
                            break
                    if not found:
                        everywhere = False
                        break
                if everywhere:
                    out[q] += 1
    return out_arr

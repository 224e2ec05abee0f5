# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled memory-network body kernels; same contract as ``_body_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.string cimport memset

cnp.import_array()

ctypedef cnp.int64_t idx_t


cdef inline void _embed(const double* A, int d, const idx_t* indptr, const idx_t* indices,
                        const double* counts, idx_t s, double* out) noexcept nogil:
    cdef idx_t nz, t
    cdef int j
    cdef double c
    for j in range(d):
        out[j] = 0.0
    for nz in range(indptr[s], indptr[s + 1]):
        t = indices[nz]
        c = counts[nz]
        for j in range(d):
            out[j] += c * A[t * d + j]


cdef inline void _scatter(double* gA, int d, const idx_t* indptr, const idx_t* indices,
                          const double* counts, idx_t s, const double* g) noexcept nogil:
    cdef idx_t nz, t
    cdef int j
    cdef double c
    for nz in range(indptr[s], indptr[s + 1]):
        t = indices[nz]
        c = counts[nz]
        for j in range(d):
            gA[t * d + j] += c * g[j]


cdef void _forward(const double* A, const double* R, int d, int hops,
                   const idx_t* indptr, const idx_t* indices, const double* counts,
                   const idx_t* mem, idx_t n, idx_t query,
                   double* m, double* us, double* ps) noexcept nogil:
    """Fill ``m`` (n, d), ``us`` (hops+1, d) and ``ps`` (hops, n)."""
    cdef idx_t i
    cdef int k, a, b
    cdef double top, z, acc
    cdef double* u
    cdef double* un
    cdef double* p
    for i in range(n):
        _embed(A, d, indptr, indices, counts, mem[i], m + i * d)
    _embed(A, d, indptr, indices, counts, query, us)
    for k in range(hops):
        u = us + k * d
        un = us + (k + 1) * d
        p = ps + k * n
        for a in range(d):
            acc = 0.0
            for b in range(d):
                acc += R[a * d + b] * u[b]
            un[a] = acc
        if n == 0:
            continue
        top = -1e308
        for i in range(n):
            acc = 0.0
            for a in range(d):
                acc += m[i * d + a] * u[a]
            p[i] = acc
            if acc > top:
                top = acc
        z = 0.0
        for i in range(n):
            p[i] = exp(p[i] - top)
            z += p[i]
        for i in range(n):
            p[i] /= z
            for a in range(d):
                un[a] += p[i] * m[i * d + a]


cdef void _backward(const double* R, int d, int hops, idx_t n,
                    const double* m, const double* us, const double* ps,
                    double* du, double* dprev, double* dm, double* dp,
                    double* gR, const double* vR, double* rdot) noexcept nogil:
    """Backprop ``du`` (= dU on entry) through the hops.

    On exit ``du`` holds the query-embedding gradient and ``dm`` the memory
    gradients. With ``gR`` set, the R gradient is accumulated there; with
    ``vR`` set, its contraction with ``vR`` is added to ``rdot[0]``.
    """
    cdef int k, a, b
    cdef idx_t i
    cdef double s, acc
    cdef const double* u
    cdef const double* p
    memset(dm, 0, n * d * sizeof(double))
    for k in range(hops - 1, -1, -1):
        u = us + k * d
        p = ps + k * n
        if gR != NULL:
            for a in range(d):
                for b in range(d):
                    gR[a * d + b] += du[a] * u[b]
        if vR != NULL:
            acc = 0.0
            for a in range(d):
                s = 0.0
                for b in range(d):
                    s += vR[a * d + b] * u[b]
                acc += du[a] * s
            rdot[0] += acc
        for b in range(d):
            acc = 0.0
            for a in range(d):
                acc += du[a] * R[a * d + b]
            dprev[b] = acc
        if n > 0:
            s = 0.0
            for i in range(n):
                acc = 0.0
                for a in range(d):
                    acc += m[i * d + a] * du[a]
                    dm[i * d + a] += p[i] * du[a]
                dp[i] = acc
                s += p[i] * acc
            for i in range(n):
                acc = p[i] * (dp[i] - s)
                for a in range(d):
                    dprev[a] += acc * m[i * d + a]
                    dm[i * d + a] += acc * u[a]
        for a in range(d):
            du[a] = dprev[a]


cdef idx_t _max_mem(const idx_t* mem_ptr, const idx_t* batch, idx_t B) noexcept nogil:
    cdef idx_t bi, e, n, out = 0
    for bi in range(B):
        e = batch[bi]
        n = mem_ptr[e + 1] - mem_ptr[e]
        if n > out:
            out = n
    return out


def body_forward(double[:, ::1] A, double[:, ::1] R, int hops,
                 idx_t[::1] indptr, idx_t[::1] indices, double[::1] counts,
                 idx_t[::1] mem_ptr, idx_t[::1] mem_ids, idx_t[::1] query_ids, idx_t[::1] batch):
    cdef int d = A.shape[1]
    cdef idx_t B = batch.shape[0]
    cdef idx_t M = _max_mem(&mem_ptr[0], &batch[0], B) if B else 0
    U_arr = np.zeros((B, d))
    P_arr = np.zeros((B, hops, M))
    m_arr = np.zeros(max(M, 1) * d)
    us_arr = np.zeros((hops + 1) * d)
    ps_arr = np.zeros(max(hops * M, 1))
    cdef double[:, ::1] U = U_arr
    cdef double[:, :, ::1] P = P_arr
    cdef double[::1] m = m_arr
    cdef double[::1] us = us_arr
    cdef double[::1] ps = ps_arr
    cdef idx_t bi, e, n, i
    cdef int k, a
    with nogil:
        for bi in range(B):
            e = batch[bi]
            n = mem_ptr[e + 1] - mem_ptr[e]
            _forward(&A[0, 0], &R[0, 0], d, hops, &indptr[0], &indices[0], &counts[0],
                     &mem_ids[mem_ptr[e]] if n else &mem_ids[0], n, query_ids[e],
                     &m[0], &us[0], &ps[0])
            for a in range(d):
                U[bi, a] = us[hops * d + a]
            for k in range(hops):
                for i in range(n):
                    P[bi, k, i] = ps[k * n + i]
    return U_arr, P_arr


def body_backward(double[:, ::1] A, double[:, ::1] R, int hops,
                  idx_t[::1] indptr, idx_t[::1] indices, double[::1] counts,
                  idx_t[::1] mem_ptr, idx_t[::1] mem_ids, idx_t[::1] query_ids, idx_t[::1] batch,
                  double[:, ::1] dU, double[:, ::1] gA, double[:, ::1] gR):
    cdef int d = A.shape[1]
    cdef idx_t B = batch.shape[0]
    if B == 0:
        return
    cdef idx_t M = _max_mem(&mem_ptr[0], &batch[0], B)
    cdef double[::1] m = np.zeros(max(M, 1) * d)
    cdef double[::1] dm = np.zeros(max(M, 1) * d)
    cdef double[::1] dp = np.zeros(max(M, 1))
    cdef double[::1] us = np.zeros((hops + 1) * d)
    cdef double[::1] ps = np.zeros(max(hops * M, 1))
    cdef double[::1] du = np.zeros(d)
    cdef double[::1] dprev = np.zeros(d)
    cdef idx_t bi, e, n, i
    cdef int a
    cdef const idx_t* mp
    with nogil:
        for bi in range(B):
            e = batch[bi]
            n = mem_ptr[e + 1] - mem_ptr[e]
            mp = &mem_ids[mem_ptr[e]] if n else &mem_ids[0]
            _forward(&A[0, 0], &R[0, 0], d, hops, &indptr[0], &indices[0], &counts[0],
                     mp, n, query_ids[e], &m[0], &us[0], &ps[0])
            for a in range(d):
                du[a] = dU[bi, a]
            _backward(&R[0, 0], d, hops, n, &m[0], &us[0], &ps[0], &du[0], &dprev[0],
                      &dm[0], &dp[0], &gR[0, 0], NULL, NULL)
            for i in range(n):
                _scatter(&gA[0, 0], d, &indptr[0], &indices[0], &counts[0], mp[i], &dm[i * d])
            _scatter(&gA[0, 0], d, &indptr[0], &indices[0], &counts[0], query_ids[e], &du[0])


def body_dots(double[:, ::1] A, double[:, ::1] R, int hops,
              idx_t[::1] indptr, idx_t[::1] indices, double[::1] counts,
              idx_t[::1] mem_ptr, idx_t[::1] mem_ids, idx_t[::1] query_ids, idx_t[::1] batch,
              double[:, ::1] dU, double[:, ::1] vA, double[:, ::1] vR):
    cdef int d = A.shape[1]
    cdef idx_t B = batch.shape[0]
    dots_arr = np.zeros(B)
    if B == 0:
        return dots_arr
    cdef double[::1] dots = dots_arr
    cdef idx_t M = _max_mem(&mem_ptr[0], &batch[0], B)
    cdef double[::1] m = np.zeros(max(M, 1) * d)
    cdef double[::1] dm = np.zeros(max(M, 1) * d)
    cdef double[::1] dp = np.zeros(max(M, 1))
    cdef double[::1] us = np.zeros((hops + 1) * d)
    cdef double[::1] ps = np.zeros(max(hops * M, 1))
    cdef double[::1] du = np.zeros(d)
    cdef double[::1] dprev = np.zeros(d)
    cdef double[::1] ve = np.zeros(d)
    cdef double rdot
    cdef double acc
    cdef idx_t bi, e, n, i
    cdef int a
    cdef const idx_t* mp
    with nogil:
        for bi in range(B):
            e = batch[bi]
            n = mem_ptr[e + 1] - mem_ptr[e]
            mp = &mem_ids[mem_ptr[e]] if n else &mem_ids[0]
            _forward(&A[0, 0], &R[0, 0], d, hops, &indptr[0], &indices[0], &counts[0],
                     mp, n, query_ids[e], &m[0], &us[0], &ps[0])
            for a in range(d):
                du[a] = dU[bi, a]
            rdot = 0.0
            _backward(&R[0, 0], d, hops, n, &m[0], &us[0], &ps[0], &du[0], &dprev[0],
                      &dm[0], &dp[0], NULL, &vR[0, 0], &rdot)
            acc = rdot
            for i in range(n):
                _embed(&vA[0, 0], d, &indptr[0], &indices[0], &counts[0], mp[i], &ve[0])
                for a in range(d):
                    acc += dm[i * d + a] * ve[a]
            _embed(&vA[0, 0], d, &indptr[0], &indices[0], &counts[0], query_ids[e], &ve[0])
            for a in range(d):
                acc += du[a] * ve[a]
            dots[bi] = acc
    return dots_arr

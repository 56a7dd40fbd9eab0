# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Mirrors ``_kernels_py`` function-for-function.

Callers must pass C-contiguous float64 (or int64 for ``lcs_length``) arrays;
shape validation happens in the Python layer.
"""
import numpy as np

from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef int n = a.shape[0]
    cdef int k = a.shape[1]
    cdef int m = b.shape[1]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char trans_n = b'N'
    out = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0 or k == 0:
        return out
    cdef double[:, ::1] o = out
    # row-major C = A B  <=>  column-major C^T = B^T A^T
    dgemm(&trans_n, &trans_n, &m, &n, &k, &one,
          <double*>&b[0, 0], &m, <double*>&a[0, 0], &k,
          &zero, &o[0, 0], &m)
    return out


def row_softmax(const double[:, ::1] x, double scale):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, v, total
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        mx = x[i, 0] / scale
        for j in range(1, m):
            v = x[i, j] / scale
            if v > mx:
                mx = v
        total = 0.0
        for j in range(m):
            v = exp(x[i, j] / scale - mx)
            o[i, j] = v
            total += v
        for j in range(m):
            o[i, j] /= total
    return out


cdef Py_ssize_t ATTN_TILE = 64


def attention(const double[:, ::1] q, const double[:, ::1] k,
              const double[:, ::1] v, double scale):
    """softmax(q k^T / scale) v over tiles of query rows.

    Each tile's scores go through BLAS dgemm into a ``tile x n_k`` scratch
    buffer, are softmaxed in place, then multiplied into ``v``. The full
    ``n_q x n_k`` weight matrix is never materialised.
    """
    cdef int nq = q.shape[0]
    cdef int nk = k.shape[0]
    cdef int d = q.shape[1]
    cdef int dv = v.shape[1]
    cdef int t0, tn, i, j
    cdef double alpha = 1.0 / scale
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef double mx, total
    cdef char trans_t = b'T'
    cdef char trans_n = b'N'
    out = np.zeros((nq, dv), dtype=np.float64)
    scratch = np.empty((ATTN_TILE, max(nk, 1)), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[:, ::1] sc = scratch
    if nq == 0 or nk == 0:
        return out
    for t0 in range(0, nq, ATTN_TILE):
        tn = min(<int>ATTN_TILE, nq - t0)
        # row-major S = Q K^T  <=>  column-major S^T = K Q^T
        dgemm(&trans_t, &trans_n, &nk, &tn, &d, &alpha,
              <double*>&k[0, 0], &d, <double*>&q[t0, 0], &d,
              &zero, &sc[0, 0], &nk)
        for i in range(tn):
            mx = sc[i, 0]
            for j in range(1, nk):
                if sc[i, j] > mx:
                    mx = sc[i, j]
            total = 0.0
            for j in range(nk):
                sc[i, j] = exp(sc[i, j] - mx)
                total += sc[i, j]
            for j in range(nk):
                sc[i, j] /= total
        # row-major O = S V  <=>  column-major O^T = V^T S^T
        dgemm(&trans_n, &trans_n, &dv, &tn, &nk, &one,
              <double*>&v[0, 0], &dv, &sc[0, 0], &nk,
              &zero, &o[t0, 0], &dv)
    return out


def block_mean(const double[:, ::1] x, Py_ssize_t out_rows):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t block = rows // out_rows
    cdef Py_ssize_t r, i, j
    out = np.zeros((out_rows, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for r in range(out_rows):
        for i in range(r * block, (r + 1) * block):
            for j in range(c):
                o[r, j] += x[i, j]
        for j in range(c):
            o[r, j] /= block
    return out


def adjacent_cosine_distance(const double[:, ::1] f):
    cdef Py_ssize_t n = f.shape[0]
    cdef Py_ssize_t c = f.shape[1]
    cdef Py_ssize_t i, j
    cdef double dot, na, nb
    out = np.empty(max(n - 1, 0), dtype=np.float64)
    cdef double[::1] o = out
    for i in range(1, n):
        dot = 0.0
        na = 0.0
        nb = 0.0
        for j in range(c):
            dot += f[i - 1, j] * f[i, j]
            na += f[i - 1, j] * f[i - 1, j]
            nb += f[i, j] * f[i, j]
        o[i - 1] = 1.0 - dot / (sqrt(na) * sqrt(nb))
    return out


def lcs_length(const long long[::1] a, const long long[::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef long long diag, up
    if n == 0 or m == 0:
        return 0
    row = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] r = row
    for i in range(n):
        diag = 0
        for j in range(m):
            up = r[j + 1]
            if a[i] == b[j]:
                r[j + 1] = diag + 1
            elif r[j] > up:
                r[j + 1] = r[j]
            diag = up
    return int(r[m])

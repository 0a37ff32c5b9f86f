# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels: batched im2col plus one BLAS GEMM per call.

Single-threaded by design; callers own any parallel decomposition.  Each
call reduces through a single GEMM whose operand layout depends only on
the input shapes, so results depend only on operand values and shapes.
"""

import numpy as np

cimport numpy as cnp
from cython cimport floating
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


# ---- raw GEMM wrappers (row-major semantics over column-major BLAS) ------
# BLAS takes non-const pointers; the casts below only drop constness.

cdef void _mm_nn(const floating* A, const floating* B, floating* C,
                 int m, int k, int n) noexcept nogil:
    # row-major C[m,n] = A[m,k] @ B[k,n]
    cdef char tn = b'N'
    cdef floating one = 1.0, zero = 0.0
    if floating is float:
        sgemm(&tn, &tn, &n, &m, &k, &one, <float*>B, &n, <float*>A, &k,
              &zero, <float*>C, &n)
    else:
        dgemm(&tn, &tn, &n, &m, &k, &one, <double*>B, &n, <double*>A, &k,
              &zero, <double*>C, &n)


cdef void _mm_tn(const floating* A, const floating* B, floating* C,
                 int m, int k, int n) noexcept nogil:
    # row-major C[m,n] = A.T @ B, with A stored (k,m), B stored (k,n)
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef floating one = 1.0, zero = 0.0
    if floating is float:
        sgemm(&tn, &tt, &n, &m, &k, &one, <float*>B, &n, <float*>A, &m,
              &zero, <float*>C, &n)
    else:
        dgemm(&tn, &tt, &n, &m, &k, &one, <double*>B, &n, <double*>A, &m,
              &zero, <double*>C, &n)


cdef void _mm_nt(const floating* A, const floating* B, floating* C,
                 int m, int k, int n) noexcept nogil:
    # row-major C[m,n] = A @ B.T, with A stored (m,k), B stored (n,k)
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef floating one = 1.0, zero = 0.0
    if floating is float:
        sgemm(&tt, &tn, &n, &m, &k, &one, <float*>B, &k, <float*>A, &k,
              &zero, <float*>C, &n)
    else:
        dgemm(&tt, &tn, &n, &m, &k, &one, <double*>B, &k, <double*>A, &k,
              &zero, <double*>C, &n)


# ---- batch gather / scatter between NCP and (C, N*P) layouts --------------

cdef void _gather_nc(const floating* src, floating* dst,
                     int n, int c, long P) noexcept nogil:
    # src (n,c,P) row-major -> dst (c, n*P) with column block s at offset s*P
    cdef int s, ci
    for s in range(n):
        for ci in range(c):
            memcpy(dst + (<long>ci * n + s) * P,
                   src + (<long>s * c + ci) * P,
                   P * sizeof(floating))


cdef void _scatter_nc(const floating* src, floating* dst,
                      int n, int c, long P) noexcept nogil:
    # src (c, n*P) -> dst (n,c,P) row-major; inverse of _gather_nc
    cdef int s, ci
    for s in range(n):
        for ci in range(c):
            memcpy(dst + (<long>s * c + ci) * P,
                   src + (<long>ci * n + s) * P,
                   P * sizeof(floating))


# ---- im2col / col2im for one sample into a batch-wide buffer ---------------

cdef void _im2col_one(const floating* x, floating* cols, long ld, long coff,
                      int c, int h, int w, int kh, int kw, int stride, int pad,
                      int ho, int wo) noexcept nogil:
    # writes the sample's columns at cols[row*ld + coff + p]
    cdef int ci, i, j, oi, oj, ii, jj, j0, j1
    cdef long row, base
    cdef floating v
    if stride == 1:
        # each output row is a contiguous slice of the input row
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (<long>ci * kh + i) * kw + j
                    j0 = pad - j if pad - j > 0 else 0
                    j1 = w + pad - j if w + pad - j < wo else wo
                    for oi in range(ho):
                        ii = oi + i - pad
                        base = row * ld + coff + <long>oi * wo
                        if ii < 0 or ii >= h or j1 <= j0:
                            for oj in range(wo):
                                cols[base + oj] = 0.0
                            continue
                        for oj in range(j0):
                            cols[base + oj] = 0.0
                        memcpy(cols + base + j0,
                               x + (<long>ci * h + ii) * w + (j0 + j - pad),
                               (j1 - j0) * sizeof(floating))
                        for oj in range(j1, wo):
                            cols[base + oj] = 0.0
        return
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (<long>ci * kh + i) * kw + j
                for oi in range(ho):
                    ii = oi * stride + i - pad
                    for oj in range(wo):
                        jj = oj * stride + j - pad
                        if 0 <= ii < h and 0 <= jj < w:
                            v = x[(<long>ci * h + ii) * w + jj]
                        else:
                            v = 0.0
                        cols[row * ld + coff + oi * wo + oj] = v


cdef void _col2im_one(const floating* dcols, long ld, long coff, floating* dx,
                      int c, int h, int w, int kh, int kw, int stride, int pad,
                      int ho, int wo) noexcept nogil:
    # dx must be zero-initialized by the caller
    cdef int ci, i, j, oi, oj, ii, jj, j0, j1
    cdef long row, base, dst
    if stride == 1:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (<long>ci * kh + i) * kw + j
                    j0 = pad - j if pad - j > 0 else 0
                    j1 = w + pad - j if w + pad - j < wo else wo
                    if j1 <= j0:
                        continue
                    for oi in range(ho):
                        ii = oi + i - pad
                        if ii < 0 or ii >= h:
                            continue
                        base = row * ld + coff + <long>oi * wo
                        dst = (<long>ci * h + ii) * w + (j0 + j - pad)
                        for oj in range(j1 - j0):
                            dx[dst + oj] += dcols[base + j0 + oj]
        return
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (<long>ci * kh + i) * kw + j
                for oi in range(ho):
                    ii = oi * stride + i - pad
                    if ii < 0 or ii >= h:
                        continue
                    for oj in range(wo):
                        jj = oj * stride + j - pad
                        if 0 <= jj < w:
                            dx[(<long>ci * h + ii) * w + jj] += dcols[row * ld + coff + oi * wo + oj]


# ---- public kernels --------------------------------------------------------

def conv2d_forward(const floating[:, :, :, ::1] x, const floating[:, :, :, ::1] w,
                   int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (wd + 2 * pad - kw) // stride + 1
    cdef int K = c * kh * kw
    cdef long P = <long>ho * wo, NP = <long>n * P
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty((n, co, ho, wo), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef floating[::1] cols = np.empty(<long>K * NP, dtype=dtype)
    cdef floating[::1] ybuf = np.empty(<long>co * NP, dtype=dtype)
    cdef int s
    cdef bint direct = kh == 1 and kw == 1 and stride == 1 and pad == 0
    with nogil:
        if direct:
            _gather_nc(&x[0, 0, 0, 0], &cols[0], n, c, P)
        else:
            for s in range(n):
                _im2col_one(&x[s, 0, 0, 0], &cols[0], NP, s * P,
                            c, h, wd, kh, kw, stride, pad, ho, wo)
        _mm_nn(&w[0, 0, 0, 0], &cols[0], &ybuf[0], co, K, <int>NP)
        _scatter_nc(&ybuf[0], &y[0, 0, 0, 0], n, co, P)
    return out


def conv2d_backward_input(const floating[:, :, :, ::1] dy,
                          const floating[:, :, :, ::1] w,
                          int stride, int pad, int h, int wd):
    cdef int n = dy.shape[0], co = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef int c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef int K = c * kh * kw
    cdef long P = <long>ho * wo, NP = <long>n * P
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((n, c, h, wd), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef floating[::1] gbuf = np.empty(<long>co * NP, dtype=dtype)
    cdef floating[::1] dcols = np.empty(<long>K * NP, dtype=dtype)
    cdef int s
    cdef bint direct = kh == 1 and kw == 1 and stride == 1 and pad == 0
    with nogil:
        _gather_nc(&dy[0, 0, 0, 0], &gbuf[0], n, co, P)
        if direct:
            _mm_tn(&w[0, 0, 0, 0], &gbuf[0], &dcols[0], c, co, <int>NP)
            _scatter_nc(&dcols[0], &dx[0, 0, 0, 0], n, c, P)
        else:
            _mm_tn(&w[0, 0, 0, 0], &gbuf[0], &dcols[0], K, co, <int>NP)
            for s in range(n):
                _col2im_one(&dcols[0], NP, s * P, &dx[s, 0, 0, 0],
                            c, h, wd, kh, kw, stride, pad, ho, wo)
    return out


def conv2d_backward_weight(const floating[:, :, :, ::1] dy,
                           const floating[:, :, :, ::1] x,
                           int stride, int pad, int kh, int kw):
    cdef int n = dy.shape[0], co = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef int c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef int K = c * kh * kw
    cdef long P = <long>ho * wo, NP = <long>n * P
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty((co, c, kh, kw), dtype=dtype)
    cdef floating[:, :, :, ::1] dw = out
    cdef floating[::1] gbuf = np.empty(<long>co * NP, dtype=dtype)
    cdef floating[::1] cols = np.empty(<long>K * NP, dtype=dtype)
    cdef int s
    cdef bint direct = kh == 1 and kw == 1 and stride == 1 and pad == 0
    # the whole-batch reduction runs inside one GEMM over n*P columns
    with nogil:
        _gather_nc(&dy[0, 0, 0, 0], &gbuf[0], n, co, P)
        if direct:
            _gather_nc(&x[0, 0, 0, 0], &cols[0], n, c, P)
        else:
            for s in range(n):
                _im2col_one(&x[s, 0, 0, 0], &cols[0], NP, s * P,
                            c, h, wd, kh, kw, stride, pad, ho, wo)
        _mm_nt(&gbuf[0], &cols[0], &dw[0, 0, 0, 0], co, <int>NP, K)
    return out

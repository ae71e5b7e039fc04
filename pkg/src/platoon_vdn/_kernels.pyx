# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-slot SINR, groupcast rate and tail interference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log2

cnp.import_array()


def slot_evaluate(double[:, :, ::1] gains, cnp.int64_t[::1] channels, double[::1] powers_w,
                  cnp.uint8_t[::1] active, double noise_w, int n_subchannels, bint tail_only):
    cdef Py_ssize_t n = gains.shape[0]
    cdef Py_ssize_t m = gains.shape[2]
    cdef Py_ssize_t i, p, j, k
    cdef double interference, worst, s
    sinr_arr = np.zeros((n, m), dtype=np.float64)
    rate_arr = np.zeros(n, dtype=np.float64)
    tail_arr = np.empty((n, n_subchannels), dtype=np.float64)
    cdef double[:, ::1] sinr = sinr_arr
    cdef double[::1] rate = rate_arr
    cdef double[:, ::1] tail = tail_arr

    for p in range(n):
        for k in range(n_subchannels):
            interference = 0.0
            for i in range(n):
                if i != p and active[i] and channels[i] == k:
                    interference += powers_w[i] * gains[i, p, m - 1]
            tail[p, k] = noise_w + interference
        if not active[p]:
            continue
        k = channels[p]
        worst = 0.0
        for j in range(m):
            interference = 0.0
            for i in range(n):
                if i != p and active[i] and channels[i] == k:
                    interference += powers_w[i] * gains[i, p, j]
            s = powers_w[p] * gains[p, p, j] / (noise_w + interference)
            sinr[p, j] = s
            if j == 0 or s < worst:
                worst = s
        if tail_only:
            worst = sinr[p, m - 1]
        rate[p] = log2(1.0 + worst)
    return sinr_arr, rate_arr, tail_arr


# GRU recurrence ------------------------------------------------------------
# Row-major C = A @ B is column-major C^T = B^T @ A^T, hence the swapped
# operands in the dgemm calls below.

from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm


cdef extern from "_gru_ops.h" nogil:
    void gru_gates(int n_b, int hid, const double *fz, const double *fr, const double *zr,
                   const double *h, double *z, double *r, double *rh)
    void gru_update(long n, const double *fc, const double *u, const double *h,
                    const double *z, double *c, double *h_next)
    void gru_back_update(long n, double *dh, const double *dh_in, const double *z,
                         const double *c, const double *h, double *dc, double *dz)
    void gru_back_gates(int n_b, int hid, const double *drh, const double *h, const double *r,
                        const double *z, const double *dz, double *dh, double *dr, double *dzr)


cdef inline void _mm(double* a, double* b, double* c, int m, int k, int n, double beta) noexcept nogil:
    # c[m, n] = a[m, k] @ b[k, n] + beta * c
    cdef char tr = b'N'
    cdef double one = 1.0
    dgemm(&tr, &tr, &n, &m, &k, &one, b, &n, a, &k, &beta, c, &n)


cdef inline void _mm_bt(double* a, double* b, double* c, int m, int k, int n, double beta) noexcept nogil:
    # c[m, n] = a[m, k] @ b[n, k].T + beta * c
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tt, &tn, &n, &m, &k, &one, b, &k, a, &k, &beta, c, &n)


def gru_forward_seq(double[:, :, ::1] fz, double[:, :, ::1] fr, double[:, :, ::1] fc,
                    double[:, ::1] u_zr, double[:, ::1] u_h, double[:, ::1] h0):
    cdef int n_t = fz.shape[0], n_b = fz.shape[1], hid = fz.shape[2]
    shape = (n_t, n_b, hid)
    h_prev_arr = np.empty(shape)
    z_arr = np.empty(shape)
    r_arr = np.empty(shape)
    c_arr = np.empty(shape)
    hs_arr = np.empty(shape)
    if n_t == 0 or n_b == 0 or hid == 0:
        return h_prev_arr, z_arr, r_arr, c_arr, hs_arr
    cdef double[:, :, ::1] h_prev = h_prev_arr, z = z_arr, r = r_arr, c = c_arr, hs = hs_arr
    cdef double[:, ::1] zr = np.empty((n_b, 2 * hid))
    cdef double[:, ::1] rh = np.empty((n_b, hid))
    cdef double[:, ::1] tmp = np.empty((n_b, hid))
    cdef int t
    cdef long n = <long>n_b * hid
    h_prev[0, :, :] = h0
    with nogil:
        for t in range(n_t):
            if t > 0:
                memcpy(&h_prev[t, 0, 0], &hs[t - 1, 0, 0], n * sizeof(double))
            _mm(&h_prev[t, 0, 0], &u_zr[0, 0], &zr[0, 0], n_b, hid, 2 * hid, 0.0)
            gru_gates(n_b, hid, &fz[t, 0, 0], &fr[t, 0, 0], &zr[0, 0], &h_prev[t, 0, 0],
                      &z[t, 0, 0], &r[t, 0, 0], &rh[0, 0])
            _mm(&rh[0, 0], &u_h[0, 0], &tmp[0, 0], n_b, hid, hid, 0.0)
            gru_update(n, &fc[t, 0, 0], &tmp[0, 0], &h_prev[t, 0, 0], &z[t, 0, 0],
                       &c[t, 0, 0], &hs[t, 0, 0])
    return h_prev_arr, z_arr, r_arr, c_arr, hs_arr


def gru_backward_seq(double[:, :, ::1] dh_all, double[:, :, ::1] z, double[:, :, ::1] r,
                     double[:, :, ::1] c, double[:, :, ::1] h_prev, double[:, ::1] u_zr,
                     double[:, ::1] u_h, double[:, ::1] dh_last):
    cdef int n_t = z.shape[0], n_b = z.shape[1], hid = z.shape[2]
    shape = (n_t, n_b, hid)
    dz_arr = np.empty(shape)
    dr_arr = np.empty(shape)
    dc_arr = np.empty(shape)
    dh_arr = np.array(dh_last, dtype=np.float64, copy=True, order="C")
    if n_t == 0 or n_b == 0 or hid == 0:
        return dz_arr, dr_arr, dc_arr, dh_arr
    cdef double[:, :, ::1] dz = dz_arr, dr = dr_arr, dc = dc_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dzr = np.empty((n_b, 2 * hid))
    cdef double[:, ::1] drh = np.empty((n_b, hid))
    cdef int t
    cdef long n = <long>n_b * hid
    with nogil:
        for t in range(n_t - 1, -1, -1):
            gru_back_update(n, &dh[0, 0], &dh_all[t, 0, 0], &z[t, 0, 0], &c[t, 0, 0],
                            &h_prev[t, 0, 0], &dc[t, 0, 0], &dz[t, 0, 0])
            _mm_bt(&dc[t, 0, 0], &u_h[0, 0], &drh[0, 0], n_b, hid, hid, 0.0)
            gru_back_gates(n_b, hid, &drh[0, 0], &h_prev[t, 0, 0], &r[t, 0, 0], &z[t, 0, 0],
                           &dz[t, 0, 0], &dh[0, 0], &dr[t, 0, 0], &dzr[0, 0])
            _mm_bt(&dzr[0, 0], &u_zr[0, 0], &dh[0, 0], n_b, 2 * hid, hid, 1.0)
    return dz_arr, dr_arr, dc_arr, dh_arr

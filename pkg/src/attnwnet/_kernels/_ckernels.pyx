# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the affinity and dense-CRF message loops."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

from ._pykernels import ball_offsets

cnp.import_array()


def affinity_edges(img, double sigma_i, double sigma_x, radius, double prune):
    cdef double[:, :, ::1] f = np.ascontiguousarray(img, dtype=np.float64)
    cdef long[:, ::1] offs = np.ascontiguousarray(ball_offsets(radius, half=True), dtype=np.int_)
    cdef Py_ssize_t D = f.shape[0], H = f.shape[1], W = f.shape[2]
    cdef Py_ssize_t n_off = offs.shape[0]
    cdef double[::1] spatial = np.empty(n_off)
    cdef Py_ssize_t o, z, y, x, zz, yy, xx, m = 0, cap
    cdef double inv_si2 = 1.0 / (sigma_i * sigma_i), df, w
    for o in range(n_off):
        spatial[o] = exp(-<double>(offs[o, 0] * offs[o, 0] + offs[o, 1] * offs[o, 1]
                                   + offs[o, 2] * offs[o, 2]) / (sigma_x * sigma_x))
    cap = D * H * W * n_off
    u_arr = np.empty(cap, dtype=np.int64)
    v_arr = np.empty(cap, dtype=np.int64)
    w_arr = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] us = u_arr, vs = v_arr
    cdef double[::1] ws = w_arr
    # offsets are lexicographic, so edges come out sorted by (u, v)
    for z in range(D):
        for y in range(H):
            for x in range(W):
                for o in range(n_off):
                    zz = z + offs[o, 0]
                    yy = y + offs[o, 1]
                    xx = x + offs[o, 2]
                    if zz < 0 or zz >= D or yy < 0 or yy >= H or xx < 0 or xx >= W:
                        continue
                    df = f[z, y, x] - f[zz, yy, xx]
                    w = exp(-(df * df) * inv_si2) * spatial[o]
                    if w >= prune and w > 0.0:
                        us[m] = (z * H + y) * W + x
                        vs[m] = (zz * H + yy) * W + xx
                        ws[m] = w
                        m += 1
    return u_arr[:m].copy(), v_arr[:m].copy(), w_arr[:m].copy()


def crf_messages(q, img, radius, double w_smooth, double theta_gamma, double w_appear,
                 double theta_alpha, double theta_beta):
    # classes last so the per-pair update touches contiguous memory
    cdef double[:, :, :, ::1] qv = np.ascontiguousarray(np.moveaxis(np.asarray(q, dtype=np.float64), 0, -1))
    cdef double[:, :, ::1] f = np.ascontiguousarray(img, dtype=np.float64)
    # each unordered pair once; the kernel is symmetric so it feeds both ends
    cdef long[:, ::1] offs = np.ascontiguousarray(ball_offsets(radius, half=True), dtype=np.int_)
    cdef Py_ssize_t K = qv.shape[3], D = f.shape[0], H = f.shape[1], W = f.shape[2]
    cdef Py_ssize_t n_off = offs.shape[0]
    out = np.zeros((D, H, W, K), dtype=np.float64)
    cdef double[:, :, :, ::1] m = out
    cdef double[::1] smooth = np.empty(n_off), app = np.empty(n_off)
    cdef Py_ssize_t o, z, y, x, zz, yy, xx, k
    cdef double d2, di, kern, inv_b = 1.0 / (2.0 * theta_beta * theta_beta)
    for o in range(n_off):
        d2 = <double>(offs[o, 0] * offs[o, 0] + offs[o, 1] * offs[o, 1] + offs[o, 2] * offs[o, 2])
        smooth[o] = w_smooth * exp(-d2 / (2.0 * theta_gamma * theta_gamma))
        app[o] = w_appear * exp(-d2 / (2.0 * theta_alpha * theta_alpha))
    with nogil:
        for z in range(D):
            for y in range(H):
                for x in range(W):
                    for o in range(n_off):
                        zz = z + offs[o, 0]
                        yy = y + offs[o, 1]
                        xx = x + offs[o, 2]
                        if zz < 0 or zz >= D or yy < 0 or yy >= H or xx < 0 or xx >= W:
                            continue
                        di = f[z, y, x] - f[zz, yy, xx]
                        kern = smooth[o] + app[o] * exp(-(di * di) * inv_b)
                        for k in range(K):
                            m[z, y, x, k] += kern * qv[zz, yy, xx, k]
                            m[zz, yy, xx, k] += kern * qv[z, y, x, k]
    return np.ascontiguousarray(np.moveaxis(out, -1, 0))

# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernel core: direct 3x3/1x1 convolutions, 2x2 maxpool and
nearest-neighbour upsampling on float64 (N, C, H, W) batches.

Convolution rows are accumulated in small scratch buffers that stay in L1,
and inner loops run over the contiguous last axis so the C compiler can
vectorise them. Loop orders are fixed: results are deterministic per build.
Spatial sizes below 2x2 are rejected (the network never goes that small).
"""

import numpy as np

BACKEND = "cython"


def conv3x3_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0]
    if w.shape[1] != Cin or w.shape[2] != 3 or w.shape[3] != 3:
        raise ValueError("weight shape does not match a 3x3 convolution of the input")
    if H < 2 or W < 2:
        raise ValueError("conv3x3 requires spatial size >= 2x2")
    y_arr = np.empty((N, Cout, H, W), dtype=np.float64)
    buf_arr = np.empty((Cout, W), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef double[:, ::1] buf = buf_arr
    cdef Py_ssize_t n, co, ci, ky, i, j, ii
    cdef double w0, w1, w2, bv
    cdef double *brow
    cdef double *yrow
    cdef const double *xrow
    with nogil:
        for n in range(N):
            for i in range(H):
                for co in range(Cout):
                    bv = b[co]
                    brow = &buf[co, 0]
                    for j in range(W):
                        brow[j] = bv
                for ci in range(Cin):
                    for ky in range(3):
                        ii = i + ky - 1
                        if ii < 0 or ii >= H:
                            continue
                        xrow = &x[n, ci, ii, 0]
                        for co in range(Cout):
                            w0 = w[co, ci, ky, 0]
                            w1 = w[co, ci, ky, 1]
                            w2 = w[co, ci, ky, 2]
                            brow = &buf[co, 0]
                            brow[0] += w1 * xrow[0] + w2 * xrow[1]
                            for j in range(1, W - 1):
                                brow[j] += w0 * xrow[j - 1] + w1 * xrow[j] + w2 * xrow[j + 1]
                            brow[W - 1] += w0 * xrow[W - 2] + w1 * xrow[W - 1]
                for co in range(Cout):
                    brow = &buf[co, 0]
                    yrow = &y[n, co, i, 0]
                    for j in range(W):
                        yrow[j] = brow[j]
    return y_arr


def conv3x3_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                     double[:, :, :, ::1] dy):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0]
    if H < 2 or W < 2:
        raise ValueError("conv3x3 requires spatial size >= 2x2")
    dx_arr = np.empty((N, Cin, H, W), dtype=np.float64)
    dw_arr = np.zeros((Cout, Cin, 3, 3), dtype=np.float64)
    db_arr = np.zeros(Cout, dtype=np.float64)
    buf_arr = np.empty((Cin, W), dtype=np.float64)
    # per-tap vector accumulators keep the dw inner loops reduction-free
    tap_arr = np.empty((9, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] buf = buf_arr
    cdef double[:, ::1] tap = tap_arr
    cdef Py_ssize_t n, co, ci, ky, i, j, ii, i0, i1
    cdef double w0, w1, w2, acc, a0, a1, a2, a3
    cdef double *brow
    cdef double *dxrow
    cdef double *t0
    cdef double *t1
    cdef double *t2
    cdef const double *dyrow
    cdef const double *xrow
    with nogil:
        for co in range(Cout):
            acc = 0.0
            for n in range(N):
                for i in range(H):
                    dyrow = &dy[n, co, i, 0]
                    a0 = 0.0
                    for j in range(W):
                        a0 += dyrow[j]
                    acc += a0
            db[co] = acc
        for n in range(N):
            # dx[ci, i, j] = sum_co sum_ky sum_kx w[co, ci, ky, kx] * dy[co, i+1-ky, j+1-kx]
            for i in range(H):
                for ci in range(Cin):
                    brow = &buf[ci, 0]
                    for j in range(W):
                        brow[j] = 0.0
                for co in range(Cout):
                    for ky in range(3):
                        ii = i + 1 - ky
                        if ii < 0 or ii >= H:
                            continue
                        dyrow = &dy[n, co, ii, 0]
                        for ci in range(Cin):
                            w0 = w[co, ci, ky, 0]
                            w1 = w[co, ci, ky, 1]
                            w2 = w[co, ci, ky, 2]
                            brow = &buf[ci, 0]
                            brow[0] += w1 * dyrow[0] + w0 * dyrow[1]
                            for j in range(1, W - 1):
                                brow[j] += w2 * dyrow[j - 1] + w1 * dyrow[j] + w0 * dyrow[j + 1]
                            brow[W - 1] += w2 * dyrow[W - 2] + w1 * dyrow[W - 1]
                for ci in range(Cin):
                    brow = &buf[ci, 0]
                    dxrow = &dx[n, ci, i, 0]
                    for j in range(W):
                        dxrow[j] = brow[j]
            # dw[co, ci, ky, kx] += sum_ij dy[co, i, j] * x[ci, i+ky-1, j+kx-1];
            # accumulated per column first so the row loops stay elementwise.
            for co in range(Cout):
                for ci in range(Cin):
                    for ky in range(3):
                        for j in range(W):
                            tap[3 * ky, j] = 0.0
                            tap[3 * ky + 1, j] = 0.0
                            tap[3 * ky + 2, j] = 0.0
                    for ky in range(3):
                        i0 = 1 - ky if ky < 1 else 0
                        i1 = H if ky <= 1 else H - 1
                        t0 = &tap[3 * ky, 0]
                        t1 = &tap[3 * ky + 1, 0]
                        t2 = &tap[3 * ky + 2, 0]
                        for i in range(i0, i1):
                            dyrow = &dy[n, co, i, 0]
                            xrow = &x[n, ci, i + ky - 1, 0]
                            t1[0] += dyrow[0] * xrow[0]
                            t2[0] += dyrow[0] * xrow[1]
                            for j in range(1, W - 1):
                                t0[j] += dyrow[j] * xrow[j - 1]
                                t1[j] += dyrow[j] * xrow[j]
                                t2[j] += dyrow[j] * xrow[j + 1]
                            t0[W - 1] += dyrow[W - 1] * xrow[W - 2]
                            t1[W - 1] += dyrow[W - 1] * xrow[W - 1]
                    for ky in range(3):
                        a0 = 0.0
                        a1 = 0.0
                        a2 = 0.0
                        for j in range(W):
                            a0 += tap[3 * ky, j]
                            a1 += tap[3 * ky + 1, j]
                            a2 += tap[3 * ky + 2, j]
                        dw[co, ci, ky, 0] += a0
                        dw[co, ci, ky, 1] += a1
                        dw[co, ci, ky, 2] += a2
    return dx_arr, dw_arr, db_arr


def conv1x1_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0]
    y_arr = np.empty((N, Cout, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, co, ci, i, j
    cdef double wv, bv
    cdef double *yrow
    cdef const double *xrow
    with nogil:
        for n in range(N):
            for co in range(Cout):
                bv = b[co]
                for i in range(H):
                    yrow = &y[n, co, i, 0]
                    for j in range(W):
                        yrow[j] = bv
                for ci in range(Cin):
                    wv = w[co, ci, 0, 0]
                    for i in range(H):
                        yrow = &y[n, co, i, 0]
                        xrow = &x[n, ci, i, 0]
                        for j in range(W):
                            yrow[j] += wv * xrow[j]
    return y_arr


def conv1x1_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                     double[:, :, :, ::1] dy):
    cdef Py_ssize_t N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Cout = w.shape[0]
    dx_arr = np.zeros((N, Cin, H, W), dtype=np.float64)
    dw_arr = np.zeros((Cout, Cin, 1, 1), dtype=np.float64)
    db_arr = np.zeros(Cout, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t n, co, ci, i, j
    cdef double wv, acc, a0
    cdef double *dxrow
    cdef const double *dyrow
    cdef const double *xrow
    with nogil:
        for co in range(Cout):
            acc = 0.0
            for n in range(N):
                for i in range(H):
                    dyrow = &dy[n, co, i, 0]
                    a0 = 0.0
                    for j in range(W):
                        a0 += dyrow[j]
                    acc += a0
            db[co] = acc
        for n in range(N):
            for ci in range(Cin):
                for co in range(Cout):
                    wv = w[co, ci, 0, 0]
                    acc = 0.0
                    for i in range(H):
                        dxrow = &dx[n, ci, i, 0]
                        dyrow = &dy[n, co, i, 0]
                        xrow = &x[n, ci, i, 0]
                        a0 = 0.0
                        for j in range(W):
                            dxrow[j] += wv * dyrow[j]
                            a0 += dyrow[j] * xrow[j]
                        acc += a0
                    dw[co, ci, 0, 0] += acc
    return dx_arr, dw_arr, db_arr


def maxpool2x2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t H2 = H // 2, W2 = W // 2
    y_arr = np.empty((N, C, H2, W2), dtype=np.float64)
    idx_arr = np.empty((N, C, H2, W2), dtype=np.int8)
    cdef double[:, :, :, ::1] y = y_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, i, j
    cdef double v, best
    cdef signed char k
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(H2):
                    for j in range(W2):
                        # strict > keeps the first maximum in row-major window order
                        best = x[n, c, 2 * i, 2 * j]
                        k = 0
                        v = x[n, c, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[n, c, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            k = 2
                        v = x[n, c, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 3
                        y[n, c, i, j] = best
                        idx[n, c, i, j] = k
    return y_arr, idx_arr


def maxpool2x2_backward(double[:, :, :, ::1] dy, signed char[:, :, :, ::1] idx):
    cdef Py_ssize_t N = dy.shape[0], C = dy.shape[1], H2 = dy.shape[2], W2 = dy.shape[3]
    dx_arr = np.zeros((N, C, H2 * 2, W2 * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, i, j
    cdef signed char k
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(H2):
                    for j in range(W2):
                        k = idx[n, c, i, j]
                        dx[n, c, 2 * i + (k >> 1), 2 * j + (k & 1)] = dy[n, c, i, j]
    return dx_arr


def upsample2x_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    y_arr = np.empty((N, C, H * 2, W * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, c, i, j
    cdef double v
    cdef const double *xrow
    cdef double *y0
    cdef double *y1
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(H):
                    xrow = &x[n, c, i, 0]
                    y0 = &y[n, c, 2 * i, 0]
                    y1 = &y[n, c, 2 * i + 1, 0]
                    for j in range(W):
                        v = xrow[j]
                        y0[2 * j] = v
                        y0[2 * j + 1] = v
                        y1[2 * j] = v
                        y1[2 * j + 1] = v
    return y_arr


def upsample2x_backward(double[:, :, :, ::1] dy):
    cdef Py_ssize_t N = dy.shape[0], C = dy.shape[1], H2 = dy.shape[2], W2 = dy.shape[3]
    cdef Py_ssize_t H = H2 // 2, W = W2 // 2
    dx_arr = np.empty((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, i, j
    cdef const double *d0
    cdef const double *d1
    cdef double *dxrow
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(H):
                    d0 = &dy[n, c, 2 * i, 0]
                    d1 = &dy[n, c, 2 * i + 1, 0]
                    dxrow = &dx[n, c, i, 0]
                    for j in range(W):
                        dxrow[j] = (d0[2 * j] + d0[2 * j + 1]) + (d1[2 * j] + d1[2 * j + 1])
    return dx_arr

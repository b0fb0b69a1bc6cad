"""Numpy reference backend for the network kernels.

Convolutions are lowered to im2col + BLAS matmul; pooling and upsampling
use reshape tricks. All arrays are float64, batched as (N, C, H, W).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _im2col3(x):
    # (N, C, H, W) -> (N, C*9, H*W) patch matrix for a 3x3/pad-1 window
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, 3, 3, h, w), strides=(sn, sc, sh, sw, sh, sw)
    )
    return view.reshape(n, c * 9, h * w)


def conv3x3_forward(x, w, b):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    cols = _im2col3(x)
    y = np.matmul(w.reshape(cout, cin * 9), cols)  # (N, Cout, H*W)
    y += b[:, None]
    return np.ascontiguousarray(y.reshape(n, cout, h, wd))


def conv3x3_backward(x, w, dy):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    cols = _im2col3(x)
    dyf = dy.reshape(n, cout, h * wd)
    dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dyf.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(cout, cin * 9).T, dyf)  # (N, Cin*9, H*W)
    dcols = dcols.reshape(n, cin, 3, 3, h, wd)
    dxp = np.zeros((n, cin, h + 2, wd + 2), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky : ky + h, kx : kx + wd] += dcols[:, :, ky, kx]
    return np.ascontiguousarray(dxp[:, :, 1:-1, 1:-1]), dw, db


def conv1x1_forward(x, w, b):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    y = np.matmul(w.reshape(cout, cin), x.reshape(n, cin, h * wd))
    y += b[:, None]
    return np.ascontiguousarray(y.reshape(n, cout, h, wd))


def conv1x1_backward(x, w, dy):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    xf = x.reshape(n, cin, h * wd)
    dyf = dy.reshape(n, cout, h * wd)
    dw = np.matmul(dyf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dyf.sum(axis=(0, 2))
    dx = np.matmul(w.reshape(cout, cin).T, dyf)
    return np.ascontiguousarray(dx.reshape(x.shape)), dw, db


def maxpool2x2_forward(x):
    # Window order (r0,c0),(r0,c1),(r1,c0),(r1,c1): argmax ties resolve to the
    # first maximum in row-major scan order, which backward relies on.
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int8)


def maxpool2x2_backward(dy, idx):
    n, c, h2, w2 = dy.shape
    win = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(win, idx.astype(np.intp)[..., None], dy[..., None], axis=-1)
    win = win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win).reshape(n, c, h2 * 2, w2 * 2)


def upsample2x_forward(x):
    return np.ascontiguousarray(np.repeat(np.repeat(x, 2, axis=2), 2, axis=3))


def upsample2x_backward(dy):
    n, c, h, w = dy.shape
    return np.ascontiguousarray(dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)))

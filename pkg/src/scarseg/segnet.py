"""MiniSegNet: a fixed small encoder-decoder for scar probability maps.

Two input channels (image, myocardium mask), two pooling levels, nearest
upsampling with skip concatenations, sigmoid head:

    layer   kernel        activation  spatial (on 64x64 input)
    conv1   8 x2 x3x3     relu        64 -> pool -> 32
    conv2   16x8 x3x3     relu        32 -> pool -> 16
    conv3   16x16x3x3     relu        16            (bottleneck)
    conv4   8 x32x3x3     relu        32  (input: up(conv3) ++ conv2 act)
    conv5   8 x16x3x3     relu        64  (input: up(conv4) ++ conv1 act)
    conv6   1 x8 x1x1     sigmoid     64

Forward and backward are written against the kernel backend; maxpool
gradient routing follows the stored argmax (first maximum in row-major
window order), upsample backward sums each 2x2 replication footprint,
concat backward splits by channel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import FormatError
from .numcore import AdamState, PrngStream

# (name, (out_channels, in_channels, kh, kw)); canonical parameter order is
# this layer order with each kernel followed by its bias.
ARCH = (
    ("conv1", (8, 2, 3, 3)),
    ("conv2", (16, 8, 3, 3)),
    ("conv3", (16, 16, 3, 3)),
    ("conv4", (8, 32, 3, 3)),
    ("conv5", (8, 16, 3, 3)),
    ("conv6", (1, 8, 1, 1)),
)

PARAM_COUNT = int(sum(np.prod(shape) + shape[0] for _, shape in ARCH))  # 7121

CHECKPOINT_MAGIC = b"LGEP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """The 12 learnable tensors in canonical order: w1, b1, ..., w6, b6."""

    tensors: list

    @property
    def kernels(self):
        return self.tensors[0::2]

    @property
    def biases(self):
        return self.tensors[1::2]

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors])

    def copy(self) -> "ModelParams":
        return ModelParams([t.copy() for t in self.tensors])

    @classmethod
    def from_flat(cls, values: np.ndarray) -> "ModelParams":
        if values.size != PARAM_COUNT:
            raise ValueError(f"expected {PARAM_COUNT} parameter values, got {values.size}")
        tensors = []
        pos = 0
        for _, shape in ARCH:
            n = int(np.prod(shape))
            tensors.append(values[pos : pos + n].reshape(shape).astype(np.float64))
            pos += n
            tensors.append(values[pos : pos + shape[0]].astype(np.float64))
            pos += shape[0]
        return cls(tensors)


# decay only kernels, never biases (canonical order: kernel, bias, ...)
DECAY_MASK = [True, False] * len(ARCH)


def init_params(stream: PrngStream) -> ModelParams:
    """He-uniform kernels, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases."""
    tensors = []
    for _, (cout, cin, kh, kw) in ARCH:
        bound = np.sqrt(6.0 / (cin * kh * kw))
        w = stream.uniforms(cout * cin * kh * kw, -bound, bound).reshape(cout, cin, kh, kw)
        tensors.append(w)
        tensors.append(np.zeros(cout, dtype=np.float64))
    return ModelParams(tensors)


@dataclass
class ForwardTrace:
    """Activations and pool argmaxes needed by backward."""

    x: np.ndarray
    a1: np.ndarray
    p1: np.ndarray
    idx1: np.ndarray
    a2: np.ndarray
    p2: np.ndarray
    idx2: np.ndarray
    a3: np.ndarray
    c1: np.ndarray
    a4: np.ndarray
    c2: np.ndarray
    a5: np.ndarray
    yhat: np.ndarray


def _relu(z):
    return np.maximum(z, 0.0)


def forward_batch(params: ModelParams, x: np.ndarray):
    """x: (N, 2, H, W) float64, H and W multiples of 4 and >= 8."""
    n, c, h, w = x.shape
    if c != 2:
        raise ValueError(f"expected 2 input channels (image, myo mask), got {c}")
    if h % 4 or w % 4 or h < 8 or w < 8:
        raise ValueError(f"spatial size must be a multiple of 4 and >= 8, got {h}x{w}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    w1, b1, w2, b2, w3, b3, w4, b4, w5, b5, w6, b6 = params.tensors

    a1 = _relu(K.conv3x3_forward(x, w1, b1))
    p1, idx1 = K.maxpool2x2_forward(a1)
    a2 = _relu(K.conv3x3_forward(p1, w2, b2))
    p2, idx2 = K.maxpool2x2_forward(a2)
    a3 = _relu(K.conv3x3_forward(p2, w3, b3))
    c1 = np.concatenate([K.upsample2x_forward(a3), a2], axis=1)
    a4 = _relu(K.conv3x3_forward(c1, w4, b4))
    c2 = np.concatenate([K.upsample2x_forward(a4), a1], axis=1)
    a5 = _relu(K.conv3x3_forward(c2, w5, b5))
    z6 = K.conv1x1_forward(a5, w6, b6)
    yhat = 1.0 / (1.0 + np.exp(-z6))
    trace = ForwardTrace(x, a1, p1, idx1, a2, p2, idx2, a3, c1, a4, c2, a5, yhat)
    return yhat, trace


def backward_batch(params: ModelParams, trace: ForwardTrace, dyhat: np.ndarray):
    """Gradients for all tensors, canonical order. dyhat: dL/dyhat, (N,1,H,W)."""
    if dyhat.shape != trace.yhat.shape:
        raise ValueError(
            f"dL/dyhat shape {dyhat.shape} does not match forward output {trace.yhat.shape}"
        )
    w1, b1, w2, b2, w3, b3, w4, b4, w5, b5, w6, b6 = params.tensors
    yhat = trace.yhat

    dz6 = np.ascontiguousarray(dyhat * yhat * (1.0 - yhat))
    da5, dw6, db6 = K.conv1x1_backward(trace.a5, w6, dz6)
    dz5 = np.ascontiguousarray(da5 * (trace.a5 > 0.0))
    dc2, dw5, db5 = K.conv3x3_backward(trace.c2, w5, dz5)

    nup = trace.a4.shape[1]
    da4 = K.upsample2x_backward(np.ascontiguousarray(dc2[:, :nup]))
    da1_skip = dc2[:, nup:]
    dz4 = np.ascontiguousarray(da4 * (trace.a4 > 0.0))
    dc1, dw4, db4 = K.conv3x3_backward(trace.c1, w4, dz4)

    nup = trace.a3.shape[1]
    da3 = K.upsample2x_backward(np.ascontiguousarray(dc1[:, :nup]))
    da2_skip = dc1[:, nup:]
    dz3 = np.ascontiguousarray(da3 * (trace.a3 > 0.0))
    dp2, dw3, db3 = K.conv3x3_backward(trace.p2, w3, dz3)

    da2 = K.maxpool2x2_backward(dp2, trace.idx2) + da2_skip
    dz2 = np.ascontiguousarray(da2 * (trace.a2 > 0.0))
    dp1, dw2, db2 = K.conv3x3_backward(trace.p1, w2, dz2)

    da1 = K.maxpool2x2_backward(dp1, trace.idx1) + da1_skip
    dz1 = np.ascontiguousarray(da1 * (trace.a1 > 0.0))
    _, dw1, db1 = K.conv3x3_backward(trace.x, w1, dz1)

    return [dw1, db1, dw2, db2, dw3, db3, dw4, db4, dw5, db5, dw6, db6]


def forward(params: ModelParams, image: np.ndarray, myo: np.ndarray):
    """Single-slice forward. image, myo: (1, H, W) -> (yhat (1, H, W), trace)."""
    if image.shape != myo.shape:
        raise ValueError(f"image shape {image.shape} != myo mask shape {myo.shape}")
    if image.ndim != 3 or image.shape[0] != 1:
        raise ValueError(f"expected (1, H, W) input, got {image.shape}")
    x = np.stack([image[0], myo[0]])[None].astype(np.float64)
    yhat, trace = forward_batch(params, x)
    return yhat[0], trace


def backward(params: ModelParams, trace: ForwardTrace, dyhat: np.ndarray):
    """Single-slice backward matching :func:`forward`."""
    if dyhat.ndim == 3:
        dyhat = dyhat[None]
    return backward_batch(params, trace, dyhat)


def save_checkpoint(params: ModelParams, adam: AdamState | None, path) -> None:
    """Binary checkpoint, single-precision payload (see module tests for layout)."""
    flat = params.flat().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", flat.size))
        fh.write(flat.tobytes())
        if adam is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            m = np.concatenate([t.ravel() for t in adam.m]).astype("<f4")
            v = np.concatenate([t.ravel() for t in adam.v]).astype("<f4")
            fh.write(m.tobytes())
            fh.write(v.tobytes())
            fh.write(struct.pack("<Q", adam.step))


def _take(buf: bytes, offset: int, size: int, what: str):
    if offset + size > len(buf):
        raise FormatError(
            f"truncated checkpoint: need {size} bytes for {what} at offset {offset}, "
            f"file has {len(buf) - offset} left"
        )
    return buf[offset : offset + size], offset + size


def load_checkpoint(path):
    """Returns (ModelParams, AdamState-or-None). Values are float64 copies of
    the stored float32 payload."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, off = _take(buf, 0, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"offset 0: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    ver, off = _take(buf, off, 1, "version")
    if ver[0] != CHECKPOINT_VERSION:
        raise FormatError(f"offset 4: unsupported version {ver[0]}, expected {CHECKPOINT_VERSION}")
    raw, off = _take(buf, off, 4, "parameter count")
    count = struct.unpack("<I", raw)[0]
    if count != PARAM_COUNT:
        raise FormatError(
            f"offset 5: parameter count {count} does not match the architecture "
            f"constant {PARAM_COUNT}"
        )
    raw, off = _take(buf, off, 4 * count, "parameters")
    params = ModelParams.from_flat(np.frombuffer(raw, dtype="<f4"))
    raw, off = _take(buf, off, 1, "optimizer flag")
    if raw[0] == 0:
        return params, None
    if raw[0] != 1:
        raise FormatError(f"offset {off - 1}: optimizer flag must be 0 or 1, got {raw[0]}")
    raw, off = _take(buf, off, 4 * count, "first moments")
    m = ModelParams.from_flat(np.frombuffer(raw, dtype="<f4"))
    raw, off = _take(buf, off, 4 * count, "second moments")
    v = ModelParams.from_flat(np.frombuffer(raw, dtype="<f4"))
    raw, off = _take(buf, off, 8, "step counter")
    step = struct.unpack("<Q", raw)[0]
    adam = AdamState(m=m.tensors, v=v.tensors, step=step)
    return params, adam

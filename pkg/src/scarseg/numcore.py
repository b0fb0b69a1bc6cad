"""Numerical substrate shared by the rest of the package.

Value grids are plain C-contiguous float64 numpy arrays in (channels,
height, width) layout; every routine here must leave them free of NaN/Inf.
Randomness goes through :class:`PrngStream`, a splitmix64 counter stream
keyed by (seed, stream_id), so any consumer can be replayed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 increment


def _mix64(z: int) -> int:
    """splitmix64 output finalizer (bijective on 64-bit ints)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    out = z.copy()
    out ^= out >> np.uint64(30)
    out *= np.uint64(0xBF58476D1CE4E5B9)
    out ^= out >> np.uint64(27)
    out *= np.uint64(0x94D049BB133111EB)
    out ^= out >> np.uint64(31)
    return out


class PrngStream:
    """Deterministic splitmix64 stream.

    Equal (seed, stream_id) pairs replay the same sequence. Streams are
    cheap to create: use one per logical task (one per generated sample,
    one per training epoch, ...) and do not share a stream across threads.

    The state is a counter, so block fills are vectorised: the i-th output
    after the current state is mix(state + i * gamma) regardless of how the
    preceding draws were grouped.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _MASK64
        self.stream_id = stream_id & _MASK64
        self.state = _mix64(self.seed ^ _mix64((self.stream_id + _GAMMA) & _MASK64))

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix64(self.state)

    def _next_block(self, n: int) -> np.ndarray:
        """n raw 64-bit outputs, advancing the state by n steps."""
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            block = _mix64_array(np.uint64(self.state) + steps)
        self.state = (self.state + n * _GAMMA) & _MASK64
        return block

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """One double in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        u = (self._next_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def normals(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """n Box-Muller gaussians; consumes exactly 2n raw draws."""
        raw = self._next_block(2 * n)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53  # (0,1]
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53  # [0,1)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return mu + sigma * z

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi). Modulo bias is ~range/2^64, ignored."""
        if not lo < hi:
            raise ValueError(f"randint requires lo < hi, got [{lo}, {hi})")
        return lo + self.next_u64() % (hi - lo)

    def choice(self, items):
        return items[self.randint(0, len(items))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def prng_uniform(stream: PrngStream, lo: float, hi: float) -> float:
    """Functional alias for :meth:`PrngStream.uniform`."""
    return stream.uniform(lo, hi)


@dataclass
class AdamState:
    """Adam moments plus hyperparameters for one parameter list.

    ``weight_decay`` is decoupled L2 decay applied after the moment update;
    it is the knob that carries the objective's regularization weight.
    """

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, theta, **kwargs) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in theta],
            v=[np.zeros_like(p) for p in theta],
            **kwargs,
        )

    def validate_against(self, theta) -> None:
        if len(self.m) != len(theta) or len(self.v) != len(theta):
            raise ValueError("Adam moment count does not match parameter count")
        for p, m, v in zip(theta, self.m, self.v):
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError("Adam moment shapes do not mirror parameter shapes")
        if self.step < 0:
            raise ValueError("Adam step counter must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")


def adam_step(theta, grads, state: AdamState, decay_mask=None) -> None:
    """One Adam update with bias correction, in place on ``theta``.

    Decoupled weight decay ``p -= lr * wd * p`` is applied after the Adam
    update itself, and only to tensors whose ``decay_mask`` entry is true
    (all tensors when no mask is given); biases are conventionally excluded
    by the caller.
    """
    if len(grads) != len(theta):
        raise ValueError(f"got {len(grads)} gradients for {len(theta)} tensors")
    state.validate_against(theta)
    for p, g in zip(theta, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    one_m_b1 = 1.0 - state.beta1
    one_m_b2 = 1.0 - state.beta2
    for i, (p, g) in enumerate(zip(theta, grads)):
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += one_m_b1 * g
        v *= state.beta2
        v += one_m_b2 * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay != 0.0 and (decay_mask is None or decay_mask[i]):
            p -= state.lr * state.weight_decay * p
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite parameter values after Adam step {state.step}")


def percentile_nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the value at sorted index ceil(p/100 * n), 1-based.

    Always returns an element of ``values``.
    """
    n = len(values)
    if n == 0:
        raise ValueError("percentile of an empty list is undefined")
    if not 0.0 < p <= 100.0:
        raise ValueError(f"percentile p must be in (0, 100], got {p}")
    # p * n / 100 keeps integer-valued products exact (e.g. 90 * 10 / 100 == 9.0).
    k = math.ceil(p * n / 100.0)
    return sorted(values)[k - 1]

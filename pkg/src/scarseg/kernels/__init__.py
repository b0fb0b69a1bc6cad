"""Network kernels with a compiled core and a numpy fallback.

The Cython extension (``scarseg.kernels._fast``) is preferred when it was
built; otherwise the numpy/BLAS reference backend is used. Both expose the
same functions and the same float64 (N, C, H, W) conventions, but they are
not bit-identical to each other (different accumulation orders), so
reproducibility guarantees hold per backend.

Set SCARSEG_KERNELS=numpy|cython to force a backend (cython raises if the
extension is unavailable). ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _ref


def _select():
    choice = os.environ.get("SCARSEG_KERNELS", "auto").lower()
    if choice == "numpy":
        return _ref
    try:
        from . import _fast
    except ImportError:
        if choice == "cython":
            raise ImportError(
                "SCARSEG_KERNELS=cython but the compiled extension is not built; "
                "run `pip install -e . --no-build-isolation` or "
                "`python setup.py build_ext --inplace`"
            )
        return _ref
    if choice not in ("auto", "cython"):
        raise ValueError(f"unknown SCARSEG_KERNELS value: {choice!r}")
    return _fast


_impl = _select()

BACKEND = _impl.BACKEND
conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
conv1x1_forward = _impl.conv1x1_forward
conv1x1_backward = _impl.conv1x1_backward
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
upsample2x_forward = _impl.upsample2x_forward
upsample2x_backward = _impl.upsample2x_backward

__all__ = [
    "BACKEND",
    "conv3x3_forward",
    "conv3x3_backward",
    "conv1x1_forward",
    "conv1x1_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "upsample2x_forward",
    "upsample2x_backward",
]

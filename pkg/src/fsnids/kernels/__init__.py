"""Kernel dispatch: compiled Cython lane when available, numpy lane otherwise.

``FSNIDS_PURE=1`` in the environment forces the numpy lane. The active lane
is reported in ``BACKEND`` ("compiled" or "reference").
"""
import os

from . import reference

if os.environ.get("FSNIDS_PURE"):
    _impl = reference
    BACKEND = "reference"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = reference
        BACKEND = "reference"

layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward
masked_softmax_forward = _impl.masked_softmax_forward
masked_softmax_backward = _impl.masked_softmax_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
softmax_xent_forward = _impl.softmax_xent_forward
softmax_xent_backward = _impl.softmax_xent_backward

__all__ = [
    "BACKEND",
    "reference",
    "layer_norm_forward",
    "layer_norm_backward",
    "masked_softmax_forward",
    "masked_softmax_backward",
    "gelu_forward",
    "gelu_backward",
    "softmax_xent_forward",
    "softmax_xent_backward",
]

"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise (or when
``PHASESWAP_PURE_PYTHON=1``) the numpy implementation is used. Both expose
``conv1d_forward(x, weight, bias)`` and
``conv1d_backward(grad_out, xcol, weight, need_input_grad)``.
"""

import os

from . import _conv_py

BACKEND = "python"
_impl = _conv_py

if os.environ.get("PHASESWAP_PURE_PYTHON") != "1":
    try:
        from . import _conv_ext
    except ImportError:
        pass
    else:
        _impl = _conv_ext
        BACKEND = "cython"


def conv1d_forward(x, weight, bias):
    return _impl.conv1d_forward(x, weight, bias)


def conv1d_backward(grad_out, xcol, weight, need_input_grad=True):
    return _impl.conv1d_backward(grad_out, xcol, weight, need_input_grad)

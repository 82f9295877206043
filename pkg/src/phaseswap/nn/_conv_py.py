"""Pure-numpy conv1d kernels ("same" zero padding, stride 1).

Both the forward and backward passes use a shifted-GEMM layout: the padded
input is stored as a ``(C_in, B * Lp)`` matrix so that tap ``j`` of the
kernel is a single matrix product against the column window starting at
``j``. Output columns that straddle two batch items are computed and
discarded.
"""

import numpy as np


def _pads(k):
    left = (k - 1) // 2
    return left, k - 1 - left


def pack(x, k):
    """``(B, C, L)`` -> zero-padded ``(C, B * (L + k - 1))``."""
    b, c, length = x.shape
    left, right = _pads(k)
    lp = length + left + right
    buf = np.zeros((c, b, lp))
    buf[:, :, left:left + length] = x.transpose(1, 0, 2)
    return buf.reshape(c, b * lp)


def conv1d_forward(x, weight, bias):
    """Returns ``(out, xcol)``; ``xcol`` is kept for the backward pass."""
    b, _, length = x.shape
    c_out, _, k = weight.shape
    xcol = pack(x, k)
    lp = length + k - 1
    n = b * lp - (k - 1)
    taps = np.ascontiguousarray(weight.transpose(2, 0, 1))
    out = np.zeros((c_out, b * lp))
    for j in range(k):
        out[:, :n] += taps[j] @ xcol[:, j:j + n]
    out = out.reshape(c_out, b, lp)[:, :, :length].transpose(1, 0, 2)
    out = out + bias[None, :, None]
    return np.ascontiguousarray(out), xcol


def conv1d_backward(grad_out, xcol, weight, need_input_grad=True):
    """Returns ``(grad_x or None, grad_weight, grad_bias)``."""
    b, c_out, length = grad_out.shape
    _, c_in, k = weight.shape
    left, _ = _pads(k)
    lp = length + k - 1
    n = b * lp - (k - 1)

    g = np.zeros((c_out, b, lp))
    g[:, :, :length] = grad_out.transpose(1, 0, 2)
    g = g.reshape(c_out, b * lp)

    taps_t = np.ascontiguousarray(weight.transpose(2, 1, 0))
    grad_bias = grad_out.sum(axis=(0, 2))
    grad_weight = np.empty_like(weight)
    grad_x = None
    dxcol = np.zeros((c_in, b * lp)) if need_input_grad else None
    for j in range(k):
        grad_weight[:, :, j] = g[:, :n] @ xcol[:, j:j + n].T
        if need_input_grad:
            dxcol[:, j:j + n] += taps_t[j] @ g[:, :n]
    if need_input_grad:
        grad_x = dxcol.reshape(c_in, b, lp)[:, :, left:left + length].transpose(1, 0, 2)
        grad_x = np.ascontiguousarray(grad_x)
    return grad_x, grad_weight, grad_bias

"""Differentiable operations used by the encoder and the classifier heads."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import kernels
from .tensor import Tensor, as_tensor

POOL_STRIDE = 128
PROB_FLOOR = 1e-12


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding.

    ``x`` is ``(B, C_in, L)``, ``weight`` is ``(C_out, C_in, k)``. Even
    kernels pad one more sample on the right than on the left.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if x.shape[2] < 1:
        raise ShapeError("conv1d input must have length >= 1")
    out, xcol = kernels.conv1d_forward(
        np.ascontiguousarray(x.data), weight.data, bias.data
    )

    def backward(g):
        gx, gw, gb = kernels.conv1d_backward(g, xcol, weight.data, x.requires_grad)
        if gx is not None:
            x._accumulate(gx)
        weight._accumulate(gw)
        bias._accumulate(gb)

    return Tensor._from_op(out, (x, weight, bias), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over the batch and length axes.

    In training mode the running statistics are updated in place
    (``running = (1 - momentum) * running + momentum * batch``, with the
    unbiased batch variance).
    """
    if x.ndim != 3:
        raise ShapeError(f"batch_norm expects (B, C, L), got {x.shape}")
    b, c, length = x.shape
    shape = (1, c, 1)
    if training:
        if b < 2:
            raise ShapeError("batch_norm in training mode needs a batch of at least 2")
        n = b * length
        mean = x.data.mean(axis=(0, 2))
        centered = x.data - mean.reshape(shape)
        var = np.mean(centered * centered, axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std.reshape(shape)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

        def backward(g):
            gamma._accumulate(np.sum(g * xhat, axis=(0, 2)))
            beta._accumulate(np.sum(g, axis=(0, 2)))
            if x.requires_grad:
                gxhat = g * gamma.data.reshape(shape)
                s1 = gxhat.sum(axis=(0, 2)).reshape(shape)
                s2 = np.sum(gxhat * xhat, axis=(0, 2)).reshape(shape)
                x._accumulate((inv_std.reshape(shape) / n) * (n * gxhat - s1 - xhat * s2))

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(shape)) * inv_std.reshape(shape)
        out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

        def backward(g):
            gamma._accumulate(np.sum(g * xhat, axis=(0, 2)))
            beta._accumulate(np.sum(g, axis=(0, 2)))
            x._accumulate(g * (gamma.data * inv_std).reshape(shape))

    return Tensor._from_op(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def avg_pool(x: Tensor, size: int = POOL_STRIDE) -> Tensor:
    """Non-overlapping mean over blocks of ``size``; a trailing partial block is dropped."""
    if x.ndim != 3:
        raise ShapeError(f"avg_pool expects (B, H, L), got {x.shape}")
    b, h, length = x.shape
    if length < size:
        raise ShapeError(f"avg_pool needs length >= {size}, got {length}")
    blocks = length // size
    used = blocks * size
    out = x.data[:, :, :used].reshape(b, h, blocks, size).mean(axis=3)

    def backward(g):
        grad = np.zeros_like(x.data)
        grad[:, :, :used] = np.repeat(g / size, size, axis=2)
        x._accumulate(grad)

    return Tensor._from_op(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as ``(out, in)``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        x._accumulate(g @ weight.data)
        weight._accumulate(g.T @ x.data)
        bias._accumulate(g.sum(axis=0))

    return Tensor._from_op(out, (x, weight, bias), backward)


def softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        logits._accumulate(p * (g - np.sum(g * p, axis=1, keepdims=True)))

    return Tensor._from_op(p, (logits,), backward)


def cross_entropy(probs: Tensor, onehot) -> Tensor:
    """Mean negative log-likelihood of the true class.

    ``probs`` rows are class probabilities; log arguments are clamped at
    ``PROB_FLOOR``.
    """
    onehot = as_tensor(onehot).data
    if probs.shape != onehot.shape:
        raise ShapeError(f"probs {probs.shape} and targets {onehot.shape} differ in shape")
    n = probs.shape[0]
    clamped = np.maximum(probs.data, PROB_FLOOR)
    loss = -np.sum(onehot * np.log(clamped)) / n

    def backward(g):
        grad = -onehot / clamped / n
        grad[probs.data < PROB_FLOOR] = 0.0
        probs._accumulate(g * grad)

    return Tensor._from_op(np.asarray(loss), (probs,), backward)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out

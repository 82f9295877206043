"""Modules: the FCN encoder and the softmax classifier heads."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ShapeError
from . import functional as F
from .tensor import Parameter, Tensor, as_tensor


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal module tree with named parameters and buffers."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state) -> None:
        expected = set(name for name, _ in self.named_parameters()) | set(
            name for name, _ in self.named_buffers()
        )
        missing = expected - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, p in self.named_parameters():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
            p.data = value.copy()
        for name, b in self.named_buffers():
            b[...] = state[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        fan_in = in_channels * kernel_size
        self.weight = Parameter(he_uniform(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(he_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class ConvBlock(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng):
        super().__init__()
        self.conv = Conv1d(in_channels, out_channels, kernel_size, rng)
        self.bn = BatchNorm1d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x)).relu()


class FcnEncoder(Module):
    """Three conv/batch-norm/ReLU blocks followed by stride-128 average pooling.

    Maps ``(B, C, W)`` to ``(B, H, W // 128)``. The parameter count does not
    depend on ``W``.
    """

    WIDTHS = (128, 256, 128)
    KERNELS = (8, 5, 3)

    def __init__(
        self,
        in_channels: int,
        rng: np.random.Generator,
        widths: tuple = WIDTHS,
        kernels: tuple = KERNELS,
        pool: int = F.POOL_STRIDE,
    ):
        super().__init__()
        if len(widths) != 3 or len(kernels) != 3:
            raise ValueError("the encoder has exactly three blocks")
        self.in_channels = in_channels
        self.pool = pool
        self.block1 = ConvBlock(in_channels, widths[0], kernels[0], rng)
        self.block2 = ConvBlock(widths[0], widths[1], kernels[1], rng)
        self.block3 = ConvBlock(widths[1], widths[2], kernels[2], rng)

    @property
    def out_channels(self) -> int:
        return self.block3.conv.weight.shape[0]

    def output_length(self, window: int) -> int:
        return window // self.pool

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        return F.avg_pool(self.block3(self.block2(self.block1(x))), self.pool)


class SoftmaxHead(Module):
    """Dense layer over the flattened encoder output, then softmax."""

    def __init__(self, in_features: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.n_classes = n_classes
        self.dense = Linear(in_features, n_classes, rng)

    def forward(self, features: Tensor) -> Tensor:
        return F.softmax(self.dense(features.flatten()))


class RpHead(Module):
    """Two-class head on the element-wise absolute feature difference."""

    def __init__(self, in_features: int, rng: np.random.Generator):
        super().__init__()
        self.head = SoftmaxHead(in_features, 2, rng)

    @staticmethod
    def head_input(h1: Tensor, h2: Tensor) -> Tensor:
        if h1.shape != h2.shape:
            raise ShapeError(f"feature shapes differ: {h1.shape} vs {h2.shape}")
        return (h1 - h2).abs()

    def forward(self, h1: Tensor, h2: Tensor) -> Tensor:
        return self.head(self.head_input(h1, h2))


class Classifier(Module):
    """``head(encoder(x))``."""

    def __init__(self, encoder: FcnEncoder, head: SoftmaxHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, x) -> Tensor:
        return self.head(self.encoder(x))

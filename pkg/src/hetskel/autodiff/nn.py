"""Parameter containers and the layers the models are built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import DegenerateBatchError, ShapeError
from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf. The optimizer swaps ``data`` for a fresh array each step."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Minimal module tree: parameters, buffers and train/eval mode.

    Parameters are discovered from instance attributes, including modules held
    in lists or dicts, so that names are stable across runs (``a.b.0.weight``).
    Buffers are plain numpy arrays listed by name in ``_buffers``.
    """

    training: bool = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{k}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = prefix + key
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in getattr(self, "_buffers", {}).items():
            yield prefix + key, value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + key + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            state[name] = buf.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = {name: None for name, _ in self.named_buffers()}
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} vs model {p.shape}")
            p.data = np.array(state[name], dtype=T.DTYPE)
        for m_name, module in self._named_modules():
            for key in module._buffers:
                full = f"{m_name}{key}"
                module._buffers[key] = np.array(state[full], dtype=T.DTYPE)

    def _named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(prefix + key + ".")


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(_uniform(rng, bound, (n_in, n_out)))
        self.bias = Parameter(_uniform(rng, bound, (n_out,))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm1d(Module):
    """Batch normalization over rows of an ``N x F`` input."""

    def __init__(self, features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.weight = Parameter(np.ones(features))
        self.bias = Parameter(np.zeros(features))
        self.eps = eps
        self.momentum = momentum
        self._buffers["running_mean"] = np.zeros(features)
        self._buffers["running_var"] = np.ones(features)

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm_1d(x, self, "train" if self.training else "eval")


def batch_norm_1d(x: Tensor, bn: BatchNorm1d, mode: str = "train") -> Tensor:
    """Normalize columns of ``x``; in train mode also update ``bn``'s running stats.

    Train mode uses the biased batch variance (divisor N) with ``eps`` inside
    the square root. The running variance is updated with the unbiased
    estimate, as is conventional.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm_1d expects N x F input, got {x.shape}")
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise DegenerateBatchError(f"batch_norm_1d in train mode needs N >= 2, got N={n}")
        mu = x.mean(axis=0, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=0, keepdims=True)
        out = xc / T.sqrt(var + bn.eps)
        m = bn.momentum
        buf = bn._buffers
        buf["running_mean"] = (1 - m) * buf["running_mean"] + m * mu.data[0]
        buf["running_var"] = (1 - m) * buf["running_var"] + m * var.data[0] * n / (n - 1)
    elif mode == "eval":
        buf = bn._buffers
        out = (x - buf["running_mean"]) * (1.0 / np.sqrt(buf["running_var"] + bn.eps))
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    return out * bn.weight + bn.bias


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Single-head scaled dot-product attention over the second-to-last axis."""
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"attention expects equal shapes, got {q.shape}, {k.shape}, {v.shape}")
    return T.scaled_dot_attention(q, k, v)


class SelfAttention(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dim = dim

    def forward(self, x: Tensor) -> Tensor:
        return self.out(T.scaled_dot_attention(self.query(x), self.key(x), self.value(x)))


class MLP(Module):
    """Stack of linear layers with an activation between them (not after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator, activation: str = "relu", slope: float = 0.01):
        super().__init__()
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.activation = activation
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self._activate(x)
        return x

    def _activate(self, x: Tensor) -> Tensor:
        if self.activation == "leaky_relu":
            return T.leaky_relu(x, self.slope)
        if self.activation == "gelu":
            return T.gelu(x)
        return T.relu(x)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp)
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()

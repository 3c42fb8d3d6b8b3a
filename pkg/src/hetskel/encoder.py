"""Stream embedders, early fusion, the shared spatio-temporal encoder and projectors."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autodiff import MLP, BatchNorm1d, LayerNorm, Linear, Module, Parameter, SelfAttention, Tensor
from .autodiff import tensor as T
from .errors import ShapeError
from .topology import N_SLOTS, UnifiedSkeleton

STREAMS = ("J", "C", "S")


@dataclass
class EncoderConfig:
    d_model: int = 32
    hidden: int = 64
    spatial_layers: int = 1
    temporal_layers: int = 1
    feature_dim: int = 64
    projector_hidden: int = 64
    projector_dim: int = 64
    max_frames: int = 64
    projector_norm: bool = True

    def __post_init__(self):
        for f in fields(self):
            if f.name == "projector_norm":
                continue
            value = getattr(self, f.name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"encoder {f.name} must be a positive integer, got {value!r}")

    @classmethod
    def desk(cls) -> "EncoderConfig":
        return cls()

    @classmethod
    def full_size(cls) -> "EncoderConfig":
        """Wide preset with the 1024-unit transformer hidden layers."""
        return cls(d_model=256, hidden=1024, feature_dim=512, projector_hidden=1024, projector_dim=512)


class StreamEmbedding(Module):
    """Per-stream joint embedding plus slot and frame offsets shared by all streams."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.joint = {s: Linear(3, cfg.d_model, rng) for s in STREAMS}
        self.slot_pos = Parameter(rng.normal(0.0, 0.02, (N_SLOTS, cfg.d_model)))
        self.frame_pos = Parameter(rng.normal(0.0, 0.02, (cfg.max_frames, cfg.d_model)))

    def forward(self, u: UnifiedSkeleton | Tensor, stream: str) -> Tensor:
        if stream not in self.joint:
            raise ValueError(f"unknown stream {stream!r}; expected one of {STREAMS}")
        x = u.data if isinstance(u, UnifiedSkeleton) else u
        if x.shape[-2:] != (N_SLOTS, 3):
            raise ShapeError(f"embedding expects (..., t, 30, 3) input, got {x.shape}")
        t = x.shape[-3]
        if t > self.frame_pos.shape[0]:
            raise ShapeError(f"{t} frames exceed the {self.frame_pos.shape[0]} frame positions")
        h = self.joint[stream](x)
        frame = self.frame_pos[:t].reshape(t, 1, self.frame_pos.shape[1])
        return h + self.slot_pos + frame


def embed_stream(u: UnifiedSkeleton, stream: str, embedding: StreamEmbedding) -> Tensor:
    return embedding(u, stream)


def early_fusion(embeddings: list[Tensor], fusion: Linear) -> Tensor:
    """Average the stream embeddings, then apply one learnable linear map."""
    if not embeddings:
        raise ValueError("early fusion needs at least one embedding")
    shape = embeddings[0].shape
    for h in embeddings[1:]:
        if h.shape != shape:
            raise ShapeError(f"fusion inputs differ in shape: {shape} vs {h.shape}")
    total = embeddings[0]
    for h in embeddings[1:]:
        total = total + h
    return fusion(total * (1.0 / len(embeddings)))


class TransformerBlock(Module):
    """Pre-norm single-head block: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``.

    The feed-forward layer uses GELU, which keeps the encoder smooth.
    """

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = SelfAttention(dim, rng)
        self.ln2 = LayerNorm(dim)
        self.ffn = MLP([dim, hidden, dim], rng, "gelu")

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ffn(self.ln2(x))


class UnifiedEncoder(Module):
    """Spatial attention over slots, temporal attention over frames, mean pooling, linear head."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.d_model
        self.spatial = [TransformerBlock(d, cfg.hidden, rng) for _ in range(cfg.spatial_layers)]
        self.temporal = [TransformerBlock(d, cfg.hidden, rng) for _ in range(cfg.temporal_layers)]
        self.norm = LayerNorm(d)
        self.head = Linear(d, cfg.feature_dim, rng)

    def forward(self, h: Tensor) -> Tensor:
        """``h``: ``(N, m, t, 30, d)`` -> ``(N, D)``."""
        if h.ndim != 5:
            raise ShapeError(f"encoder expects (N, m, t, slots, d) input, got {h.shape}")
        n, m, t, s, d = h.shape
        x = h.reshape(n * m * t, s, d)
        for block in self.spatial:
            x = block(x)
        x = x.reshape(n, m, t, s, d).transpose(0, 1, 3, 2, 4).reshape(n * m * s, t, d)
        for block in self.temporal:
            x = block(x)
        x = self.norm(x)
        pooled = x.reshape(n, m * s * t, d).mean(axis=1)
        return self.head(pooled)


def encode(h: Tensor, encoder: UnifiedEncoder) -> Tensor:
    return encoder(h)


class Projector(Module):
    """Two-layer MLP into a stream-specific space, optionally batch-normalized between the layers."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator, batch_norm: bool = False):
        super().__init__()
        self.fc1 = Linear(n_in, hidden, rng)
        self.norm = BatchNorm1d(hidden) if batch_norm else None
        self.fc2 = Linear(hidden, n_out, rng)

    def forward(self, y: Tensor) -> Tensor:
        h = self.fc1(y)
        if self.norm is not None:
            h = self.norm(h)
        return self.fc2(T.relu(h))

    def set_identity(self) -> None:
        """Make the projector compute ``y`` exactly, using ``relu(y) - relu(-y) = y``."""
        if self.norm is not None:
            raise ShapeError("identity projector needs batch_norm=False; batch-norm rescales the hidden layer")
        n_in, hidden = self.fc1.weight.shape
        n_out = self.fc2.weight.shape[1]
        if n_out != n_in or hidden < 2 * n_in:
            raise ShapeError("identity projector needs n_out == n_in and hidden >= 2 * n_in")
        eye = np.eye(n_in)
        w1 = np.zeros((n_in, hidden))
        w1[:, :n_in] = eye
        w1[:, n_in : 2 * n_in] = -eye
        w2 = np.zeros((hidden, n_out))
        w2[:n_in] = eye
        w2[n_in : 2 * n_in] = -eye
        self.fc1.weight.data, self.fc1.bias.data = w1, np.zeros(hidden)
        self.fc2.weight.data, self.fc2.bias.data = w2, np.zeros(n_out)


def project(y: Tensor, stream: str, projectors: dict[str, Projector]) -> Tensor:
    if stream not in projectors:
        raise ValueError(f"no projector for stream {stream!r}")
    return projectors[stream](y)

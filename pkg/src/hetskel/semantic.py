"""Semantic motion encoding.

Each coordinate change of a 3D joint is replaced by a scalar that stands for
a direction word: right/left along x, up/down along y, front/back along z,
and unmove when the coordinate does not change. The scalars come from
word-embedding vectors squeezed to one dimension by a trainable reducer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Linear, Module, Tensor, take
from .errors import EmbeddingParseError, ShapeError, TopologyError, VocabularyError
from .topology import (
    J25,
    PartialSlots,
    PromptSet,
    SkeletonSequence,
    UnifiedSkeleton,
    build_prompted_unified,
    to_unified_slots,
)

WORDS: tuple[str, ...] = ("right", "left", "up", "down", "front", "back", "unmove")
RIGHT, LEFT, UP, DOWN, FRONT, BACK, UNMOVE = range(7)

# (positive code, negative code) per axis
AXIS_CODES = np.array([[RIGHT, LEFT], [UP, DOWN], [FRONT, BACK]], dtype=np.intp)

QUANTUM = 1e-6  # metres; coordinate changes below this count as no motion
FALLBACK_DIM = 512


@dataclass
class SemanticEmbeddingTable:
    words: tuple[str, ...]
    vectors: np.ndarray
    source: str

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def fallback_embeddings(seed: int = 0, dim: int = FALLBACK_DIM) -> SemanticEmbeddingTable:
    """Seeded unit-norm random vectors standing in for a text encoder."""
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((len(WORDS), dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return SemanticEmbeddingTable(WORDS, vectors, "deterministic-fallback")


def load_embeddings(path: str | Path | None = None, seed: int = 0) -> SemanticEmbeddingTable:
    """Read ``{"dim": l, "words": [...], "vectors": [[...], ...]}``, or fall back to seeded vectors."""
    if path is None:
        return fallback_embeddings(seed)
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EmbeddingParseError(f"{path}: {exc.msg} at line {exc.lineno}, column {exc.colno}") from exc
    if not isinstance(doc, dict) or not {"dim", "words", "vectors"} <= set(doc):
        raise EmbeddingParseError(f"{path}: expected an object with keys dim, words, vectors")
    words, vectors, dim = doc["words"], doc["vectors"], doc["dim"]
    if not isinstance(words, list) or tuple(words) != WORDS:
        raise VocabularyError(f"{path}: words must be exactly {list(WORDS)}, got {words}")
    if not isinstance(vectors, list) or len(vectors) != len(WORDS):
        n = len(vectors) if isinstance(vectors, list) else "no"
        raise VocabularyError(f"{path}: expected {len(WORDS)} vectors, got {n}")
    if not isinstance(dim, int) or dim < 1:
        raise EmbeddingParseError(f"{path}: dim must be a positive integer, got {dim!r}")
    rows = []
    for r, row in enumerate(vectors):
        if not isinstance(row, list) or len(row) != dim:
            length = len(row) if isinstance(row, list) else "non-list"
            raise EmbeddingParseError(f"{path}: row {r} has {length} entries, expected {dim}")
        for c, value in enumerate(row):
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not np.isfinite(value):
                raise EmbeddingParseError(f"{path}: row {r}, column {c} is not a finite number: {value!r}")
        rows.append(row)
    return SemanticEmbeddingTable(WORDS, np.array(rows, dtype=np.float64), "file")


def save_embeddings(table: SemanticEmbeddingTable, path: str | Path) -> None:
    doc = {"dim": table.dim, "words": list(table.words), "vectors": table.vectors.tolist()}
    Path(path).write_text(json.dumps(doc))


class FeatureReducer(Module):
    """Trainable linear map from embedding width to one scalar per word."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(dim, 1, rng)

    def forward(self, vectors: Tensor) -> Tensor:
        return self.proj(vectors).reshape(vectors.shape[0])


def reduce(table: SemanticEmbeddingTable, reducer: FeatureReducer) -> Tensor:
    width = reducer.proj.weight.shape[0]
    if width != table.dim:
        raise ShapeError(f"reducer expects width {width}, embeddings have {table.dim}")
    return reducer(Tensor(table.vectors))


@dataclass
class SemanticMotionSequence:
    """Encoded motion shaped like the source J25 data, plus the word index behind each entry."""

    values: Tensor
    codes: np.ndarray


def motion_codes(x: np.ndarray) -> np.ndarray:
    """Word index for every entry of ``(..., t, joints, 3)`` data; frame 0 is unmove."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-3] < 2:
        raise ShapeError(f"semantic motion needs at least 2 frames, got {x.shape[-3]}")
    q = np.round(x / QUANTUM).astype(np.int64)
    delta = np.diff(q, axis=-3)
    codes = np.full(x.shape, UNMOVE, dtype=np.intp)
    pos = np.broadcast_to(AXIS_CODES[:, 0], delta.shape)
    neg = np.broadcast_to(AXIS_CODES[:, 1], delta.shape)
    codes[..., 1:, :, :] = np.where(delta > 0, pos, np.where(delta < 0, neg, UNMOVE))
    return codes


def encode_motion(seq: SkeletonSequence, reduced: Tensor) -> SemanticMotionSequence:
    if seq.topology.id != "J25" or seq.data.shape[-1] != 3:
        raise TopologyError(f"semantic motion is built from 3D J25 data, got {seq.topology.id}")
    codes = motion_codes(seq.array)
    return SemanticMotionSequence(take(reduced, codes), codes)


def prompt_semantic(s_motion: SemanticMotionSequence, prompts: PromptSet) -> UnifiedSkeleton:
    """Place the encoding into slots 6-30 and fill the facial slots from the S prompt."""
    partial: PartialSlots = to_unified_slots(SkeletonSequence(J25, s_motion.values))
    return build_prompted_unified(partial, prompts, "S")

"""Pretraining loop, dataset plumbing and the checkpoint container.

Checkpoint layout (little-endian)::

    offset  size  field
    0       4     magic b"HSKC"
    4       2     version (uint16, currently 1)
    6       4     header length H (uint32)
    10      H     UTF-8 JSON: {"config": <resolved INI text>, "history": [...],
                               "tensors": [{"name", "shape", "offset"}, ...]}
    10+H    ...   float64 tensor data, in header order; "offset" counts from here

The semantic embedding table is stored as the tensor ``_table.vectors``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam
from .config import RunConfig, config_from_text
from .errors import FormatError, NonFiniteError
from .hskl import SkeletonDataset, read_dataset, write_dataset
from .model import HeteroSkeletonModel, compute_losses
from .semantic import WORDS, SemanticEmbeddingTable, load_embeddings
from .synthetic import PairedDataset, augment, draw_augmentation, make_splits

LOSS_KEYS = ("L", "L_con", "L_reg", "L_rec")
CKPT_MAGIC = b"HSKC"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sHI")


# datasets


def split_paths(directory: str | Path, split: str) -> tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{split}_J25.hskl", directory / f"{split}_C17.hskl"


def save_paired(directory: str | Path, split: str, ds: PairedDataset) -> tuple[Path, Path]:
    Path(directory).mkdir(parents=True, exist_ok=True)
    p3, p2 = split_paths(directory, split)
    write_dataset(p3, SkeletonDataset("J25", ds.joints3d, ds.labels))
    write_dataset(p2, SkeletonDataset("C17", ds.joints2d, ds.labels))
    return p3, p2


def load_paired(directory: str | Path, split: str) -> PairedDataset:
    p3, p2 = split_paths(directory, split)
    for p in (p3, p2):
        if not p.is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    d3, d2 = read_dataset(p3), read_dataset(p2)
    if d3.topology != "J25" or d2.topology != "C17":
        raise FormatError(f"{directory}: expected J25 and C17 files, got {d3.topology} and {d2.topology}")
    if d3.data.shape[:3] != d2.data.shape[:3] or not np.array_equal(d3.labels, d2.labels):
        raise FormatError(f"{directory}: {split} streams are not paired (shapes or labels differ)")
    return PairedDataset(d3.data, d2.data, d3.labels)


def datasets(cfg: RunConfig) -> tuple[PairedDataset, PairedDataset]:
    """Train and test splits: read from ``data.dataset_dir`` or generated in memory."""
    if cfg.data.dataset_dir:
        return load_paired(cfg.data.dataset_dir, "train"), load_paired(cfg.data.dataset_dir, "test")
    return make_splits(cfg.data.generator())


# model construction


def embedding_table(cfg: RunConfig) -> SemanticEmbeddingTable:
    return load_embeddings(cfg.model.embeddings or None, seed=cfg.train.seed)


def build_model(cfg: RunConfig, table: SemanticEmbeddingTable | None = None) -> HeteroSkeletonModel:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.train.seed).spawn(2)[0])
    return HeteroSkeletonModel(
        rng,
        cfg.model.encoder(),
        lift_hidden=cfg.model.lift_hidden,
        embeddings=table if table is not None else embedding_table(cfg),
        leaky_slope=cfg.model.leaky_slope,
    )


# training


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches; a trailing batch smaller than 2 is merged into the previous one."""
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def augmented_batch(ds: PairedDataset, idx: np.ndarray, cfg: RunConfig, rng: np.random.Generator):
    """Augment each sample of the batch with one parameter draw shared by its streams."""
    frames = ds.joints3d.shape[-3]
    j3, j2 = [], []
    for i in idx:
        p = draw_augmentation(rng, (cfg.train.crop_min, 1.0), cfg.train.max_angle, cfg.train.aug_noise)
        a3, a2 = augment(ds.joints3d[i], ds.joints2d[i], p, frames)
        j3.append(a3)
        j2.append(a2)
    return np.stack(j3), np.stack(j2)


@dataclass
class Checkpoint:
    model: HeteroSkeletonModel
    config: RunConfig
    history: list[dict[str, float]] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self)


def pretrain(
    cfg: RunConfig,
    train: PairedDataset | None = None,
    model: HeteroSkeletonModel | None = None,
    on_epoch=None,
) -> Checkpoint:
    """Optimize the full objective with Adam; returns the model with its per-epoch loss means.

    ``on_epoch(epoch, record, model)`` is called after every epoch if given.
    """
    if train is None:
        train, _ = datasets(cfg)
    if len(train) < 2:
        raise ValueError("pretraining needs at least 2 samples")
    model = model if model is not None else build_model(cfg)
    model.train()
    streams = cfg.streams
    opt = Adam(model.named_parameters(), lr=cfg.train.lr)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.train.seed).spawn(2)[1])
    history: list[dict[str, float]] = []
    for epoch in range(cfg.train.epochs):
        sums = dict.fromkeys(LOSS_KEYS, 0.0)
        count = 0
        for b, idx in enumerate(batches(len(train), cfg.train.batch_size, rng)):
            j3, j2 = augmented_batch(train, idx, cfg, rng)
            try:
                losses = compute_losses(model(j3, j2, streams), cfg.loss)
                losses["L"].backward()
                opt.step()
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from exc
            for k in LOSS_KEYS:
                sums[k] += losses[k].item()
            count += 1
        record = {k: v / count for k, v in sums.items()}
        history.append(record)
        if on_epoch is not None:
            on_epoch(epoch, record, model)
    return Checkpoint(model, cfg, history)


def write_history_csv(path: str | Path, history: list[dict[str, float]]) -> None:
    lines = ["epoch," + ",".join(LOSS_KEYS)]
    for e, rec in enumerate(history, start=1):
        lines.append(f"{e}," + ",".join(repr(rec[k]) for k in LOSS_KEYS))
    Path(path).write_text("\n".join(lines) + "\n")


# checkpoint container


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    state = ckpt.model.state_dict()
    state["_table.vectors"] = ckpt.model.table.vectors
    tensors, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config": ckpt.config.to_text(), "history": ckpt.history, "tensors": tensors}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {CKPT_MAGIC!r}", offset=0)
    if len(raw) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: header truncated", offset=len(raw))
    _, version, hlen = _CKPT_HEAD.unpack_from(raw)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    start = _CKPT_HEAD.size + hlen
    if len(raw) < start:
        raise FormatError(f"{path}: JSON header truncated", offset=len(raw))
    try:
        header = json.loads(raw[_CKPT_HEAD.size : start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}", offset=_CKPT_HEAD.size) from None
    state = {}
    for t in header["tensors"]:
        count = math.prod(t["shape"])
        lo = start + t["offset"]
        if lo + 8 * count > len(raw):
            raise FormatError(f"{path}: tensor {t['name']} runs past end of file", offset=len(raw))
        state[t["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=lo).reshape(t["shape"]).copy()
    cfg = config_from_text(header["config"], source=str(path))
    table = SemanticEmbeddingTable(WORDS, state.pop("_table.vectors"), "checkpoint")
    model = build_model(cfg, table)
    model.load_state_dict(state)
    return Checkpoint(model, cfg, header["history"])

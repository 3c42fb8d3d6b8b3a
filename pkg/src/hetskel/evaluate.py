"""Downstream protocols: linear probe, cosine retrieval and semi-supervised fine-tuning."""

from __future__ import annotations

import copy
import math

import numpy as np

from .autodiff import Adam, Linear, Module, Tensor, cross_entropy, no_grad
from .model import HeteroSkeletonModel
from .synthetic import PairedDataset, augment, draw_augmentation
from .topology import common_joint_pairs


def probe_feature(streams, feature: str = "auto") -> str:
    """``auto`` picks the fused feature, or the only stream when a single one was trained."""
    if feature != "auto":
        return feature
    streams = tuple(streams)
    return streams[0] if len(streams) == 1 else "F"


def extract_features(
    model: HeteroSkeletonModel, ds: PairedDataset, streams, feature: str = "F", batch_size: int = 64
) -> np.ndarray:
    """Frozen encoder features ``y`` for every sample, in eval mode and without a graph."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for lo in range(0, len(ds), batch_size):
                j3 = ds.joints3d[lo : lo + batch_size]
                j2 = ds.joints2d[lo : lo + batch_size]
                out.append(model(j3, j2, streams, heads=False).y[feature].data.copy())
    finally:
        model.train(was_training)
    return np.concatenate(out, axis=0)


def _check_labels(train_labels: np.ndarray, test_labels: np.ndarray) -> int:
    classes = np.unique(train_labels)
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    missing = sorted(set(range(n_classes)) - set(classes.tolist()))
    if missing:
        raise ValueError(f"classes {missing} are absent from the training split")
    return n_classes


def train_linear_classifier(
    x: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    epochs: int = 100,
    lr: float = 1e-2,
    batch_size: int = 64,
    seed: int = 0,
) -> Linear:
    rng = np.random.default_rng(seed)
    clf = Linear(x.shape[1], n_classes, rng)
    opt = Adam(clf.named_parameters(), lr=lr)
    n = len(labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            loss = cross_entropy(clf(Tensor(x[idx])), labels[idx])
            loss.backward()
            opt.step()
    return clf


def linear_probe_features(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    epochs: int = 100,
    lr: float = 1e-2,
    batch_size: int = 64,
    seed: int = 0,
) -> float:
    """Top-1 of a linear classifier on standardized features (train-split statistics)."""
    n_classes = _check_labels(train_y, test_y)
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-8
    clf = train_linear_classifier((train_x - mu) / sd, train_y, n_classes, epochs, lr, batch_size, seed)
    with no_grad():
        pred = clf(Tensor((test_x - mu) / sd)).data.argmax(axis=1)
    return float(np.mean(pred == test_y))


def linear_probe(
    model: HeteroSkeletonModel,
    train: PairedDataset,
    test: PairedDataset,
    streams,
    feature: str = "auto",
    epochs: int = 100,
    lr: float = 1e-2,
    batch_size: int = 64,
    seed: int = 0,
) -> float:
    _check_labels(train.labels, test.labels)
    feature = probe_feature(streams, feature)
    train_x = extract_features(model, train, streams, feature)
    test_x = extract_features(model, test, streams, feature)
    return linear_probe_features(train_x, train.labels, test_x, test.labels, epochs, lr, batch_size, seed)


def cosine_retrieval(query: np.ndarray, query_labels, gallery: np.ndarray, gallery_labels) -> float:
    """Fraction of queries whose most cosine-similar gallery item shares their label."""
    if len(gallery) == 0:
        raise ValueError("retrieval needs a non-empty gallery")
    if len(query) == 0:
        raise ValueError("retrieval needs at least one query")
    q = query / np.maximum(np.linalg.norm(query, axis=1, keepdims=True), 1e-12)
    g = gallery / np.maximum(np.linalg.norm(gallery, axis=1, keepdims=True), 1e-12)
    nearest = (q @ g.T).argmax(axis=1)
    return float(np.mean(np.asarray(gallery_labels)[nearest] == np.asarray(query_labels)))


def retrieve(
    model: HeteroSkeletonModel, query: PairedDataset, gallery: PairedDataset, streams, feature: str = "auto"
) -> float:
    if len(gallery) == 0:
        raise ValueError("retrieval needs a non-empty gallery")
    feature = probe_feature(streams, feature)
    return cosine_retrieval(
        extract_features(model, query, streams, feature),
        query.labels,
        extract_features(model, gallery, streams, feature),
        gallery.labels,
    )


def _eval_batches(model: HeteroSkeletonModel, ds: PairedDataset, batch_size: int):
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for lo in range(0, len(ds), batch_size):
                yield ds.joints3d[lo : lo + batch_size], ds.joints2d[lo : lo + batch_size]
    finally:
        model.train(was_training)


def fusion_consistency(model: HeteroSkeletonModel, ds: PairedDataset, streams, batch_size: int = 32) -> float:
    """Mean over streams and samples of ``MSE(Z_i, Z'_i)`` as the training objective sees it.

    The projectors normalize with batch statistics, so the model runs in train
    mode over consecutive batches of ``ds``; a copy is used so no running
    statistic of ``model`` changes.
    """
    streams = tuple(streams)
    probe = copy.deepcopy(model)
    probe.train()
    total = 0.0
    with no_grad():
        for lo in range(0, len(ds), batch_size):
            r = probe(ds.joints3d[lo : lo + batch_size], ds.joints2d[lo : lo + batch_size], streams)
            for s in streams:
                total += float(((r.z[s].data - r.z_fused[s].data) ** 2).mean(axis=1).sum())
    return total / (len(ds) * len(streams))


def lift_error(model: HeteroSkeletonModel, ds: PairedDataset, batch_size: int = 64) -> float:
    """MPJPE of the lifted 2D stream against the 3D stream over the common joints, in eval mode."""
    errors = []
    for j3, j2 in _eval_batches(model, ds, batch_size):
        u = model.unify(j3, j2, ("J", "C"))
        pc, pj = common_joint_pairs(u["C"], u["J"])
        errors.append(np.linalg.norm(pc.data - pj.data, axis=-1).reshape(-1))
    return float(np.concatenate(errors).mean())


def stratified_subsample(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """``ceil(fraction * n_k)`` indices of every class ``k``, sorted."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    picked = []
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        take = math.ceil(fraction * len(members))
        if take < 1:
            raise ValueError(f"fraction {fraction} leaves class {k} without samples")
        picked.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(picked))


class FineTuneHead(Module):
    def __init__(self, n_in: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.fc = Linear(n_in, n_classes, rng)

    def forward(self, y: Tensor) -> Tensor:
        return self.fc(y)


def semi_supervised(
    model: HeteroSkeletonModel,
    train: PairedDataset,
    test: PairedDataset,
    streams,
    fraction: float,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    feature: str = "auto",
    crop_min: float = 0.8,
) -> float:
    """Fine-tune encoder and a linear head jointly on a stratified ``fraction`` of the labels.

    ``model`` is updated in place.
    """
    rng = np.random.default_rng(seed)
    idx = stratified_subsample(train.labels, fraction, rng)
    n_classes = _check_labels(train.labels[idx], test.labels)
    feature = probe_feature(streams, feature)
    subset = train.subset(idx)
    head = FineTuneHead(model.encoder.head.weight.shape[1], n_classes, rng)
    params = list(model.named_parameters("model.")) + list(head.named_parameters("head."))
    opt = Adam(params, lr=lr)
    frames = subset.joints3d.shape[-3]
    model.train()
    for _ in range(epochs):
        order = rng.permutation(len(subset))
        for lo in range(0, len(order), batch_size):
            b = order[lo : lo + batch_size]
            if len(b) < 2:
                continue
            pairs = [
                augment(subset.joints3d[i], subset.joints2d[i], draw_augmentation(rng, (crop_min, 1.0)), frames)
                for i in b
            ]
            j3 = np.stack([p[0] for p in pairs])
            j2 = np.stack([p[1] for p in pairs])
            y = model(j3, j2, streams, heads=False).y[feature]
            loss = cross_entropy(head(y), subset.labels[b])
            loss.backward()
            opt.step()
    feats = extract_features(model, test, streams, feature)
    with no_grad():
        pred = head(Tensor(feats)).data.argmax(axis=1)
    return float(np.mean(pred == test.labels))

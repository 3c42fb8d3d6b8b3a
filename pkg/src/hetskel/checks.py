"""Finite-difference gradient suites for every primitive and every loss term.

Each suite returns the worst relative error it found; a suite passes when
that error is at most ``TOLERANCE``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import BatchNorm1d, Tensor, batch_norm_1d, cross_entropy, gradient_check, no_grad, watch_margins
from .autodiff import tensor as T
from .encoder import EncoderConfig
from .lift import rec_loss
from .model import HeteroSkeletonModel, compute_losses
from .objectives import LossConfig, consistency_loss, covariance_term, variance_term, vc_loss
from .semantic import fallback_embeddings
from .synthetic import GeneratorConfig, generate

TOLERANCE = 1e-4
STEP = 1e-4
HEAD_GAIN = 100.0


@dataclass
class SuiteResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _leaf(rng, *shape, positive: bool = False) -> Tensor:
    data = rng.uniform(0.5, 2.0, shape) if positive else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


def _weighted(out: Tensor, rng) -> Callable[[], Tensor]:
    """A random linear functional makes every output entry matter."""
    return rng.normal(size=out.shape)


def _primitive_cases(rng) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    p = _leaf(rng, 3, 4, positive=True)
    x3 = _leaf(rng, 2, 3, 4)
    m1, m2 = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 5)
    w, bias = _leaf(rng, 4, 5), _leaf(rng, 5)
    ln_w, ln_b = _leaf(rng, 4), _leaf(rng, 4)
    q, k, v = _leaf(rng, 2, 5, 3), _leaf(rng, 2, 5, 3), _leaf(rng, 2, 5, 3)
    table = _leaf(rng, 7)
    bn = BatchNorm1d(4)
    bn.weight.data = rng.normal(size=4)
    bn.bias.data = rng.normal(size=4)
    rows = _leaf(rng, 6, 4)
    labels = rng.integers(0, 4, 6)
    # keep relu inputs away from the kink so central differences are exact
    away = Tensor(rng.choice([-1, 1], (3, 4)) * rng.uniform(0.1, 1.0, (3, 4)), requires_grad=True)
    codes = rng.integers(0, 7, (3, 5))

    def case(fn, inputs):
        c = _weighted(fn(), rng)
        return (lambda: (fn() * c).sum()), inputs

    return {
        "add": case(lambda: a + b, [a, b]),
        "sub": case(lambda: a - b, [a, b]),
        "mul": case(lambda: a * b, [a, b]),
        "div": case(lambda: a / p, [a, p]),
        "neg": case(lambda: -a, [a]),
        "power": case(lambda: p**1.7, [p]),
        "exp": case(lambda: T.exp(a), [a]),
        "log": case(lambda: T.log(p), [p]),
        "sqrt": case(lambda: T.sqrt(p), [p]),
        "relu": case(lambda: T.relu(away), [away]),
        "leaky_relu": case(lambda: T.leaky_relu(away, 0.1), [away]),
        "gelu": case(lambda: T.gelu(x3), [x3]),
        "sum": case(lambda: T.tsum(x3, axis=(0, 2), keepdims=True), [x3]),
        "mean": case(lambda: T.mean(x3, axis=1), [x3]),
        "reshape": case(lambda: T.reshape(x3, (6, 4)), [x3]),
        "transpose": case(lambda: T.transpose(x3, (2, 0, 1)), [x3]),
        "swapaxes": case(lambda: T.swapaxes(x3, 0, 2), [x3]),
        "broadcast_to": case(lambda: T.broadcast_to(b, (3, 4)), [b]),
        "getitem": case(lambda: x3[:, 1:, ::2], [x3]),
        "getitem_fancy": case(lambda: a[np.array([0, 2, 0]), np.array([1, 1, 3])], [a]),
        "index_select": case(lambda: T.index_select(x3, [3, 0], axis=2), [x3]),
        "take": case(lambda: T.take(table, codes), [table]),
        "concat": case(lambda: T.concat([a, p], axis=1), [a, p]),
        "stack": case(lambda: T.stack([a, p], axis=0), [a, p]),
        "matmul": case(lambda: T.matmul(m1, m2), [m1, m2]),
        "linear": case(lambda: T.linear(x3, w, bias), [x3, w, bias]),
        "softmax": case(lambda: T.softmax(x3, axis=1), [x3]),
        "log_softmax": case(lambda: T.log_softmax(x3, axis=-1), [x3]),
        "layer_norm": case(lambda: T.layer_norm(x3, ln_w, ln_b), [x3, ln_w, ln_b]),
        "attention": case(lambda: T.scaled_dot_attention(q, k, v), [q, k, v]),
        "batch_norm": case(lambda: batch_norm_1d(rows, bn, "train"), [rows, bn.weight, bn.bias]),
        "cross_entropy": (lambda: cross_entropy(rows, labels), [rows]),
    }


def primitive_suites(seed: int = 0) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (f, inputs) in _primitive_cases(rng).items():
        start = time.perf_counter()
        err = gradient_check(f, inputs, STEP)
        results.append(SuiteResult(f"primitive:{name}", err, time.perf_counter() - start))
    return results


# Smallest acceptable distance from a kink (relu family) or from 0 (sqrt).
MARGINS = {"relu": 1e-3, "leaky_relu": 1e-3, "sqrt": 1e-4}


def _kink_margin(model: HeteroSkeletonModel, j3: np.ndarray, j2: np.ndarray) -> float:
    """Worst ratio of observed distance to ``MARGINS`` over one evaluation of every loss."""
    with no_grad(), watch_margins() as seen:
        compute_losses(model(j3, j2), LossConfig())
    return min(seen[op] / MARGINS[op] for op in seen)


def toy_model(seed: int = 0, attempts: int = 50) -> tuple[HeteroSkeletonModel, np.ndarray, np.ndarray]:
    """A tiny model (d_model 8) and a 4-sample, 4-frame batch.

    At initialization the pooled features of four short clips differ by about
    1e-3, so the projector batch-norm would be dominated by its epsilon; the
    head weights are scaled by ``HEAD_GAIN`` to spread them out. Even then a
    draw often leaves some ReLU input within a hair of its kink. Finite
    differences say nothing at such points, so weights are redrawn from
    generators seeded by ``(seed, attempt)`` until every input clears
    ``MARGINS``; failing that, the best draw is used.
    """
    data = generate(GeneratorConfig(n_classes=4, frames=8, noise_std=0.05), samples_per_class=1, seed=seed)
    j3, j2 = data.joints3d[:, :, :4].astype(np.float64), data.joints2d[:, :, :4].astype(np.float64)
    cfg = EncoderConfig(
        d_model=8, hidden=12, feature_dim=8, projector_hidden=12, projector_dim=6, max_frames=4
    )
    best, best_margin = None, -1.0
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, attempt])
        model = HeteroSkeletonModel(rng, cfg, lift_hidden=8, embeddings=fallback_embeddings(seed, dim=16))
        model.encoder.head.weight.data *= HEAD_GAIN
        margin = _kink_margin(model, j3, j2)
        if margin >= 1.0:
            return model, j3, j2
        if margin > best_margin:
            best, best_margin = model, margin
    return best, j3, j2


def model_suites(seed: int = 0, max_entries: int = 6) -> list[SuiteResult]:
    """Each loss term differentiated through the whole model w.r.t. every parameter tensor.

    One perturbed forward pass serves every term, so the numeric side costs
    the same as checking a single term.
    """
    model, j3, j2 = toy_model(seed)
    cfg = LossConfig()
    params = model.parameters()
    terms = {
        "L_con": lambda r: consistency_loss(r.z, r.z_fused),
        "variance": lambda r: sum((variance_term(r.z[s]) + variance_term(r.z_fused[s]) for s in r.z), Tensor(0.0)),
        "covariance": lambda r: sum((covariance_term(r.z[s]) + covariance_term(r.z_fused[s]) for s in r.z), Tensor(0.0)),
        "L_reg": lambda r: vc_loss(r.z, r.z_fused, cfg),
        "L_rec": lambda r: rec_loss(r.unified["C"], r.unified["J"]),
        "L": lambda r: compute_losses(r, cfg)["L"],
    }

    def values() -> np.ndarray:
        with no_grad():
            r = model(j3, j2)
            return np.array([term(r).item() for term in terms.values()])

    start = time.perf_counter()
    analytic = []
    for term in terms.values():
        for p in params:
            p.grad = None
        term(model(j3, j2)).backward()
        analytic.append([np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params])
    for p in params:
        p.grad = None

    rng = np.random.default_rng(seed)
    worst = np.zeros(len(terms))
    for k, p in enumerate(params):
        base = p.data
        entries = range(p.size)
        if p.size > max_entries:
            entries = np.sort(rng.choice(p.size, size=max_entries, replace=False))
        for i in entries:
            bumped = base.copy().reshape(-1)
            bumped[i] += STEP
            p.data = bumped.reshape(base.shape)
            up = values()
            bumped[i] -= 2 * STEP
            p.data = bumped.reshape(base.shape)
            down = values()
            numeric = (up - down) / (2 * STEP)
            for t in range(len(terms)):
                a = analytic[t][k].reshape(-1)[i]
                worst[t] = max(worst[t], abs(a - numeric[t]) / max(1.0, abs(a)))
        p.data = base
    share = (time.perf_counter() - start) / len(terms)
    return [SuiteResult(f"model:{name}", float(err), share) for name, err in zip(terms, worst)]


def all_suites(seed: int = 0) -> list[SuiteResult]:
    return primitive_suites(seed) + model_suites(seed)

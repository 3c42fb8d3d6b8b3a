"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, h: float = 1e-4, entries=None) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. entries of ``x`` (all by default).

    Entries not listed in ``entries`` (flat indices) are left at zero.
    """
    grad = np.zeros_like(x.data)
    base = x.data
    flat = base.reshape(-1)
    for i in range(flat.size) if entries is None else entries:
        bumped = flat.copy()
        bumped[i] += h
        x.data = bumped.reshape(base.shape)
        up = f().item()
        bumped[i] -= 2 * h
        x.data = bumped.reshape(base.shape)
        down = f().item()
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    x.data = base
    return grad


def gradient_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Max over checked entries of ``|analytic - numeric| / max(1, |analytic|)``.

    ``f`` takes no arguments and closes over ``inputs``; it is re-evaluated
    for every perturbed entry, so it must be deterministic. ``max_entries``
    caps the entries probed per input (a seeded random sample).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    rng = np.random.default_rng(seed)
    for x in inputs:
        x.grad = None
    out = f()
    out.backward()
    analytic = [np.array(x.grad if x.grad is not None else np.zeros_like(x.data)) for x in inputs]
    worst = 0.0
    for x, a in zip(inputs, analytic):
        entries = None
        if max_entries is not None and x.size > max_entries:
            entries = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        n = numerical_gradient(f, x, h, entries)
        err = np.abs(a - n) / np.maximum(1.0, np.abs(a))
        if entries is not None:
            err = err.reshape(-1)[entries]
        if err.size:
            worst = max(worst, float(err.max()))
    return worst

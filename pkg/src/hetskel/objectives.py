"""Training losses: feature consistency, variance/covariance regularization, total objective."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .autodiff import tensor as T
from .errors import DegenerateBatchError, NonFiniteError, ShapeError


@dataclass
class LossConfig:
    """Loss weights. ``eps`` is added outside the square root unless ``eps_inside_sqrt``."""

    lambda_con: float = 1.0
    mu: float = 1.0
    gamma: float = 1.0
    eps: float = 1e-4
    eps_inside_sqrt: bool = False
    ordered_pairs: bool = False

    def __post_init__(self):
        for name in ("lambda_con", "mu", "gamma", "eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"MSE operands differ in shape: {a.shape} vs {b.shape}")
    d = a - b
    return (d * d).mean()


def consistency_loss(z: dict[str, Tensor], z_fused: dict[str, Tensor], ordered_pairs: bool = False) -> Tensor:
    """``sum_i MSE(Z_i, Z'_i) + sum_{i != j} MSE(Z_i, Z_j)`` over the streams present in ``z``.

    Pairs are unordered by default (3 terms for three streams).
    """
    streams = list(z)
    if set(streams) != set(z_fused):
        raise ShapeError(f"stream sets differ: {sorted(z)} vs {sorted(z_fused)}")
    total = None
    terms = [mse(z[s], z_fused[s]) for s in streams]
    pairs = itertools.permutations(streams, 2) if ordered_pairs else itertools.combinations(streams, 2)
    terms += [mse(z[a], z[b]) for a, b in pairs]
    for term in terms:
        total = term if total is None else total + term
    return total


def _check_batch(z: Tensor) -> int:
    if z.ndim != 2:
        raise ShapeError(f"expected an N x D batch, got {z.shape}")
    n = z.shape[0]
    if n < 2:
        raise DegenerateBatchError(f"variance statistics need N >= 2, got N={n}")
    return n


def variance_term(z: Tensor, gamma: float = 1.0, eps: float = 1e-4, eps_inside_sqrt: bool = False) -> Tensor:
    """Hinge on each column's standard deviation (divisor N-1), averaged over columns."""
    n = _check_batch(z)
    zc = z - z.mean(axis=0, keepdims=True)
    var = (zc * zc).sum(axis=0) * (1.0 / (n - 1))
    if eps_inside_sqrt:
        std = T.sqrt(var + eps)
        return T.relu(gamma - std).mean()
    return T.relu((gamma + eps) - T.sqrt(var)).mean()


def covariance_term(z: Tensor) -> Tensor:
    """Sum of squared off-diagonal covariances (divisor N-1), divided by D."""
    n = _check_batch(z)
    d = z.shape[1]
    zc = z - z.mean(axis=0, keepdims=True)
    cov = T.matmul(zc.T, zc) * (1.0 / (n - 1))
    off = cov * (1.0 - np.eye(d))
    return (off * off).sum() * (1.0 / d)


def vc(z: Tensor, cfg: LossConfig) -> Tensor:
    return variance_term(z, cfg.gamma, cfg.eps, cfg.eps_inside_sqrt) * cfg.mu + covariance_term(z)


def vc_loss(z: dict[str, Tensor], z_fused: dict[str, Tensor], cfg: LossConfig) -> Tensor:
    total = None
    for s in z:
        term = vc(z[s], cfg) + vc(z_fused[s], cfg)
        total = term if total is None else total + term
    return total


def total_loss(l_con: Tensor, l_reg: Tensor, l_rec: Tensor, cfg: LossConfig) -> Tensor:
    for name, term in (("L_con", l_con), ("L_reg", l_reg), ("L_rec", l_rec)):
        value = term.item() if isinstance(term, Tensor) else float(term)
        if not math.isfinite(value):
            raise NonFiniteError(f"loss component {name} is not finite ({value})")
    return T.as_tensor(l_con) * cfg.lambda_con + l_reg + l_rec

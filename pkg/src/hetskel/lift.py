"""2D-to-3D lifting of the interpolated 17-joint skeleton, and its loss."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import MLP, BatchNorm1d, Module, Tensor, stop_gradient
from .errors import ShapeError, TopologyError
from .topology import C20_3D, COMMON_BAND, SkeletonSequence, UnifiedSkeleton, common_joint_pairs

N_IN_JOINTS = 20


class LiftNetwork(Module):
    """Frame-wise MLP: BatchNorm on the 40 inputs, then 4 linear layers with LeakyReLU between."""

    def __init__(self, rng: np.random.Generator, hidden: int = 256, slope: float = 0.01):
        super().__init__()
        self.norm = BatchNorm1d(N_IN_JOINTS * 2)
        self.mlp = MLP([N_IN_JOINTS * 2, hidden, hidden, hidden, N_IN_JOINTS * 3], rng, "leaky_relu", slope)

    def zero_output_layer(self) -> None:
        last = self.mlp.layers[-1]
        last.weight.data = np.zeros_like(last.weight.data)
        last.bias.data = np.zeros_like(last.bias.data)

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        rows = x.reshape(math.prod(lead), N_IN_JOINTS * 2)
        out = self.mlp(self.norm(rows))
        return out.reshape(lead + (N_IN_JOINTS, 3))


def normalize_2d(x: np.ndarray) -> np.ndarray:
    """Scale each sequence into [-1, 1]; sequences already inside are left as they are."""
    x = np.asarray(x, dtype=np.float64)
    peak = np.abs(x).max(axis=(-4, -3, -2, -1), keepdims=True)
    return x / np.maximum(peak, 1.0)


def lift(seq: SkeletonSequence, net: LiftNetwork, mode: str | None = None) -> SkeletonSequence:
    """Predict 3D coordinates for every frame and person of a 2D C20 sequence.

    ``mode`` ("train" or "eval") overrides the network's current mode for
    this call only.
    """
    if seq.topology.id != "C20":
        raise TopologyError(f"lifting expects C20 input, got {seq.topology.id}")
    if seq.data.shape[-1] != 2:
        raise ShapeError(f"lifting expects 2D coordinates, got {seq.data.shape[-1]}D")
    x = Tensor(normalize_2d(seq.array))
    previous = net.training
    if mode is not None:
        net.train(mode == "train")
    try:
        out = net(x)
    finally:
        net.train(previous)
    return SkeletonSequence(C20_3D, out, seq.label)


def rec_loss(u_c: UnifiedSkeleton, u_j: UnifiedSkeleton) -> Tensor:
    """Mean over batch, persons and frames of ``(1/|B|) sum_B ||u_C - u_J||^2``.

    The 25-joint side is the regression target and receives no gradient.
    """
    pc, pj = common_joint_pairs(u_c, u_j)
    diff = pc - stop_gradient(pj)
    rows = math.prod(pc.shape[:-2])
    return (diff * diff).sum() * (1.0 / (rows * len(COMMON_BAND)))


def mpjpe(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean Euclidean distance between corresponding joints."""
    return float(np.linalg.norm(np.asarray(pred) - np.asarray(target), axis=-1).mean())

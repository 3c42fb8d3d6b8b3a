"""The full model: prompts, lifter, semantic reducer, embedders, fusion, encoder, projectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Parameter, Tensor, concat, stack
from .encoder import STREAMS, EncoderConfig, Projector, StreamEmbedding, UnifiedEncoder, early_fusion
from .lift import LiftNetwork, lift, rec_loss
from .objectives import LossConfig, consistency_loss, total_loss, vc_loss
from .semantic import FeatureReducer, SemanticEmbeddingTable, encode_motion, fallback_embeddings, prompt_semantic, reduce
from .topology import (
    C17,
    J25,
    PromptSet,
    SkeletonSequence,
    UnifiedSkeleton,
    build_prompted_unified,
    interpolate_spine,
    to_unified_slots,
)


def canonical_streams(streams) -> tuple[str, ...]:
    streams = tuple(streams)
    unknown = set(streams) - set(STREAMS)
    if unknown or not streams:
        raise ValueError(f"stream subset must be a non-empty subset of {STREAMS}, got {streams}")
    return tuple(s for s in STREAMS if s in streams)


@dataclass
class ForwardResult:
    streams: tuple[str, ...]
    unified: dict[str, UnifiedSkeleton]
    y: dict[str, Tensor]
    z: dict[str, Tensor]
    z_fused: dict[str, Tensor]

    @property
    def features(self) -> Tensor:
        """``N x k x D`` stack of per-stream features followed by the fused feature."""
        return stack([self.y[s] for s in self.streams] + [self.y["F"]], axis=1)


class HeteroSkeletonModel(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        encoder_cfg: EncoderConfig | None = None,
        lift_hidden: int = 64,
        embeddings: SemanticEmbeddingTable | None = None,
        leaky_slope: float = 0.01,
    ):
        super().__init__()
        cfg = encoder_cfg or EncoderConfig()
        self._table = embeddings or fallback_embeddings(0)
        self.prompt_J = Parameter(rng.uniform(-0.1, 0.1, (5, 3)))
        self.prompt_C = Parameter(rng.uniform(-0.1, 0.1, (10, 3)))
        self.prompt_S = Parameter(rng.uniform(-0.1, 0.1, (5, 3)))
        self.lifter = LiftNetwork(rng, lift_hidden, leaky_slope)
        self.reducer = FeatureReducer(self._table.dim, rng)
        self.embedding = StreamEmbedding(cfg, rng)
        self.fusion = Linear(cfg.d_model, cfg.d_model, rng)
        self.encoder = UnifiedEncoder(cfg, rng)
        self.projectors = {
            s: Projector(cfg.feature_dim, cfg.projector_hidden, cfg.projector_dim, rng, cfg.projector_norm)
            for s in STREAMS
        }

    @property
    def table(self) -> SemanticEmbeddingTable:
        return self._table

    @property
    def prompts(self) -> PromptSet:
        return PromptSet(self.prompt_J, self.prompt_C, self.prompt_S)

    def unify(self, joints3d: np.ndarray, joints2d: np.ndarray, streams, with_target: bool = False):
        """Prompted unified skeletons for the requested streams.

        ``with_target`` also builds the 25-joint skeleton when only the
        17-joint stream is requested, since it is the lifting target.
        """
        prompts = self.prompts
        out: dict[str, UnifiedSkeleton] = {}
        j25 = SkeletonSequence(J25, np.asarray(joints3d, dtype=np.float64))
        if "J" in streams or ("C" in streams and with_target):
            out["J"] = build_prompted_unified(to_unified_slots(j25), prompts, "J")
        if "C" in streams:
            c20 = interpolate_spine(SkeletonSequence(C17, np.asarray(joints2d, dtype=np.float64)))
            lifted = lift(c20, self.lifter)
            out["C"] = build_prompted_unified(to_unified_slots(lifted), prompts, "C")
        if "S" in streams:
            motion = encode_motion(j25, reduce(self._table, self.reducer))
            out["S"] = prompt_semantic(motion, prompts)
        return out

    def forward(self, joints3d: np.ndarray, joints2d: np.ndarray, streams=STREAMS, heads: bool = True) -> ForwardResult:
        """Encode the requested streams and their fusion; ``heads=False`` skips the projectors."""
        streams = canonical_streams(streams)
        unified = self.unify(joints3d, joints2d, streams, with_target=self.training)
        h = [self.embedding(unified[s], s) for s in streams]
        h_f = early_fusion(h, self.fusion)
        n = h_f.shape[0]
        # one encoder pass over all inputs; the weights are shared by construction
        y_all = self.encoder(concat(h + [h_f], axis=0))
        names = list(streams) + ["F"]
        y = {name: y_all[i * n : (i + 1) * n] for i, name in enumerate(names)}
        if not heads:
            return ForwardResult(streams, unified, y, {}, {})
        z = {s: self.projectors[s](y[s]) for s in streams}
        z_fused = {s: self.projectors[s](y["F"]) for s in streams}
        return ForwardResult(streams, unified, y, z, z_fused)


def compute_losses(result: ForwardResult, cfg: LossConfig) -> dict[str, Tensor]:
    """``L_con``, ``L_reg``, ``L_rec`` and their weighted total ``L``."""
    l_con = consistency_loss(result.z, result.z_fused, cfg.ordered_pairs)
    l_reg = vc_loss(result.z, result.z_fused, cfg)
    if "C" in result.unified and "J" in result.unified:
        l_rec = rec_loss(result.unified["C"], result.unified["J"])
    else:
        l_rec = Tensor(0.0)
    return {"L": total_loss(l_con, l_reg, l_rec, cfg), "L_con": l_con, "L_reg": l_reg, "L_rec": l_rec}

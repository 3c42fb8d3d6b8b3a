"""Joint taxonomies, spine interpolation and the prompted 30-slot skeleton.

Two source topologies are supported: the 25-joint Kinect V2 skeleton (3D)
and the 17-joint COCO skeleton (2D). The COCO skeleton gains three spine
joints by interpolation (``C20``; user-facing docs still call it the 17-joint
skeleton). Both are then placed into a unified 30-slot order:

* slots 1-5   facial joints (only the 17-joint skeleton has them)
* slots 6-20  joints common to both skeletons, including the three spine joints
* slots 21-30 head, neck, hands, hand tips, thumbs and feet (25-joint only)

Slots a stream cannot fill are taken from that stream's trainable prompt.
Slot numbers are 1-based in docs; arrays use 0-based indices.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .autodiff import Tensor, concat, index_select
from .autodiff import tensor as T
from .errors import ConsistencyError, ShapeError, TopologyError

J25_NAMES: tuple[str, ...] = (
    "base_of_spine", "middle_of_spine", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist", "left_hand",
    "right_shoulder", "right_elbow", "right_wrist", "right_hand",
    "left_hip", "left_knee", "left_ankle", "left_foot",
    "right_hip", "right_knee", "right_ankle", "right_foot",
    "spine", "left_hand_tip", "left_thumb", "right_hand_tip", "right_thumb",
)  # fmt: skip

C17_NAMES: tuple[str, ...] = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)  # fmt: skip

SPINE_NAMES: tuple[str, ...] = ("spine", "base_of_spine", "middle_of_spine")
C20_NAMES: tuple[str, ...] = C17_NAMES + SPINE_NAMES

FACIAL_SLOTS: tuple[str, ...] = ("nose", "left_eye", "right_eye", "left_ear", "right_ear")
COMMON_SLOTS: tuple[str, ...] = (
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
    "spine", "middle_of_spine", "base_of_spine",
)  # fmt: skip
EXTREMITY_SLOTS: tuple[str, ...] = (
    "head", "neck", "left_hand", "right_hand", "left_hand_tip",
    "right_hand_tip", "left_thumb", "right_thumb", "left_foot", "right_foot",
)  # fmt: skip
U30_NAMES: tuple[str, ...] = FACIAL_SLOTS + COMMON_SLOTS + EXTREMITY_SLOTS

FACIAL_BAND = range(0, 5)
COMMON_BAND = range(5, 20)
EXTREMITY_BAND = range(20, 30)
N_SLOTS = 30


@dataclass(frozen=True)
class Topology:
    id: str
    names: tuple[str, ...]
    dims: int

    @property
    def n_joints(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


J25 = Topology("J25", J25_NAMES, 3)
C17 = Topology("C17", C17_NAMES, 2)
C20 = Topology("C20", C20_NAMES, 2)
C20_3D = Topology("C20", C20_NAMES, 3)  # output of the lifting network
U30 = Topology("U30", U30_NAMES, 3)
TOPOLOGIES = {t.id: t for t in (J25, C17, C20, U30)}


def get_topology(topology_id: str) -> Topology:
    try:
        return TOPOLOGIES[topology_id]
    except KeyError:
        raise TopologyError(f"unknown topology {topology_id!r}") from None


def slot_map(topology: Topology) -> dict[int, int]:
    """Joint index -> 0-based unified slot, for the joints that have a slot."""
    if topology.id in ("C17",):
        raise TopologyError("C17 has no slot map; interpolate the spine first")
    return {i: U30_NAMES.index(name) for i, name in enumerate(topology.names)}


def _slot_order(topology: Topology) -> tuple[np.ndarray, np.ndarray]:
    """(occupied slots ascending, joint index feeding each of those slots)."""
    mapping = slot_map(topology)
    by_slot = sorted((slot, joint) for joint, slot in mapping.items())
    slots = np.array([s for s, _ in by_slot], dtype=np.intp)
    joints = np.array([j for _, j in by_slot], dtype=np.intp)
    return slots, joints


COMMON_SET = np.array(COMMON_BAND, dtype=np.intp)


ArrayLike = Union[np.ndarray, Tensor]


@dataclass
class SkeletonSequence:
    """Motion data shaped ``(..., persons, frames, joints, dims)``.

    Leading axes beyond the last four are batch axes. ``data`` may be a
    numpy array or a :class:`Tensor` (for example the output of the lifter).
    """

    topology: Topology
    data: ArrayLike
    label: int | None = None

    def __post_init__(self):
        shape = self.data.shape
        if len(shape) < 4:
            raise ShapeError(f"skeleton data needs at least 4 axes (m, t, joints, dims), got {shape}")
        m, t, j, d = shape[-4:]
        if m not in (1, 2):
            raise ShapeError(f"persons must be 1 or 2, got {m}")
        if t < 1:
            raise ShapeError("sequence has no frames")
        if j != self.topology.n_joints or d != self.topology.dims:
            raise TopologyError(
                f"{self.topology.id} expects {self.topology.n_joints} joints x {self.topology.dims} dims, "
                f"got {j} x {d}"
            )

    @property
    def array(self) -> np.ndarray:
        return self.data.data if isinstance(self.data, Tensor) else np.asarray(self.data)

    @property
    def persons(self) -> int:
        return self.data.shape[-4]

    @property
    def frames(self) -> int:
        return self.data.shape[-3]


class Provenance(enum.IntEnum):
    REAL = 0
    INTERPOLATED = 1
    PROMPT = 2


@dataclass
class PartialSlots:
    """Occupied unified slots of one stream before prompting.

    ``values`` holds only the occupied slots, in ascending slot order, shaped
    ``(..., m, t, n_occupied, 3)``; ``occupied`` is a boolean mask over the 30 slots.
    """

    values: Tensor
    occupied: np.ndarray
    provenance: np.ndarray

    def dense(self) -> np.ndarray:
        """30-slot array with zeros in the empty slots."""
        shape = self.values.shape[:-2] + (N_SLOTS, 3)
        out = np.zeros(shape)
        out[..., self.occupied, :] = self.values.data
        return out


@dataclass
class UnifiedSkeleton:
    data: Tensor
    provenance: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass
class PromptSet:
    """Trainable fillers for the slots each stream cannot supply."""

    J: Tensor
    C: Tensor
    S: Tensor

    SHAPES = {"J": (5, 3), "C": (10, 3), "S": (5, 3)}

    def __post_init__(self):
        for stream, shape in self.SHAPES.items():
            if getattr(self, stream).shape != shape:
                raise ShapeError(f"prompt_{stream} must be {shape}, got {getattr(self, stream).shape}")

    def for_stream(self, stream: str) -> Tensor:
        if stream not in self.SHAPES:
            raise ValueError(f"unknown stream {stream!r}")
        return getattr(self, stream)


# the empty slots each stream must receive from its prompt
STREAM_MISSING = {"J": FACIAL_BAND, "C": EXTREMITY_BAND, "S": FACIAL_BAND}


def interpolate_spine_array(x: ArrayLike) -> ArrayLike:
    """Append spine, base_of_spine and middle_of_spine to ``(..., 17, d)`` data."""
    ls, rs = C17.index("left_shoulder"), C17.index("right_shoulder")
    lh, rh = C17.index("left_hip"), C17.index("right_hip")
    if isinstance(x, Tensor):
        spine = (x[..., ls : ls + 1, :] + x[..., rs : rs + 1, :]) * 0.5
        base = (x[..., lh : lh + 1, :] + x[..., rh : rh + 1, :]) * 0.5
        middle = (spine + base) * 0.5
        return concat([x, spine, base, middle], axis=-2)
    x = np.asarray(x, dtype=np.float64)
    spine = (x[..., ls, :] + x[..., rs, :]) / 2
    base = (x[..., lh, :] + x[..., rh, :]) / 2
    middle = (spine + base) / 2
    return np.concatenate([x, spine[..., None, :], base[..., None, :], middle[..., None, :]], axis=-2)


def interpolate_spine(seq: SkeletonSequence) -> SkeletonSequence:
    if seq.topology.id != "C17":
        raise TopologyError(f"spine interpolation needs a C17 sequence, got {seq.topology.id}")
    return SkeletonSequence(C20, interpolate_spine_array(seq.data), seq.label)


def to_unified_slots(seq: SkeletonSequence) -> PartialSlots:
    """Reorder a 3D J25 or lifted C20 sequence into its unified slots."""
    if seq.topology.id not in ("J25", "C20"):
        raise TopologyError(f"cannot place {seq.topology.id} into unified slots")
    if seq.data.shape[-1] != 3:
        raise TopologyError(f"{seq.topology.id} input is {seq.data.shape[-1]}D; lift to 3D first")
    slots, joints = _slot_order(seq.topology)
    data = seq.data if isinstance(seq.data, Tensor) else Tensor(seq.data)
    values = index_select(data, joints, axis=-2)
    occupied = np.zeros(N_SLOTS, dtype=bool)
    occupied[slots] = True
    provenance = np.full(N_SLOTS, Provenance.PROMPT, dtype=np.int8)
    provenance[slots] = Provenance.REAL
    if seq.topology.id == "C20":
        for name in SPINE_NAMES:
            provenance[U30_NAMES.index(name)] = Provenance.INTERPOLATED
    return PartialSlots(values, occupied, provenance)


def from_unified_slots(partial: PartialSlots, topology: Topology) -> np.ndarray:
    """Inverse of :func:`to_unified_slots`: recover the source joint order."""
    slots, joints = _slot_order(topology)
    dense = partial.dense()
    out = np.zeros(dense.shape[:-2] + (topology.n_joints, 3))
    out[..., joints, :] = dense[..., slots, :]
    return out


def build_prompted_unified(partial: PartialSlots, prompts: PromptSet, stream: str) -> UnifiedSkeleton:
    """Fill a stream's empty slots with its prompt, broadcast over persons and frames."""
    if stream not in STREAM_MISSING:
        raise ValueError(f"unknown stream {stream!r}")
    missing = np.zeros(N_SLOTS, dtype=bool)
    missing[list(STREAM_MISSING[stream])] = True
    if not np.array_equal(~partial.occupied, missing):
        raise ConsistencyError(
            f"stream {stream} expects empty slots {[i + 1 for i in STREAM_MISSING[stream]]}, "
            f"got {[int(i) + 1 for i in np.flatnonzero(~partial.occupied)]}"
        )
    prompt = prompts.for_stream(stream)
    lead = partial.values.shape[:-2]
    filler = T.broadcast_to(prompt, lead + prompt.shape)
    if stream == "C":
        data = concat([partial.values, filler], axis=-2)
    else:
        data = concat([filler, partial.values], axis=-2)
    provenance = partial.provenance.copy()
    provenance[missing] = Provenance.PROMPT
    return UnifiedSkeleton(data, provenance)


def common_joint_pairs(u_c: UnifiedSkeleton, u_j: UnifiedSkeleton) -> tuple[Tensor, Tensor]:
    """Slot-aligned coordinates of the 15 common joints from both skeletons."""
    if u_c.shape != u_j.shape:
        raise ShapeError(f"unified skeletons differ in shape: {u_c.shape} vs {u_j.shape}")
    for u in (u_c, u_j):
        if np.any(u.provenance[COMMON_SET] == Provenance.PROMPT):
            raise ConsistencyError("a common slot is filled by a prompt")
    sl = (Ellipsis, slice(COMMON_BAND.start, COMMON_BAND.stop), slice(None))
    return u_c.data[sl], u_j.data[sl]


def topology_reference() -> dict:
    """All topology tables as one JSON-serializable document."""
    doc = {"slots": {str(i + 1): name for i, name in enumerate(U30_NAMES)},
           "bands": {"facial": [1, 5], "common": [6, 20], "extremity": [21, 30]},
           "common_set": [i + 1 for i in COMMON_BAND],
           "topologies": {}}
    for topo in (J25, C17, C20):
        entry = {"dims": topo.dims, "joints": list(topo.names)}
        if topo.id != "C17":
            entry["slot_of_joint"] = [slot_map(topo)[i] + 1 for i in range(topo.n_joints)]
        doc["topologies"][topo.id] = entry
    return doc


def export_topology_json(path: str | Path) -> None:
    Path(path).write_text(json.dumps(topology_reference(), indent=2) + "\n")


def reference_json_path() -> Path:
    return Path(__file__).parent / "data" / "topology.json"

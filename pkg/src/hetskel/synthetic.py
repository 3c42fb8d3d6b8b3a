"""Synthetic paired skeleton data: 3D 25-joint motion and its 2D 17-joint projection.

Each action class is a periodic motion of one body part (arm raises, kicks,
torso bends and twists) applied to a fixed rest pose. A sample is the class
template started at a random phase, so with zero noise every sample of a
class is a time-shifted copy of the template. The 2D stream is a pinhole
projection of the 3D stream, with facial joints placed at fixed offsets from
the projected head. Each stream then gets its own independent corruption:
a static per-joint offset held for the whole sequence (a calibration-style
bias, on by default) plus optional white noise per frame. Static offsets
cancel in frame differences, so motion directions stay exact while joint
positions do not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProjectionError, TopologyError
from .topology import C17, J25

# rest pose in metres: x to the subject's left (image right), y up, z away from the camera
_REST = {
    "base_of_spine": (0.0, 0.0, 0.0),
    "middle_of_spine": (0.0, 0.225, 0.0),
    "spine": (0.0, 0.45, 0.0),
    "neck": (0.0, 0.52, 0.0),
    "head": (0.0, 0.65, 0.0),
    "left_shoulder": (0.18, 0.45, 0.0),
    "left_elbow": (0.20, 0.18, 0.0),
    "left_wrist": (0.22, -0.05, 0.0),
    "left_hand": (0.22, -0.12, 0.0),
    "left_hand_tip": (0.22, -0.18, 0.0),
    "left_thumb": (0.19, -0.10, -0.03),
    "left_hip": (0.10, 0.0, 0.0),
    "left_knee": (0.11, -0.43, 0.0),
    "left_ankle": (0.11, -0.85, 0.0),
    "left_foot": (0.11, -0.88, -0.10),
}
for _name in list(_REST):
    if _name.startswith("left_"):
        x, y, z = _REST[_name]
        _REST["right_" + _name[5:]] = (-x, y, z)
REST_POSE = np.array([_REST[name] for name in J25.names], dtype=np.float64)

_ARM = ("elbow", "wrist", "hand", "hand_tip", "thumb")
_LEG = ("knee", "ankle", "foot")
_UPPER = tuple(
    n for n in J25.names if n not in ("base_of_spine",) and not n.endswith(("hip", "knee", "ankle", "foot"))
)


@dataclass(frozen=True)
class Motion:
    """Rotate ``joints`` about ``pivot`` around ``axis`` by ``amplitude * (1 - cos(2 pi f s)) / 2``."""

    pivot: str
    joints: tuple[str, ...]
    axis: tuple[float, float, float]
    amplitude: float


_PRIMITIVES: tuple[Motion, ...] = (
    Motion("right_shoulder", tuple("right_" + j for j in _ARM), (0, 0, 1), -1.6),  # right arm sideways
    Motion("right_shoulder", tuple("right_" + j for j in _ARM), (1, 0, 0), 1.6),  # right arm forward
    Motion("left_shoulder", tuple("left_" + j for j in _ARM), (0, 0, 1), 1.6),  # left arm sideways
    Motion("left_shoulder", tuple("left_" + j for j in _ARM), (1, 0, 0), 1.6),  # left arm forward
    Motion("right_hip", tuple("right_" + j for j in _LEG), (1, 0, 0), 0.9),  # right kick
    Motion("left_hip", tuple("left_" + j for j in _LEG), (1, 0, 0), 0.9),  # left kick
    Motion("base_of_spine", _UPPER, (1, 0, 0), 0.6),  # bow
    Motion("base_of_spine", _UPPER, (0, 1, 0), 0.8),  # twist
)


def class_motion(k: int) -> tuple[Motion, float]:
    """Motion primitive and cycles per sequence for class ``k``."""
    return _PRIMITIVES[k % len(_PRIMITIVES)], 1.0 + 0.5 * (k // len(_PRIMITIVES))


@dataclass(frozen=True)
class Camera:
    """Pinhole camera at the origin looking down +z; ``half_extent`` maps the image plane to [-1, 1]."""

    focal: float = 1.0
    distance: float = 3.0
    half_extent: float = 0.5

    @property
    def noise_scale(self) -> float:
        """Normalized image units per metre at the subject's depth."""
        return self.focal / (self.distance * self.half_extent)


@dataclass
class GeneratorConfig:
    n_classes: int = 4
    samples_per_class: int = 128
    test_per_class: int = 64
    frames: int = 16
    persons: int = 1
    noise_std: float = 0.0
    offset_std: float = 0.3
    camera: Camera = field(default_factory=Camera)
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.frames < 8:
            raise ValueError("need at least 8 frames")
        if self.persons not in (1, 2):
            raise ValueError("persons must be 1 or 2")
        if self.noise_std < 0 or self.offset_std < 0:
            raise ValueError("noise_std and offset_std must be non-negative")


@dataclass
class PairedDataset:
    """Paired streams: ``joints3d`` (n, m, t, 25, 3) and ``joints2d`` (n, m, t, 17, 2), float32."""

    joints3d: np.ndarray
    joints2d: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "PairedDataset":
        return PairedDataset(self.joints3d[idx], self.joints2d[idx], self.labels[idx])


def _rotate(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of vectors ``v`` (..., k, 3) by per-frame ``angle`` (...)."""
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    cross = np.cross(axis, v)
    dot = (v @ axis)[..., None]
    return v * c + cross * s + axis * dot * (1.0 - c)


def template(k: int, phase: np.ndarray, frames: int) -> np.ndarray:
    """Body-frame poses of class ``k`` for each start ``phase`` (in frames): (n, t, 25, 3)."""
    motion, cycles = class_motion(k)
    tau = np.asarray(phase, dtype=np.float64)[:, None] + np.arange(frames)
    angle = motion.amplitude * (1.0 - np.cos(2.0 * np.pi * cycles * tau / frames)) / 2.0
    pose = np.broadcast_to(REST_POSE, tau.shape + REST_POSE.shape).copy()
    idx = [J25.index(j) for j in motion.joints]
    pivot = REST_POSE[J25.index(motion.pivot)]
    axis = np.asarray(motion.axis, dtype=np.float64)
    pose[..., idx, :] = _rotate(pose[..., idx, :] - pivot, axis, angle) + pivot
    return pose


def period(k: int, frames: int) -> float:
    return frames / class_motion(k)[1]


def place_in_camera(pose: np.ndarray, camera: Camera, persons: int) -> np.ndarray:
    """Body-frame poses (n, t, 25, 3) -> camera frame (n, m, t, 25, 3)."""
    offsets = [0.0] if persons == 1 else [-0.45, 0.45]
    out = np.stack([pose + np.array([dx, 0.0, camera.distance]) for dx in offsets], axis=1)
    return out


# facial joint offsets from the projected head, in units of the projected head-neck length
FACE_OFFSETS = {
    "nose": (0.0, -0.25),
    "left_eye": (0.3, 0.1),
    "right_eye": (-0.3, 0.1),
    "left_ear": (0.6, 0.0),
    "right_ear": (-0.6, 0.0),
}


def project_points(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Pinhole projection ``f * (X/Z, Y/Z)`` before normalization."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0):
        raise ProjectionError("a joint lies at or behind the camera plane")
    return camera.focal * points[..., :2] / z[..., None]


def project_to_2d(joints3d: np.ndarray, camera: Camera = Camera()) -> np.ndarray:
    """J25 camera-frame data (..., 25, 3) -> normalized C17 image data (..., 17, 2)."""
    joints3d = np.asarray(joints3d, dtype=np.float64)
    if joints3d.shape[-2:] != (25, 3):
        raise TopologyError(f"projection expects (..., 25, 3) J25 data, got {joints3d.shape}")
    image = project_points(joints3d, camera) / camera.half_extent
    out = np.zeros(joints3d.shape[:-2] + (17, 2))
    for c_idx, name in enumerate(C17.names):
        if name in J25.names:
            out[..., c_idx, :] = image[..., J25.index(name), :]
    head = image[..., J25.index("head"), :]
    neck = image[..., J25.index("neck"), :]
    r = np.linalg.norm(head - neck, axis=-1, keepdims=True)
    for name, (dx, dy) in FACE_OFFSETS.items():
        out[..., C17.index(name), :] = head + r * np.array([dx, dy])
    return out


def _stream_noise(rng: np.random.Generator, shape, std: float, offset_std: float) -> np.ndarray:
    """White noise per frame plus a static per-joint offset held for the whole sequence."""
    noise = rng.normal(0.0, std, shape)
    n, m, _, j, d = shape
    return noise + rng.normal(0.0, offset_std, (n, m, 1, j, d))


def generate(cfg: GeneratorConfig, samples_per_class: int | None = None, seed: int | None = None) -> PairedDataset:
    """Labelled paired dataset, class-major order, deterministic in ``seed``."""
    n_per = cfg.samples_per_class if samples_per_class is None else samples_per_class
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    j3d, j2d, labels = [], [], []
    for k in range(cfg.n_classes):
        phase = rng.uniform(0.0, period(k, cfg.frames), size=n_per)
        clean = place_in_camera(template(k, phase, cfg.frames), cfg.camera, cfg.persons)
        flat = project_to_2d(clean, cfg.camera)
        noisy3d = clean + _stream_noise(rng, clean.shape, cfg.noise_std, cfg.offset_std)
        scale = cfg.camera.noise_scale
        noisy2d = flat + _stream_noise(rng, flat.shape, cfg.noise_std * scale, cfg.offset_std * scale)
        j3d.append(noisy3d)
        j2d.append(noisy2d)
        labels.append(np.full(n_per, k, dtype=np.int64))
    return PairedDataset(
        np.concatenate(j3d).astype(np.float32),
        np.concatenate(j2d).astype(np.float32),
        np.concatenate(labels),
    )


def make_splits(cfg: GeneratorConfig) -> tuple[PairedDataset, PairedDataset]:
    """Train and test sets drawn from independent child seeds of ``cfg.seed``."""
    train_seq, test_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    train = generate(cfg, cfg.samples_per_class, int(train_seq.generate_state(1)[0]))
    test = generate(cfg, cfg.test_per_class, int(test_seq.generate_state(1)[0]))
    return train, test


# augmentation


@dataclass(frozen=True)
class AugmentationParams:
    crop_ratio: float = 1.0
    angle: float = 0.0
    noise_std: float = 0.0
    seed: int = 0


MIN_CROP_FRAMES = 8


def draw_augmentation(
    rng: np.random.Generator, crop_range=(0.8, 1.0), max_angle: float = 0.0, noise_std: float = 0.0
) -> AugmentationParams:
    return AugmentationParams(
        crop_ratio=float(rng.uniform(*crop_range)),
        angle=float(rng.uniform(-max_angle, max_angle)) if max_angle > 0 else 0.0,
        noise_std=noise_std,
        seed=int(rng.integers(2**31)),
    )


def _crop_resample(x: np.ndarray, start: int, length: int, frames_out: int) -> np.ndarray:
    """Linear resampling of ``x[..., start:start+length, :, :]`` (frame axis -3) to ``frames_out`` frames."""
    pos = start + np.linspace(0.0, length - 1, frames_out)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, x.shape[-3] - 1)
    w = (pos - lo)[:, None, None]
    return x[..., lo, :, :] * (1.0 - w) + x[..., hi, :, :] * w


def augment(
    joints3d: np.ndarray,
    joints2d: np.ndarray,
    p: AugmentationParams,
    frames_out: int | None = None,
    camera: Camera = Camera(),
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one parameter draw to both streams of a sample.

    Temporal crop then linear resampling, rotation about the vertical axis
    (3D) or in the image plane (2D), then additive coordinate noise.
    """
    j3 = np.asarray(joints3d, dtype=np.float64)
    j2 = np.asarray(joints2d, dtype=np.float64)
    t = j3.shape[-3]
    frames_out = t if frames_out is None else frames_out
    rng = np.random.default_rng(p.seed)

    length = min(t, max(MIN_CROP_FRAMES, int(round(p.crop_ratio * t))))
    start = int(rng.integers(0, t - length + 1))
    j3 = _crop_resample(j3, start, length, frames_out)
    j2 = _crop_resample(j2, start, length, frames_out)

    if p.angle != 0.0:
        c, s = np.cos(p.angle), np.sin(p.angle)
        pivot3 = j3[..., J25.index("base_of_spine"), :].reshape(-1, 3).mean(axis=0)
        rot_y = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        j3 = (j3 - pivot3) @ rot_y.T + pivot3
        hips = (j2[..., C17.index("left_hip"), :] + j2[..., C17.index("right_hip"), :]) / 2
        pivot2 = hips.reshape(-1, 2).mean(axis=0)
        rot = np.array([[c, -s], [s, c]])
        j2 = (j2 - pivot2) @ rot.T + pivot2

    if p.noise_std > 0:
        j3 = j3 + rng.normal(0.0, p.noise_std, j3.shape)
        j2 = j2 + rng.normal(0.0, p.noise_std * camera.noise_scale, j2.shape)
    return j3, j2

"""Synthetic multi-view action clips standing in for the non-public datasets.

Each sample is a five-joint figure (head, two hands, two feet) whose motion
follows a per-class template: a dribble bounces one hand at high frequency,
a shot raises both hands steadily, a pass sweeps the hands sideways, and a
jump translates the whole body up and down.  Subjects vary in build, motion
amplitude and phase; each camera view applies a rigid rotation about the
vertical axis before orthographic rendering to small grayscale frames with
Gaussian joint blobs and seeded pixel noise.  Ground-truth pose sequences
are the camera-frame joint coordinates in millimeters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ACTION_LABELS
from .metrics import SUBJECT_IDS, VIEW_IDS, SkeletonPose
from .rng import Rng, derive_seed
from .tensorops import as_tensor

JOINT_NAMES = ("head", "hand_l", "hand_r", "foot_l", "foot_r")

# Default crop for the augmentation pipeline at full scale; desk-scale
# callers pass the clip extents instead.
DEFAULT_CROP_HW = (224, 224)

_BASE_JOINTS_MM = np.array(
    [
        [0.0, 900.0, 0.0],  # head
        [-250.0, 500.0, 60.0],  # left hand
        [250.0, 500.0, 60.0],  # right hand
        [-150.0, 0.0, 0.0],  # left foot
        [150.0, 0.0, 0.0],  # right foot
    ]
)

_VIEW_ANGLES_DEG = {1: -40.0, 2: -20.0, 3: 0.0, 4: 20.0, 5: 40.0}


@dataclass
class DatasetConfig:
    repetitions: int = 2
    frames: int = 8
    height: int = 16
    width: int = 16
    noise: float = 0.02

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.frames < 2:
            raise ValueError("need at least two frames")
        if self.height < 8 or self.width < 8:
            raise ValueError("frames must be at least 8x8 pixels")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise level must be in [0, 1)")


@dataclass
class SyntheticAction:
    clip: np.ndarray  # [1, T, H, W] grayscale in [0, 1]
    poses: list[SkeletonPose]  # camera-frame joints, mm, one per frame
    subject_id: int
    view_id: int
    label: str

    def __post_init__(self):
        self.clip = as_tensor(self.clip)
        if self.label not in ACTION_LABELS:
            raise ValueError(f"label must be one of {ACTION_LABELS}, got {self.label!r}")
        if self.subject_id not in SUBJECT_IDS or self.view_id not in VIEW_IDS:
            raise ValueError("subject_id must be 1..10 and view_id 1..5")
        if self.clip.shape[1] != len(self.poses):
            raise ValueError("frame count must equal pose count")

    @property
    def label_index(self) -> int:
        return ACTION_LABELS.index(self.label)


def _motion_template(label: str, tau: float, amp: float, phase: float) -> np.ndarray:
    """Joint offsets (mm) at normalized time tau in [0, 1]."""
    offsets = np.zeros((5, 3))
    if label == "dribble":
        bounce = abs(math.sin(2.0 * math.pi * (2.0 * tau + phase)))
        offsets[1, 1] = -380.0 * amp * bounce  # both hands pump downward
        offsets[2, 1] = -380.0 * amp * bounce
    elif label == "shoot":
        rise = (max(tau + phase, 0.0)) ** 1.5
        offsets[1, 1] = 540.0 * amp * rise
        offsets[2, 1] = 540.0 * amp * rise
        offsets[1, 0] = 150.0 * amp * rise  # hands come together overhead
        offsets[2, 0] = -150.0 * amp * rise
        offsets[0, 1] = 60.0 * amp * rise
    elif label == "pass":
        spread = math.sin(math.pi * (tau + phase))
        offsets[1, 0] = -440.0 * amp * spread  # hands spread apart and return
        offsets[2, 0] = 440.0 * amp * spread
        offsets[1, 1] = 80.0 * amp * spread
        offsets[2, 1] = 80.0 * amp * spread
    elif label == "jump":
        lift = math.sin(math.pi * (tau + phase))
        offsets[:, 1] += 430.0 * amp * lift  # whole body rises and lands
    else:
        raise ValueError(f"unknown label {label!r}")
    return offsets


def _view_rotation(view_id: int) -> np.ndarray:
    theta = math.radians(_VIEW_ANGLES_DEG[view_id])
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _ball_position(label: str, tau: float, amp: float) -> np.ndarray | None:
    """World-space ball center per class; a jump carries no ball."""
    if label == "dribble":
        bounce = abs(math.sin(2.0 * math.pi * 2.0 * tau))
        return np.array([0.0, 400.0 - 360.0 * amp * bounce, 80.0])
    if label == "shoot":
        rise = tau**1.5
        return np.array([0.0, 560.0 + 840.0 * amp * rise, 60.0])
    if label == "pass":
        spread = math.sin(math.pi * tau)
        return np.array([0.0, 520.0 + 90.0 * spread, 60.0 + 500.0 * amp * spread])
    return None


def render_pose(
    pose: SkeletonPose, height: int, width: int, ball_mm: np.ndarray | None = None
) -> np.ndarray:
    """Orthographic render: Gaussian blob per joint (and ball) on an [H, W] frame."""
    mm_per_px = 1600.0 / min(height, width)
    frame = np.zeros((height, width))
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    points = [(x, y, 1.0, 1.3) for x, y, _ in pose.joints]
    if ball_mm is not None:
        points.append((ball_mm[0], ball_mm[1], 1.4, 1.6))
    for x, y, gain, sigma in points:
        px = (width - 1) / 2.0 + x / mm_per_px
        py = (height - 1) * 0.92 - y / mm_per_px
        frame += gain * np.exp(-((rows - py) ** 2 + (cols - px) ** 2) / (2.0 * sigma**2))
    return np.clip(frame, 0.0, 1.0)


def _make_sample(
    config: DatasetConfig, subject_id: int, view_id: int, label: str, rng: Rng
) -> SyntheticAction:
    build = 0.85 + 0.03 * (subject_id - 1)
    amp = 1.0 + 0.12 * (rng.uniform() - 0.5)
    phase = 0.08 * (rng.uniform() - 0.5)
    rot = _view_rotation(view_id)
    poses = []
    frames = np.empty((1, config.frames, config.height, config.width))
    for t in range(config.frames):
        tau = t / (config.frames - 1)
        world = build * (_BASE_JOINTS_MM + _motion_template(label, tau, amp, phase))
        camera = world @ rot.T
        pose = SkeletonPose(joints=camera)
        poses.append(pose)
        ball = _ball_position(label, tau, amp)
        ball_cam = build * ball @ rot.T if ball is not None else None
        frame = render_pose(pose, config.height, config.width, ball_mm=ball_cam)
        if config.noise > 0:
            frame = frame + config.noise * rng.normals(frame.size).reshape(frame.shape)
        frames[0, t] = np.clip(frame, 0.0, 1.0)
    return SyntheticAction(
        clip=frames, poses=poses, subject_id=subject_id, view_id=view_id, label=label
    )


def generate_synthetic_dataset(config: DatasetConfig, seed: int) -> list[SyntheticAction]:
    """Balanced subjects x views x classes x repetitions samples, fully seeded."""
    samples = []
    for subject_id in SUBJECT_IDS:
        for view_id in VIEW_IDS:
            for label in ACTION_LABELS:
                for rep in range(config.repetitions):
                    rng = Rng(derive_seed(seed, "sample", subject_id, view_id, label, rep))
                    samples.append(_make_sample(config, subject_id, view_id, label, rng))
    return samples


def pose_bounding_box(
    pose: SkeletonPose, height: int, width: int, margin_px: float = 1.5
) -> tuple[float, float, float, float]:
    """(cx, cy, w, h) of the tight pixel box around the rendered joints."""
    mm_per_px = 1600.0 / min(height, width)
    px = (width - 1) / 2.0 + pose.joints[:, 0] / mm_per_px
    py = (height - 1) * 0.92 - pose.joints[:, 1] / mm_per_px
    x0 = max(px.min() - margin_px, 0.0)
    x1 = min(px.max() + margin_px, float(width))
    y0 = max(py.min() - margin_px, 0.0)
    y1 = min(py.max() + margin_px, float(height))
    return ((x0 + x1) / 2.0, (y0 + y1) / 2.0, max(x1 - x0, 1.0), max(y1 - y0, 1.0))


def horizontal_flip(clip: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(as_tensor(clip)[..., ::-1])


def rotate_frames(clip: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate every frame about its center, nearest-neighbor, zeros outside."""
    clip = as_tensor(clip)
    if angle_deg == 0.0:
        return clip.copy()
    c, t, h, w = clip.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows = np.arange(h)[:, None] - cy
    cols = np.arange(w)[None, :] - cx
    src_r = np.rint(cos_t * rows + sin_t * cols + cy).astype(int)
    src_c = np.rint(-sin_t * rows + cos_t * cols + cx).astype(int)
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    src_r_safe = np.clip(src_r, 0, h - 1)
    src_c_safe = np.clip(src_c, 0, w - 1)
    out = np.zeros_like(clip)
    for ci in range(c):
        for ti in range(t):
            plane = clip[ci, ti][src_r_safe, src_c_safe]
            out[ci, ti] = np.where(valid, plane, 0.0)
    return out


def random_crop(clip: np.ndarray, crop_hw: tuple[int, int], rng: Rng) -> np.ndarray:
    clip = as_tensor(clip)
    _, _, h, w = clip.shape
    ch, cw = crop_hw
    if ch > h or cw > w:
        raise ValueError(f"crop {crop_hw} larger than clip frames {h}x{w}")
    r0 = rng.below(h - ch + 1)
    c0 = rng.below(w - cw + 1)
    return np.ascontiguousarray(clip[:, :, r0 : r0 + ch, c0 : c0 + cw])


def augment(
    clip: np.ndarray,
    seed: int,
    crop_hw: tuple[int, int] = DEFAULT_CROP_HW,
    flip_prob: float = 0.5,
    max_rotation_deg: float = 15.0,
) -> np.ndarray:
    """Seeded crop, coin-flip horizontal mirror, and rotation within the limit."""
    rng = Rng(seed)
    out = random_crop(clip, crop_hw, rng)
    if rng.uniform() < flip_prob:
        out = horizontal_flip(out)
    angle = (2.0 * rng.uniform() - 1.0) * max_rotation_deg
    return rotate_frames(out, angle)

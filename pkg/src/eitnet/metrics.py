"""Pose-error metrics, classification accuracy, and evaluation splits.

MPJPE is the mean Euclidean joint distance over all joints and frames.
PA-MPJPE removes the best-fit similarity transform first: the transform
minimizing sum_i ||p_i - s R phat_i - t||^2 comes from centering both sets,
taking the orthogonal factor of the cross-covariance (with the smallest
singular direction flipped when the determinant would be negative), the
trace-ratio scale, and the centroid-difference translation.  Sequences are
aligned frame by frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import Rng, derive_seed

SUBJECT_IDS = tuple(range(1, 11))
VIEW_IDS = tuple(range(1, 6))
SPLIT_SIZES = {"subject": (6, 4), "view": (3, 2)}


@dataclass
class SkeletonPose:
    """N joint positions in millimeters, rows of (x, y, z)."""

    joints: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ValueError(f"joints must be [N, 3], got {self.joints.shape}")
        if self.joints.shape[0] < 1:
            raise ValueError("pose needs at least one joint")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("joint coordinates must be finite")

    @property
    def count(self) -> int:
        return self.joints.shape[0]


@dataclass
class SimilarityTransform:
    """x -> s * R @ x + t with R a proper rotation."""

    s: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.s <= 0:
            raise ValueError(f"scale must be positive, got {self.s}")
        if self.R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.R.shape}")
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1")

    def apply(self, pose: SkeletonPose) -> SkeletonPose:
        return SkeletonPose(joints=self.s * pose.joints @ self.R.T + self.t)


PoseLike = SkeletonPose | Sequence[SkeletonPose]


def _as_sequence(poses: PoseLike) -> list[SkeletonPose]:
    if isinstance(poses, SkeletonPose):
        return [poses]
    seq = list(poses)
    if not seq:
        raise ValueError("pose sequence is empty")
    return seq


def _paired(pred: PoseLike, truth: PoseLike) -> list[tuple[SkeletonPose, SkeletonPose]]:
    p, t = _as_sequence(pred), _as_sequence(truth)
    if len(p) != len(t):
        raise ValueError(f"sequence lengths differ: {len(p)} vs {len(t)}")
    for a, b in zip(p, t):
        if a.count != b.count:
            raise ValueError(f"joint counts differ: {a.count} vs {b.count}")
    return list(zip(p, t))


def mpjpe(pred: PoseLike, truth: PoseLike) -> float:
    """Mean Euclidean distance between corresponding joints, in millimeters."""
    total = 0.0
    count = 0
    for p, t in _paired(pred, truth):
        total += np.linalg.norm(p.joints - t.joints, axis=1).sum()
        count += p.count
    return total / count


def _check_nondegenerate(name: str, centered: np.ndarray) -> None:
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] < 1e-12 or sv[1] < 1e-9 * sv[0]:
        raise ValueError(f"{name} joints are coincident or collinear")


def procrustes_align(pred: SkeletonPose, truth: SkeletonPose) -> SimilarityTransform:
    """Similarity transform minimizing the summed squared residual to the truth."""
    if pred.count != truth.count:
        raise ValueError(f"joint counts differ: {pred.count} vs {truth.count}")
    if pred.count < 3:
        raise ValueError("alignment needs at least 3 joints")
    x = pred.joints
    y = truth.joints
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    _check_nondegenerate("predicted", xc)
    _check_nondegenerate("ground-truth", yc)
    cov = yc.T @ xc / pred.count
    u, d, vt = np.linalg.svd(cov)
    flip = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        flip[2, 2] = -1.0
    rot = u @ flip @ vt
    var_x = (xc**2).sum() / pred.count
    scale = float(np.trace(np.diag(d) @ flip) / var_x)
    trans = mu_y - scale * rot @ mu_x
    return SimilarityTransform(s=scale, R=rot, t=trans)


def pa_mpjpe(pred: PoseLike, truth: PoseLike) -> float:
    """Mean joint error after per-frame Procrustes alignment of pred onto truth."""
    total = 0.0
    count = 0
    for p, t in _paired(pred, truth):
        aligned = procrustes_align(p, t).apply(p)
        total += np.linalg.norm(aligned.joints - t.joints, axis=1).sum()
        count += p.count
    return total / count


def accuracy(predictions: Sequence, truths: Sequence) -> float:
    """Percentage of matching labels."""
    if len(predictions) != len(truths):
        raise ValueError(f"label counts differ: {len(predictions)} vs {len(truths)}")
    if len(predictions) == 0:
        raise ValueError("accuracy needs at least one prediction")
    correct = sum(1 for p, t in zip(predictions, truths) if p == t)
    return 100.0 * correct / len(predictions)


@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    axis: str
    seed: int

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test ids overlap")


def make_split(axis: str, seed: int) -> SplitPlan:
    """Seeded shuffle then prefix split: subjects 6/4, views 3/2."""
    if axis == "subject":
        universe = list(SUBJECT_IDS)
    elif axis == "view":
        universe = list(VIEW_IDS)
    else:
        raise ValueError(f"axis must be 'subject' or 'view', got {axis!r}")
    n_train, _ = SPLIT_SIZES[axis]
    ids = list(universe)
    Rng(derive_seed(seed, "split", axis)).shuffle(ids)
    return SplitPlan(
        train_ids=tuple(sorted(ids[:n_train])),
        test_ids=tuple(sorted(ids[n_train:])),
        axis=axis,
        seed=seed,
    )

"""File formats: seeded CSV reports, camera config text, dataset directories.

Every CSV starts with ``#``-prefixed comment lines (the root seed first),
then a header row, then data rows, and ends with a trailing newline.  Camera
configs are plain text, one camera per line of space-separated key=value
pairs (id, period_us, offset_us, jitter_us, drop_prob).  A dataset directory
holds clips and pose sequences as tensor binaries plus a manifest CSV.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .metrics import SkeletonPose
from .stream import CameraSpec
from .synthetic import SyntheticAction
from .tensorops import load_tensor, save_tensor

MANIFEST_HEADER = "sample_id,subject_id,view_id,label,clip_path,pose_path"


def csv_text(header: str, rows, seed: int | None = None, comments: tuple[str, ...] = ()) -> str:
    lines = []
    if seed is not None:
        lines.append(f"# seed={seed}")
    lines.extend(f"# {c}" for c in comments)
    lines.append(header)
    lines.extend(rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header: str, rows, seed: int | None = None, comments=()) -> None:
    Path(path).write_text(csv_text(header, rows, seed=seed, comments=comments))


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    """Returns (comment lines without '#', data rows split on commas)."""
    comments, rows = [], []
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            rows.append(line.split(","))
    return comments, rows


def parse_camera_config(text: str) -> list[CameraSpec]:
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = {}
        for token in line.split():
            if "=" not in token:
                raise ValueError(f"line {lineno}: expected key=value, got {token!r}")
            key, value = token.split("=", 1)
            fields[key] = value
        try:
            specs.append(
                CameraSpec(
                    camera_id=int(fields["id"]),
                    frame_period_us=int(fields["period_us"]),
                    clock_offset_us=int(fields.get("offset_us", "0")),
                    jitter_std_us=float(fields.get("jitter_us", "0")),
                    drop_probability=float(fields.get("drop_prob", "0")),
                )
            )
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc.args[0]}") from exc
    if not specs:
        raise ValueError("camera config defines no cameras")
    return specs


def camera_config_text(specs: list[CameraSpec]) -> str:
    lines = [
        f"id={s.camera_id} period_us={s.frame_period_us} offset_us={s.clock_offset_us} "
        f"jitter_us={s.jitter_std_us!r} drop_prob={s.drop_probability!r}"
        for s in specs
    ]
    return "\n".join(lines) + "\n"


def save_dataset(directory, samples: list[SyntheticAction], seed: int) -> None:
    root = Path(directory)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    (root / "poses").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, sample in enumerate(samples):
        clip_rel = f"clips/sample_{i:04d}.bin"
        pose_rel = f"poses/sample_{i:04d}.bin"
        save_tensor(root / clip_rel, sample.clip)
        stacked = np.stack([p.joints for p in sample.poses])
        save_tensor(root / pose_rel, stacked)
        rows.append(
            f"{i},{sample.subject_id},{sample.view_id},{sample.label},{clip_rel},{pose_rel}"
        )
    write_csv(root / "manifest.csv", MANIFEST_HEADER, rows, seed=seed)


def load_dataset(directory) -> list[SyntheticAction]:
    root = Path(directory)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    _, rows = read_csv_rows(manifest)
    if rows and rows[0] == MANIFEST_HEADER.split(","):
        rows = rows[1:]
    samples = []
    for row in rows:
        _, subject_id, view_id, label, clip_rel, pose_rel = row
        clip = load_tensor(root / clip_rel)
        stacked = load_tensor(root / pose_rel)
        poses = [SkeletonPose(joints=stacked[t]) for t in range(stacked.shape[0])]
        samples.append(
            SyntheticAction(
                clip=clip,
                poses=poses,
                subject_id=int(subject_id),
                view_id=int(view_id),
                label=label,
            )
        )
    return samples


def default_out_dir(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get("EITNET_OUT")
    return Path(env) if env else Path("eitnet-out")

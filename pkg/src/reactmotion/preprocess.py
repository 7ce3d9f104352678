"""Raw keypoint tracks to standardized training clips.

Order of operations for a lifted 3D track: gap interpolation and splitting,
retargeting to the reference bone lengths, then pelvis normalization.
Rounding to six significant digits happens only when a clip is written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .skeleton import (
    NUM_JOINTS,
    PELVIS,
    MotionClip,
    PairedClip,
    PoseFrame,
    SkeletonTopology,
)

PELVIS_TARGET = np.array([0.0, 1.0, 0.0])

# A bone whose length already matches the reference this closely is left
# untouched, which makes retargeting exactly idempotent.
_RETARGET_FIXED_POINT_RTOL = 1e-9
_ZERO_BONE = 1e-12


@dataclass(frozen=True)
class GapPolicy:
    max_gap: int = 3
    min_clip_len: int = 30

    def __post_init__(self):
        if self.max_gap < 0:
            raise ValidationError("max_gap must be >= 0")
        if self.min_clip_len < 1:
            raise ValidationError("min_clip_len must be >= 1")


@dataclass(frozen=True)
class SparseTrack:
    """One person's keypoints with possibly missing frames.

    ``frames`` maps frame index to a (17, d) array; d is 2 for pixel tracks
    from the 2D estimator and 3 for lifted tracks.
    """

    person_id: int
    frames: Mapping[int, np.ndarray]

    @property
    def dim(self) -> int | None:
        for v in self.frames.values():
            return np.shape(v)[-1]
        return None


# The 2D estimator output.
Keypoint2DTrack = SparseTrack


@dataclass(frozen=True, eq=False)
class DenseSegment:
    person_id: int
    start_index: int
    coords: np.ndarray

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def frame_indices(self) -> range:
        return range(self.start_index, self.start_index + len(self))

    def to_clip(self, fps=Fraction(50)) -> MotionClip:
        return MotionClip(self.coords, self.person_id, self.start_index, fps)


def check_pixel_bounds(track: SparseTrack, width: float = 1920, height: float = 1080) -> None:
    for t, p in track.frames.items():
        p = np.asarray(p)
        if np.any(p[..., 0] < 0) or np.any(p[..., 0] > width) or np.any(p[..., 1] < 0) or np.any(p[..., 1] > height):
            raise ValidationError(f"frame {t}: keypoint outside the {width}x{height} image")


def interpolate_gaps(track: SparseTrack, policy: GapPolicy = GapPolicy()) -> list[DenseSegment]:
    """Fill short gaps linearly and split the track at long ones.

    A gap of up to ``policy.max_gap`` missing frames between present frames
    t0 and t1 is filled with ``(1 - a) * p[t0] + a * p[t1]``,
    ``a = (t - t0) / (t1 - t0)``. Longer gaps end the current segment.
    Segments shorter than ``policy.min_clip_len`` are dropped.
    """
    if not track.frames:
        return []
    indices = sorted(track.frames)
    if indices[0] < 0:
        raise ValidationError("frame indices must be non-negative")
    first = np.asarray(track.frames[indices[0]], dtype=np.float64)
    shape = first.shape
    if len(shape) != 2 or shape[0] != NUM_JOINTS:
        raise ShapeError(f"expected (17, d) keypoints, got {shape}")
    if not np.all(np.isfinite(first)):
        raise ValidationError(f"frame {indices[0]}: non-finite keypoints")

    runs: list[tuple[int, list[np.ndarray]]] = []
    start, rows = indices[0], [first]
    prev_t, prev_p = indices[0], first
    for t in indices[1:]:
        p = np.asarray(track.frames[t], dtype=np.float64)
        if p.shape != shape:
            raise ShapeError(f"frame {t}: shape {p.shape} differs from {shape}")
        if not np.all(np.isfinite(p)):
            raise ValidationError(f"frame {t}: non-finite keypoints")
        missing = t - prev_t - 1
        if missing > policy.max_gap:
            runs.append((start, rows))
            start, rows = t, []
        else:
            span = t - prev_t
            for k in range(1, span):
                alpha = k / span
                rows.append((1.0 - alpha) * prev_p + alpha * p)
        rows.append(p)
        prev_t, prev_p = t, p
    runs.append((start, rows))

    return [
        DenseSegment(track.person_id, s, np.stack(r))
        for s, r in runs
        if len(r) >= policy.min_clip_len
    ]


# Table of direct copies, H36M index -> COCO index.
_COCO_DIRECT = {1: 12, 2: 14, 3: 16, 4: 11, 5: 13, 6: 15, 9: 0, 11: 5, 12: 7, 13: 9, 14: 6, 15: 8, 16: 10}


def map_coco_to_h36m(coco: np.ndarray) -> np.ndarray:
    """Convert COCO-17 keypoints (..., 17, d) to Human3.6M-17 order.

    Composite joints: pelvis is the hip midpoint, neck the shoulder midpoint,
    spine the pelvis/neck midpoint, and the head top is the neck reflected
    through the nose (``2 * nose - neck``).
    """
    c = np.asarray(coco, dtype=np.float64)
    if c.ndim < 2 or c.shape[-2] != 17:
        raise ShapeError(f"expected (..., 17, d) COCO keypoints, got {c.shape}")
    h = np.empty_like(c)
    for hi, ci in _COCO_DIRECT.items():
        h[..., hi, :] = c[..., ci, :]
    pelvis = (c[..., 11, :] + c[..., 12, :]) / 2
    neck = (c[..., 5, :] + c[..., 6, :]) / 2
    h[..., 0, :] = pelvis
    h[..., 7, :] = (pelvis + neck) / 2
    h[..., 8, :] = neck
    h[..., 10, :] = 2 * c[..., 0, :] - neck
    return h


def map_segment_to_h36m(seg: DenseSegment) -> DenseSegment:
    return DenseSegment(seg.person_id, seg.start_index, map_coco_to_h36m(seg.coords))


def retarget_joints(
    joints: np.ndarray,
    topo: SkeletonTopology,
    fallback_dirs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Rescale every bone to its reference length, keeping bone directions.

    Returns the new (17, 3) joints and the per-joint unit directions used
    (row ``j`` is the direction of the bone ending at ``j``). A zero-length
    bone takes its direction from ``fallback_dirs`` (the previous frame of
    the same clip) or +y when there is none.
    """
    src = np.asarray(joints, dtype=np.float64)
    if src.shape != (topo.joint_set.count, 3):
        raise ShapeError(f"expected (17, 3) joints, got {src.shape}")
    out = src.copy()
    dirs = np.zeros_like(src)
    ref = topo.reference_bone_lengths
    for j in topo.traversal_order():
        p = topo.parent[j]
        if p < 0:
            continue
        bone = src[j] - src[p]
        length = math.sqrt(float(bone @ bone))
        target = ref[j]
        if length > _ZERO_BONE:
            unit = bone / length
        elif fallback_dirs is not None and np.any(fallback_dirs[j]):
            unit = fallback_dirs[j]
        else:
            unit = np.array([0.0, 1.0, 0.0])
        dirs[j] = unit
        if abs(length - target) <= _RETARGET_FIXED_POINT_RTOL * target and np.array_equal(out[p], src[p]):
            continue
        out[j] = out[p] + target * unit
    return out, dirs


def retarget_frame(frame: PoseFrame, topo: SkeletonTopology, fallback_dirs: np.ndarray | None = None) -> PoseFrame:
    joints, _ = retarget_joints(frame.joints, topo, fallback_dirs)
    return frame.replace(joints=joints)


def retarget_clip(clip: MotionClip, topo: SkeletonTopology) -> MotionClip:
    out = np.empty_like(clip.joints)
    dirs = None
    for i in range(len(clip)):
        out[i], dirs = retarget_joints(clip.joints[i], topo, dirs)
    return MotionClip(out, clip.person_id, clip.start_index, clip.fps)


def normalize_joints(joints: np.ndarray) -> np.ndarray:
    """Translate (..., 17, 3) joints so the pelvis sits at (0, 1, 0)."""
    j = np.asarray(joints, dtype=np.float64)
    pelvis = j[..., PELVIS : PELVIS + 1, :]
    if np.all(pelvis == PELVIS_TARGET):
        return j.copy()
    return (j - pelvis) + PELVIS_TARGET


def normalize_frame(frame: PoseFrame) -> PoseFrame:
    return frame.replace(joints=normalize_joints(frame.joints))


def normalize_clip(clip: MotionClip) -> MotionClip:
    return MotionClip(normalize_joints(clip.joints), clip.person_id, clip.start_index, clip.fps)


def standardize_clip(clip: MotionClip, topo: SkeletonTopology) -> MotionClip:
    """Retarget then pelvis-normalize every frame."""
    return normalize_clip(retarget_clip(clip, topo))


def round_for_storage(value):
    """Round to six significant digits (scalar or array)."""
    if np.ndim(value) == 0:
        return float(f"{float(value):.6g}")
    return np.vectorize(lambda v: float(f"{v:.6g}"), otypes=[np.float64])(value)


def pair_segments(
    seg0: Sequence[DenseSegment],
    seg1: Sequence[DenseSegment],
    min_len: int = 30,
    fps=Fraction(50),
) -> list[PairedClip]:
    """Overlap the dense 3D segments of two fighters into aligned pairs."""
    pairs = []
    for a in seg0:
        for b in seg1:
            lo = max(a.start_index, b.start_index)
            hi = min(a.start_index + len(a), b.start_index + len(b))
            if hi - lo < min_len:
                continue
            xa = a.coords[lo - a.start_index : hi - a.start_index]
            xb = b.coords[lo - b.start_index : hi - b.start_index]
            pairs.append(PairedClip(MotionClip(xa, 0, lo, fps), MotionClip(xb, 1, lo, fps)))
    return pairs


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """One supervised window.

    x_ctx, y_ctx: (30, 51); past: (10, 102) = last 10 rows of x_ctx|y_ctx;
    target: (51,) counterpart frame right after the context.
    """

    x_ctx: np.ndarray
    y_ctx: np.ndarray
    past: np.ndarray
    target: np.ndarray
    anchor: int = 0


def build_samples(
    pair: PairedClip,
    ctx_len: int = 30,
    past_len: int = 10,
    stride: int = 1,
) -> list[TrainingSample]:
    if past_len > ctx_len:
        raise ValidationError("past window cannot exceed the context window")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    x = pair.subject.features
    y = pair.counterpart.features
    xy = np.concatenate([x, y], axis=1)
    samples = []
    for t in range(ctx_len, len(pair), stride):
        samples.append(
            TrainingSample(
                x_ctx=x[t - ctx_len : t],
                y_ctx=y[t - ctx_len : t],
                past=xy[t - past_len : t],
                target=y[t],
                anchor=pair.subject.start_index + t,
            )
        )
    return samples


def stack_samples(samples: Sequence[TrainingSample]) -> dict[str, np.ndarray]:
    return {
        "x_ctx": np.stack([s.x_ctx for s in samples]).astype(np.float32),
        "y_ctx": np.stack([s.y_ctx for s in samples]).astype(np.float32),
        "past": np.stack([s.past for s in samples]).astype(np.float32),
        "target": np.stack([s.target for s in samples]).astype(np.float32),
    }


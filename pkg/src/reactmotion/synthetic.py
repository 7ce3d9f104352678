"""Synthetic paired motion for tests and the evaluation harness.

The subject is a smooth forward-kinematics animation of the reference
skeleton; the counterpart is the subject mirrored (x and z negated) and
delayed by one frame, so the ideal next-frame predictor is known in closed
form: ``counterpart[t] = mirror(subject[t - 1])``.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .preprocess import standardize_clip
from .skeleton import MotionClip, PairedClip, SkeletonTopology, default_topology, mirror_joints

# rest directions of the bone ending at each joint (y up, facing +z)
_REST_DIRS = {
    1: (-1.0, 0.0, 0.0),
    2: (0.0, -1.0, 0.1),
    3: (0.0, -1.0, -0.1),
    4: (1.0, 0.0, 0.0),
    5: (0.0, -1.0, 0.1),
    6: (0.0, -1.0, -0.1),
    7: (0.0, 1.0, 0.0),
    8: (0.0, 1.0, 0.05),
    9: (0.0, 0.4, 1.0),
    10: (0.0, 1.0, 0.3),
    11: (1.0, -0.1, 0.0),
    12: (0.3, -0.6, 0.7),
    13: (-0.2, 0.6, 0.8),
    14: (-1.0, -0.1, 0.0),
    15: (-0.3, -0.6, 0.7),
    16: (0.2, 0.6, 0.8),
}


def subject_motion(
    n_frames: int,
    topo: SkeletonTopology | None = None,
    seed: int = 0,
    fps: float = 50.0,
    amplitude: float = 0.35,
) -> np.ndarray:
    """(n_frames, 17, 3) joints at exact reference bone lengths."""
    topo = topo or default_topology()
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames)[:, None] / fps
    out = np.zeros((n_frames, 17, 3))
    sway = 0.05 * np.sin(2 * np.pi * 0.4 * t + rng.uniform(0, 2 * np.pi, 3))
    out[:, 0] = np.array([0.0, 1.0, 0.0]) + sway
    for j in topo.traversal_order():
        p = topo.parent[j]
        if p < 0:
            continue
        freq = rng.uniform(0.3, 1.2)
        phase = rng.uniform(0, 2 * np.pi, 3)
        wobble = amplitude * np.sin(2 * np.pi * freq * t + phase)
        d = np.asarray(_REST_DIRS[j]) + wobble
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out[:, j] = out[:, p] + topo.reference_bone_lengths[j] * d
    return out


def mirrored_delay_pair(
    n_frames: int = 200,
    topo: SkeletonTopology | None = None,
    seed: int = 0,
    start_index: int = 0,
    fps=Fraction(50),
) -> PairedClip:
    """Subject clip plus its one-frame-delayed mirror, both standardized."""
    topo = topo or default_topology()
    raw = subject_motion(n_frames + 1, topo, seed, float(fps))
    subj = standardize_clip(MotionClip(raw, 0, start_index, fps), topo)
    x = subj.joints
    subject = MotionClip(x[1:], 0, start_index, fps)
    counterpart = MotionClip(mirror_joints(x[:-1]), 1, start_index, fps)
    return PairedClip(subject, counterpart)


def synthetic_corpus(n_pairs: int = 4, n_frames: int = 200, topo: SkeletonTopology | None = None, seed: int = 0):
    return [mirrored_delay_pair(n_frames, topo, seed + k) for k in range(n_pairs)]


def analytic_counterpart(subject_joints: np.ndarray) -> np.ndarray:
    """Ideal counterpart for frames 1..T-1 of a subject array (T, 17, 3)."""
    return mirror_joints(np.asarray(subject_joints)[:-1])

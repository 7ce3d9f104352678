"""Closed-loop counterpart generation.

A session keeps 30-frame windows for both fighters. Each step predicts the
counterpart's next frame from the current windows, then pushes the new
subject frame and the prediction. Generated frames go back into the window
exactly as the model produced them (no retargeting), so drift is visible.
"""

from __future__ import annotations

import copy
import enum
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import torch

from .errors import DivergenceError, ValidationError
from .models import MotionModel
from .skeleton import (
    MotionClip,
    PairedClip,
    PoseFrame,
    SkeletonTopology,
    bone_lengths,
    default_topology,
    mirror_joints,
)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT_M = 100.0
BONE_TOLERANCE = 0.01


class Mode(str, enum.Enum):
    OFFLINE = "offline"
    STREAM = "stream"


class Source(str, enum.Enum):
    """Where a counterpart window frame came from."""

    MIRRORED = "mirrored-warmup"
    TEST_DATA = "test-warmup"
    GENERATED = "generated"


def validate_pose(joints: np.ndarray, topo: SkeletonTopology, tolerance: float = BONE_TOLERANCE, index=None) -> None:
    """Reject a frame whose bones are off the reference by more than ``tolerance``."""
    joints = np.asarray(joints, dtype=np.float64)
    if not np.all(np.isfinite(joints)):
        raise ValidationError(f"frame {index}: non-finite coordinates")
    ref = topo.bone_reference
    rel = np.abs(bone_lengths(joints, topo) - ref) / ref
    worst = float(rel.max())
    if worst > tolerance:
        raise ValidationError(
            f"frame {index}: bone length off reference by {worst:.1%} (limit {tolerance:.0%}); "
            "frames must be retargeted and normalized first"
        )


def _joints_of(frames) -> np.ndarray:
    if isinstance(frames, MotionClip):
        return frames.joints
    if isinstance(frames, np.ndarray):
        return frames.reshape(len(frames), 17, 3)
    return np.stack([f.joints for f in frames])


@dataclass
class GenerationSession:
    model: MotionModel
    topo: SkeletonTopology
    mode: Mode
    subject: deque
    counterpart: deque
    sources: deque
    ctx_len: int = 30
    past_len: int = 10
    next_index: int = 30
    frames_generated: int = 0
    validate: bool = True
    frozen: bool = False
    fps: Fraction = Fraction(50)
    latencies: list = field(default_factory=list)

    def past(self) -> np.ndarray:
        """(past_len, 102): the tail of both context windows side by side."""
        x = np.stack(self.subject)[-self.past_len :].reshape(self.past_len, -1)
        y = np.stack(self.counterpart)[-self.past_len :].reshape(self.past_len, -1)
        return np.concatenate([x, y], axis=1)

    def windows(self) -> tuple[np.ndarray, np.ndarray]:
        return np.stack(self.subject), np.stack(self.counterpart)

    def copy(self) -> "GenerationSession":
        """Independent windows and counters; the model is shared."""
        clone = copy.copy(self)
        clone.subject = deque(self.subject, maxlen=self.ctx_len)
        clone.counterpart = deque(self.counterpart, maxlen=self.ctx_len)
        clone.sources = deque(self.sources, maxlen=self.ctx_len)
        clone.latencies = list(self.latencies)
        return clone


def init_session(
    model: MotionModel,
    subject_warmup,
    counterpart_warmup=None,
    topo: SkeletonTopology | None = None,
    validate: bool = True,
    start_index: int | None = None,
) -> GenerationSession:
    """Fill both windows; without a counterpart warmup, mirror the subject's."""
    topo = topo or default_topology()
    ctx = model.cfg.ctx_len
    subj = _joints_of(subject_warmup)
    if len(subj) != ctx:
        raise ValidationError(f"need exactly {ctx} subject warmup frames, got {len(subj)}")
    if counterpart_warmup is None:
        mode, cp, src = Mode.STREAM, mirror_joints(subj), Source.MIRRORED
    else:
        cp = _joints_of(counterpart_warmup)
        if len(cp) != ctx:
            raise ValidationError(f"need exactly {ctx} counterpart warmup frames, got {len(cp)}")
        mode, src = Mode.OFFLINE, Source.TEST_DATA
    if validate:
        for k in range(ctx):
            validate_pose(subj[k], topo, index=k)
            validate_pose(cp[k], topo, index=k)
    if start_index is None:
        if isinstance(subject_warmup, MotionClip):
            start_index = subject_warmup.start_index
        elif isinstance(subject_warmup, Sequence) and subject_warmup and isinstance(subject_warmup[0], PoseFrame):
            start_index = subject_warmup[0].frame_index
        else:
            start_index = 0
    model.eval()
    return GenerationSession(
        model=model,
        topo=topo,
        mode=mode,
        subject=deque((np.array(f, dtype=np.float64) for f in subj), maxlen=ctx),
        counterpart=deque((np.array(f, dtype=np.float64) for f in cp), maxlen=ctx),
        sources=deque([src] * ctx, maxlen=ctx),
        ctx_len=ctx,
        past_len=model.cfg.past_len,
        next_index=start_index + ctx,
        validate=validate,
    )


def step(session: GenerationSession, next_subject_frame: PoseFrame | np.ndarray) -> PoseFrame:
    """Generate the counterpart frame paired with ``next_subject_frame``."""
    if session.frozen:
        raise DivergenceError("session is frozen after divergence", index=session.next_index)
    if isinstance(next_subject_frame, PoseFrame):
        joints, index = next_subject_frame.joints, next_subject_frame.frame_index
    else:
        joints, index = np.asarray(next_subject_frame, dtype=np.float64).reshape(17, 3), session.next_index
    if session.validate:
        validate_pose(joints, session.topo, index=index)

    x, y = session.windows()
    past = session.past()
    t0 = time.perf_counter()
    with torch.no_grad():
        pred = session.model(
            torch.from_numpy(x.reshape(1, session.ctx_len, -1)).float(),
            torch.from_numpy(y.reshape(1, session.ctx_len, -1)).float(),
            torch.from_numpy(past[None]).float(),
        )
    session.latencies.append(time.perf_counter() - t0)
    out = pred[0].double().numpy().reshape(17, 3)
    if not np.all(np.isfinite(out)) or np.abs(out).max() > DIVERGENCE_LIMIT_M:
        session.frozen = True
        raise DivergenceError(f"divergence at frame {index}", index=index)

    session.subject.append(np.array(joints, dtype=np.float64))
    session.counterpart.append(out)
    session.sources.append(Source.GENERATED)
    session.frames_generated += 1
    session.next_index = index + 1
    return PoseFrame(out, person_id=1, frame_index=index)


def _clip(frames: list[np.ndarray], person_id: int, start: int, fps) -> MotionClip:
    arr = np.stack(frames) if frames else np.zeros((0, 17, 3))
    return MotionClip(arr, person_id, start, fps)


def _rollout(session: GenerationSession, subject: MotionClip, first: int, horizon: int):
    generated, consumed = [], []
    start = subject.start_index + first
    for k in range(horizon):
        frame = subject[first + k]
        try:
            out = step(session, frame)
        except DivergenceError as exc:
            exc.partial = (_clip(generated, 1, start, subject.fps), _clip(consumed, 0, start, subject.fps))
            raise
        generated.append(out.joints)
        consumed.append(frame.joints)
    return _clip(generated, 1, start, subject.fps), _clip(consumed, 0, start, subject.fps)


def run_offline(
    model: MotionModel,
    test_pair: PairedClip,
    horizon: int,
    topo: SkeletonTopology | None = None,
    validate: bool = True,
) -> tuple[MotionClip, MotionClip]:
    """Warm up from the pair's first 30 frames of both fighters, then roll out.

    Returns (generated counterpart clip, consumed subject clip), both
    covering frames 30 .. 30 + horizon - 1 of the pair.
    """
    ctx = model.cfg.ctx_len
    if horizon < 0:
        raise ValidationError("horizon must be >= 0")
    if len(test_pair) < ctx + horizon:
        raise ValidationError(f"pair of {len(test_pair)} frames is too short for {ctx} + {horizon}")
    session = init_session(
        model, test_pair.subject.slice(0, ctx), test_pair.counterpart.slice(0, ctx), topo, validate
    )
    return _rollout(session, test_pair.subject, ctx, horizon)


def run_stream(
    model: MotionModel,
    subject: MotionClip,
    horizon: int,
    topo: SkeletonTopology | None = None,
    validate: bool = True,
) -> tuple[MotionClip, MotionClip]:
    """Offline replay of live-capture mode: mirrored warmup, no counterpart data."""
    ctx = model.cfg.ctx_len
    if len(subject) < ctx + horizon:
        raise ValidationError(f"subject clip of {len(subject)} frames is too short for {ctx} + {horizon}")
    session = init_session(model, subject.slice(0, ctx), None, topo, validate)
    return _rollout(session, subject, ctx, horizon)

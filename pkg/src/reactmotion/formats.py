"""Text file formats for clips and keypoint tracks.

Clip files hold standardized 3D motion, one frame per line::

    #reactmotion-clip v1 joint_set=H36M17 fps=50
    30,0,0,1,0,-0.12,...        (frame_index, person_id, 51 coordinates)

Coordinates are written with six significant digits. A file holding both
person ids loads as a PairedClip; a single person loads as a MotionClip.

Track files carry sparse per-person keypoints at full precision, either 2D
COCO-17 pixels from the estimator, the mapped H36M 2D input to the lifter,
or the lifted 3D result coming back::

    #reactmotion-track v1 joint_set=COCO17 dim=2
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ClipFormatError, ReactMotionError
from .preprocess import SparseTrack
from .skeleton import FEATS_PER_PERSON, NUM_JOINTS, JointSetName, MotionClip, PairedClip

CLIP_MAGIC = "#reactmotion-clip"
TRACK_MAGIC = "#reactmotion-track"
FORMAT_VERSION = "v1"


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _parse_header(line: str, magic: str, path) -> dict[str, str]:
    parts = line.strip().split()
    if not parts or parts[0] != magic:
        raise ClipFormatError(f"{path}: missing '{magic}' header")
    if len(parts) < 2 or parts[1] != FORMAT_VERSION:
        raise ClipFormatError(f"{path}: unsupported format version {parts[1:2]}")
    fields = {}
    for item in parts[2:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise ClipFormatError(f"{path}: bad header field {item!r}")
        fields[key] = value
    return fields


def _parse_rows(lines, n_values: int, path) -> list[tuple[int, int, np.ndarray]]:
    rows = []
    for lineno, line in enumerate(lines, start=2):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != 2 + n_values:
            raise ClipFormatError(f"{path}:{lineno}: expected {2 + n_values} fields, got {len(cells)}")
        try:
            frame, pid = int(cells[0]), int(cells[1])
            values = np.array([float(c) for c in cells[2:]])
        except ValueError as exc:
            raise ClipFormatError(f"{path}:{lineno}: {exc}") from exc
        if frame < 0 or pid not in (0, 1):
            raise ClipFormatError(f"{path}:{lineno}: bad frame index or person id")
        if not np.all(np.isfinite(values)):
            raise ClipFormatError(f"{path}:{lineno}: non-finite coordinate")
        rows.append((frame, pid, values))
    return rows


# -- clips ---------------------------------------------------------------------


def serialize_clip(clip: MotionClip | PairedClip) -> str:
    clips = [clip.subject, clip.counterpart] if isinstance(clip, PairedClip) else [clip]
    fps = clips[0].fps
    buf = io.StringIO()
    buf.write(f"{CLIP_MAGIC} {FORMAT_VERSION} joint_set={JointSetName.H36M17.value} fps={fps}\n")
    n = len(clips[0])
    for k in range(n):
        for c in clips:
            feats = c.features[k]
            buf.write(f"{c.start_index + k},{c.person_id}," + ",".join(_fmt(v) for v in feats) + "\n")
    return buf.getvalue()


def parse_clip(text: str, path="<string>") -> MotionClip | PairedClip:
    lines = text.splitlines()
    if not lines:
        raise ClipFormatError(f"{path}: empty file")
    header = _parse_header(lines[0], CLIP_MAGIC, path)
    if header.get("joint_set") != JointSetName.H36M17.value:
        raise ClipFormatError(f"{path}: clip files must use H36M17 joints")
    try:
        fps = Fraction(header.get("fps", "50"))
    except (ValueError, ZeroDivisionError) as exc:
        raise ClipFormatError(f"{path}: bad fps {header.get('fps')!r}") from exc
    rows = _parse_rows(lines[1:], FEATS_PER_PERSON, path)
    by_person: dict[int, list] = {}
    for frame, pid, values in rows:
        by_person.setdefault(pid, []).append((frame, values))
    clips = {}
    for pid, items in by_person.items():
        frames = [f for f, _ in items]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise ClipFormatError(f"{path}: person {pid} frame indices are not consecutive")
        arr = np.stack([v for _, v in items]).reshape(-1, NUM_JOINTS, 3)
        clips[pid] = MotionClip(arr, pid, frames[0], fps)
    try:
        if len(clips) == 2:
            return PairedClip(clips[0], clips[1])
        if len(clips) == 1:
            return next(iter(clips.values()))
    except ReactMotionError as exc:
        raise ClipFormatError(f"{path}: {exc}") from exc
    return MotionClip(np.zeros((0, NUM_JOINTS, 3)), 0, 0, fps)


def write_clip(clip: MotionClip | PairedClip, path: str | Path) -> None:
    try:
        Path(path).write_text(serialize_clip(clip))
    except OSError as exc:
        raise ClipFormatError(f"cannot write {path}: {exc}") from exc


def read_clip(path: str | Path) -> MotionClip | PairedClip:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ClipFormatError(f"cannot read {path}: {exc}") from exc
    return parse_clip(text, path)


def read_pair(path: str | Path) -> PairedClip:
    clip = read_clip(path)
    if not isinstance(clip, PairedClip):
        raise ClipFormatError(f"{path}: expected both fighters in the file")
    return clip


# -- sparse tracks ---------------------------------------------------------------


@dataclass(frozen=True)
class TrackFile:
    joint_set: JointSetName
    dim: int
    tracks: dict[int, SparseTrack]


def serialize_tracks(tracks: dict[int, SparseTrack] | list[SparseTrack], joint_set: JointSetName, dim: int) -> str:
    items = tracks.values() if isinstance(tracks, dict) else tracks
    buf = io.StringIO()
    buf.write(f"{TRACK_MAGIC} {FORMAT_VERSION} joint_set={JointSetName(joint_set).value} dim={dim}\n")
    for track in sorted(items, key=lambda t: t.person_id):
        for frame in sorted(track.frames):
            values = np.asarray(track.frames[frame], dtype=np.float64).reshape(-1)
            buf.write(f"{frame},{track.person_id}," + ",".join(repr(float(v)) for v in values) + "\n")
    return buf.getvalue()


def parse_tracks(text: str, path="<string>") -> TrackFile:
    lines = text.splitlines()
    if not lines:
        raise ClipFormatError(f"{path}: empty file")
    header = _parse_header(lines[0], TRACK_MAGIC, path)
    try:
        joint_set = JointSetName(header.get("joint_set"))
        dim = int(header.get("dim", ""))
    except ValueError as exc:
        raise ClipFormatError(f"{path}: bad track header") from exc
    if dim not in (2, 3):
        raise ClipFormatError(f"{path}: dim must be 2 or 3")
    frames: dict[int, dict[int, np.ndarray]] = {}
    for frame, pid, values in _parse_rows(lines[1:], NUM_JOINTS * dim, path):
        person = frames.setdefault(pid, {})
        if frame in person:
            raise ClipFormatError(f"{path}: duplicate frame {frame} for person {pid}")
        person[frame] = values.reshape(NUM_JOINTS, dim)
    return TrackFile(joint_set, dim, {pid: SparseTrack(pid, f) for pid, f in frames.items()})


def write_tracks(tracks, path: str | Path, joint_set: JointSetName, dim: int) -> None:
    try:
        Path(path).write_text(serialize_tracks(tracks, joint_set, dim))
    except OSError as exc:
        raise ClipFormatError(f"cannot write {path}: {exc}") from exc


def read_tracks(path: str | Path) -> TrackFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ClipFormatError(f"cannot read {path}: {exc}") from exc
    return parse_tracks(text, path)

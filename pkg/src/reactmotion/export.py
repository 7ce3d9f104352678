"""Side-by-side frame export: x-y line drawings plus one combined CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ClipFormatError, ValidationError
from .skeleton import H36M17_JOINTS, H36M17_PARENTS, MotionClip

CSV_NAME = "frames.csv"
SUBJECT_COLOR = (40, 90, 200)
GENERATED_COLOR = (210, 50, 40)

# Both fighters are pelvis-normalized, so they are drawn side by side.
_X_OFFSET = {0: -0.6, 1: 0.6}
_VIEW_X = (-1.5, 1.5)
_VIEW_Y = (-0.2, 2.4)


def _to_pixels(joints: np.ndarray, x_off: float, size: tuple[int, int]) -> list[tuple[float, float]]:
    w, h = size
    x = (joints[:, 0] + x_off - _VIEW_X[0]) / (_VIEW_X[1] - _VIEW_X[0]) * (w - 1)
    y = (1.0 - (joints[:, 1] - _VIEW_Y[0]) / (_VIEW_Y[1] - _VIEW_Y[0])) * (h - 1)
    return [(round(float(a), 2), round(float(b), 2)) for a, b in zip(x, y)]


def _draw(draw: ImageDraw.ImageDraw, joints: np.ndarray, x_off: float, color, size) -> None:
    pts = _to_pixels(joints, x_off, size)
    for j, p in enumerate(H36M17_PARENTS):
        if p >= 0:
            draw.line([pts[p], pts[j]], fill=color, width=2)
    for px, py in pts:
        draw.ellipse([px - 2, py - 2, px + 2, py + 2], fill=color)


def export_frames(
    subject: MotionClip,
    generated: MotionClip,
    out_dir: str | Path,
    size: tuple[int, int] = (320, 280),
) -> list[Path]:
    """Write ``frame_%06d.png`` per frame index and ``frames.csv``.

    The CSV has one row per fighter per frame: frame, person_id, then the 51
    coordinates. Its first line records the clips' frame rate. Output depends
    only on the inputs, so re-export is byte-identical.
    """
    if len(subject) != len(generated) or subject.start_index != generated.start_index:
        raise ValidationError("subject and generated clips must be aligned")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for k in range(len(subject)):
            img = Image.new("RGB", size, "white")
            draw = ImageDraw.Draw(img)
            _draw(draw, subject.joints[k], _X_OFFSET[0], SUBJECT_COLOR, size)
            _draw(draw, generated.joints[k], _X_OFFSET[1], GENERATED_COLOR, size)
            path = out / f"frame_{subject.start_index + k:06d}.png"
            img.save(path, format="PNG")
            written.append(path)
        with open(out / CSV_NAME, "w", newline="") as fh:
            fh.write(f"# fps={subject.fps}\n")
            w = csv.writer(fh, lineterminator="\n")
            cols = [f"{name}_{axis}" for name in H36M17_JOINTS for axis in "xyz"]
            w.writerow(["frame", "person_id", *cols])
            for k in range(len(subject)):
                for clip in (subject, generated):
                    w.writerow([clip.start_index + k, clip.person_id, *(f"{v:.6g}" for v in clip.features[k])])
        written.append(out / CSV_NAME)
    except OSError as exc:
        raise ClipFormatError(f"cannot export to {out}: {exc}") from exc
    return written
